"""Command-line interface: ingest, synth, search, train, eval, diff-arch,
inspect-arch.

Every value resolves as CLI flag > config file (--config, JSON key/value
document) > built-in default, and each artifact-producing command echoes
its effective configuration into the output directory. Exit codes:
0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .blocks import (
    ArchitectureSet,
    load_architecture,
    preset_set,
    save_architecture,
)
from .data import (
    Dataset,
    build_dataset,
    load_dataset_dir,
    parse_facts_file,
    split_stats,
    write_dataset_dir,
)
from .errors import DataError, NumericError
from .evaluation import evaluate, evaluate_with_timing
from .model import load_checkpoint, round_trip_float32, save_checkpoint
from .search import SearchConfig, save_theta, search_loop
from .synth import PlantedSpec, generate_planted, random_truth
from .training import TrainConfig, train_fixed

SPLITS = ("train", "valid", "test")

INGEST_DEFAULTS = {
    "holdout_fraction": 0.1,
    "seed": 0,
    "arity": None,
    "strict": True,
}

SYNTH_DEFAULTS = {
    "entities": 40,
    "relations": 2,
    "arities": "2",
    "dimension": 16,
    "segments": 2,
    "facts_per_arity": 2000,
    "margin": 1.0,
    "sigma": 1.0,
    "seed": 0,
    "max_draws": 10_000_000,
    "truth_arch": None,
    "nonzero_fraction": 0.4,
}

SEARCH_DEFAULTS = {
    "dimension": 64,
    "segments": 2,
    "lam": 2,
    "search_epochs": 10,
    "theta_lr": 1.0,
    "raw_utility": False,
    "utility_transform": "per-fact-ranked",
    "seed": 0,
    "learning_rate": 0.05,
    "decay_rate": 0.995,
    "batch_size": 128,
    "val_batch_size": 128,
    "holdout_fraction": 0.1,
    "tie_policy": "optimistic",
    "mode": "mixed-arity",
    "arity": None,
}

TRAIN_DEFAULTS = {
    "dimension": 64,
    "segments": 2,
    "learning_rate": 0.05,
    "decay_rate": 0.995,
    "batch_size": 128,
    "max_epochs": 100,
    "seed": 0,
    "mc_samples": 1,
    "patience": 10,
    "eval_every": 1,
    "holdout_fraction": 0.1,
    "tie_policy": "optimistic",
    "preset": None,
    "arch": None,
    "mode": "mixed-arity",
    "arity": None,
}


def _print_doc(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _write_doc(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    doc = json.loads(p.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise DataError(f"config file {p} must hold a key/value object")
    return doc


def _effective(args: argparse.Namespace, defaults: dict) -> dict:
    """flag > config file > default, for the keys this command understands."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    return out


def _filter_arity(dataset: Dataset, arity: int) -> Dataset:
    keep = lambda facts: [f for f in facts if f.arity == arity]
    train = keep(dataset.train)
    if not train:
        raise DataError(f"no arity-{arity} facts in the train split")
    return Dataset(dataset.vocabulary, train, keep(dataset.valid), keep(dataset.test))


def _apply_mode(dataset: Dataset, cfg: dict) -> Dataset:
    if cfg.get("mode") == "fixed-arity":
        if cfg.get("arity") is None:
            raise DataError("fixed-arity mode requires --arity")
        return _filter_arity(dataset, int(cfg["arity"]))
    return dataset


def _load_data(cfg: dict, path: str) -> Dataset:
    # ingest already enforced the vocabulary policy; loading trusts the dir
    return load_dataset_dir(
        path,
        valid_holdout_fraction=cfg.get("holdout_fraction", 0.1),
        seed=cfg.get("seed", 0),
        strict_vocabulary=False,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _effective(args, INGEST_DEFAULTS)
    raw_train = parse_facts_file(args.train)
    raw_valid = parse_facts_file(args.valid) if args.valid else None
    raw_test = parse_facts_file(args.test) if args.test else []
    if cfg["arity"] is not None:
        n = int(cfg["arity"])
        pick = lambda raw: [f for f in raw if len(f[1]) == n]
        raw_train = pick(raw_train)
        raw_valid = pick(raw_valid) if raw_valid is not None else None
        raw_test = pick(raw_test)
    dataset = build_dataset(
        raw_train,
        raw_valid,
        raw_test,
        valid_holdout_fraction=cfg["holdout_fraction"],
        seed=cfg["seed"],
        strict_vocabulary=cfg["strict"],
    )
    out = Path(args.out)
    write_dataset_dir(out, dataset)
    stats = split_stats(dataset)
    _write_doc(out / "stats.json", stats)
    _write_doc(out / "config.json", cfg)
    _print_doc(stats)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _effective(args, SYNTH_DEFAULTS)
    arities = tuple(int(a) for a in str(cfg["arities"]).split(","))
    if cfg["truth_arch"]:
        truth = load_architecture(cfg["truth_arch"])
    else:
        truth = random_truth(
            arities, cfg["segments"], cfg["seed"], nonzero_fraction=cfg["nonzero_fraction"]
        )
    spec = PlantedSpec(
        entity_count=cfg["entities"],
        relation_count=cfg["relations"],
        arities=arities,
        dimension=cfg["dimension"],
        segment_count=cfg["segments"],
        assignments=truth,
        facts_per_arity=cfg["facts_per_arity"],
        margin=cfg["margin"],
        seed=cfg["seed"],
        sigma=cfg["sigma"],
        max_draws=int(cfg["max_draws"]),
    )
    result = generate_planted(spec)
    out = Path(args.out)
    write_dataset_dir(out, result.dataset)
    save_architecture(out / "truth.json", result.truth)
    stats = split_stats(result.dataset)
    _write_doc(out / "stats.json", stats)
    _write_doc(out / "config.json", cfg)
    _print_doc(stats)
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    cfg = _effective(args, SEARCH_DEFAULTS)
    dataset = _apply_mode(_load_data(cfg, args.data), cfg)
    train_config = TrainConfig(
        dimension=cfg["dimension"],
        segment_count=cfg["segments"],
        learning_rate=cfg["learning_rate"],
        decay_rate=cfg["decay_rate"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
    )
    search_config = SearchConfig(
        lam=cfg["lam"],
        search_epochs=cfg["search_epochs"],
        val_batch_size=cfg["val_batch_size"],
        theta_lr=cfg["theta_lr"],
        seed=cfg["seed"],
        dimension=cfg["dimension"],
        raw_utility=bool(cfg["raw_utility"]),
        utility_transform=cfg["utility_transform"],
        tie_policy=cfg["tie_policy"],
    )
    start = time.perf_counter()
    result = search_loop(dataset, search_config, train_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_architecture(out / "architecture.json", result.architecture)
    save_theta(out / "theta.json", result.distribution)
    (out / "trace.jsonl").write_text(result.trace.to_jsonl(), encoding="utf-8")
    _write_doc(out / "config.json", cfg)
    summary = {
        "iterations": len(result.trace),
        "theta_entropy": result.distribution.entropy(),
        "wall_seconds": time.perf_counter() - start,
        "architecture_file": str(out / "architecture.json"),
        "ops": {
            str(n): result.architecture[n].op_counts()
            for n in result.architecture.arities()
        },
    }
    _print_doc(summary)
    return 0


def _resolve_architecture(cfg: dict, dataset: Dataset) -> ArchitectureSet:
    if cfg.get("arch") and cfg.get("preset"):
        raise DataError("give either --arch or --preset, not both")
    if cfg.get("arch"):
        return load_architecture(cfg["arch"])
    if cfg.get("preset"):
        return preset_set(cfg["preset"], max(dataset.max_arity, 2), cfg["segments"])
    raise DataError("training needs --arch FILE or --preset NAME")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _effective(args, TRAIN_DEFAULTS)
    dataset = _apply_mode(_load_data(cfg, args.data), cfg)
    architecture = _resolve_architecture(cfg, dataset)
    config = TrainConfig(
        dimension=cfg["dimension"],
        segment_count=cfg["segments"],
        learning_rate=cfg["learning_rate"],
        decay_rate=cfg["decay_rate"],
        batch_size=cfg["batch_size"],
        max_epochs=cfg["max_epochs"],
        seed=cfg["seed"],
        mc_samples=cfg["mc_samples"],
        patience=cfg["patience"],
        eval_every=cfg["eval_every"],
    )
    start = time.perf_counter()
    result = train_fixed(architecture, dataset, config, tie_policy=cfg["tie_policy"])
    out = Path(args.out)
    extra = {"wall_seconds": time.perf_counter() - start}
    # meta records the metrics of the float32 artifact actually on disk
    stored = round_trip_float32(result.embeddings)
    if dataset.valid:
        extra["final_valid_mrr"] = evaluate(
            stored, architecture, dataset, "valid", tie_policy=cfg["tie_policy"]
        ).mrr
    save_checkpoint(out, result.embeddings, architecture, config=cfg, extra_meta=extra)
    _write_doc(out / "config.json", cfg)
    _write_doc(
        out / "loss_history.json",
        {
            "epochs": [
                {"epoch": r.epoch, "mean_loss": r.mean_loss, "facts": r.facts}
                for r in result.history
            ],
            "valid_mrr": [{"epoch": e, "mrr": v} for e, v in result.valid_mrr_history],
        },
    )
    doc = {"checkpoint": str(out), "epochs": len(result.history)}
    doc.update({k: v for k, v in extra.items()})
    _print_doc(doc)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _effective(args, {"holdout_fraction": 0.1, "seed": 0, "tie_policy": "optimistic"})
    embeddings, architecture, _meta = load_checkpoint(args.checkpoint)
    dataset = _load_data(cfg, args.data)
    doc = evaluate_with_timing(
        embeddings, architecture, dataset, args.split, tie_policy=cfg["tie_policy"]
    )
    _print_doc(doc)
    if args.out:
        _write_doc(Path(args.out), doc)
    return 0


def cmd_diff_arch(args: argparse.Namespace) -> int:
    left = load_architecture(args.left)
    right = load_architecture(args.right)
    if left.segment_count != right.segment_count or left.max_arity != right.max_arity:
        raise DataError(
            "architectures are not comparable: "
            f"segments {left.segment_count} vs {right.segment_count}, "
            f"max arity {left.max_arity} vs {right.max_arity}"
        )
    doc: dict = {"arities": {}, "blocks_total": 0, "blocks_matched": 0}
    for n in left.arities():
        a, b = left[n].codes, right[n].codes
        matched = int(np.sum(a == b))
        doc["arities"][str(n)] = {"blocks": len(a), "matched": matched}
        doc["blocks_total"] += len(a)
        doc["blocks_matched"] += matched
    doc["match_fraction"] = doc["blocks_matched"] / doc["blocks_total"]
    _print_doc(doc)
    return 0


def cmd_inspect_arch(args: argparse.Namespace) -> int:
    architecture = load_architecture(args.arch)
    doc: dict = {
        "segment_count": architecture.segment_count,
        "max_arity": architecture.max_arity,
        "arities": {},
    }
    for n in architecture.arities():
        assignment = architecture[n]
        entry = {
            "blocks": assignment.block_total,
            "ops": {str(op): c for op, c in assignment.op_counts().items()},
        }
        if args.blocks:
            entry["nonzero"] = [
                {"index": list(idx), "code": code}
                for idx, code in assignment.nonzero_blocks()
            ]
        doc["arities"][str(n)] = entry
    _print_doc(doc)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="narytd",
        description="Block-sparse tensor decomposition for n-ary relational data",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse TSV fact files into a dataset directory")
    p.add_argument("--train", required=True, help="train TSV path")
    p.add_argument("--valid", help="valid TSV path (optional; a holdout is carved otherwise)")
    p.add_argument("--test", help="test TSV path")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--arity", type=int, help="keep only facts of this arity")
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--no-strict", dest="strict", action="store_const", const=False,
        help="allow entities/relations that never occur in train",
    )
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a planted synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--entities", type=int)
    p.add_argument("--relations", type=int)
    p.add_argument("--arities", help="comma-separated arities, e.g. 2,3")
    p.add_argument("--dim", dest="dimension", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--facts-per-arity", dest="facts_per_arity", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--sigma", type=float, help="embedding scale (default 1/sqrt(dim))")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-draws", dest="max_draws", type=int)
    p.add_argument("--truth-arch", dest="truth_arch", help="architecture file to plant")
    p.add_argument("--nonzero-fraction", dest="nonzero_fraction", type=float)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("search", help="search block codes on a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dim", dest="dimension", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--lambda", dest="lam", type=int, help="architecture samples per step")
    p.add_argument("--search-epochs", dest="search_epochs", type=int)
    p.add_argument("--theta-lr", dest="theta_lr", type=float)
    p.add_argument(
        "--raw-utility", dest="raw_utility", action="store_const", const=True,
        help="skip the ranked baseline transform of utilities",
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--decay-rate", dest="decay_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--val-batch-size", dest="val_batch_size", type=int)
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("optimistic", "pessimistic"))
    p.add_argument("--mode", choices=("fixed-arity", "mixed-arity"))
    p.add_argument("--arity", type=int, help="target arity for fixed-arity mode")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("train", help="train embeddings under a fixed architecture")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--arch", help="architecture file")
    p.add_argument("--preset", choices=("cp", "distmult", "complex", "simple"))
    p.add_argument("--dim", dest="dimension", type=int)
    p.add_argument("--segments", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--decay-rate", dest="decay_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", dest="max_epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("optimistic", "pessimistic"))
    p.add_argument("--mode", choices=("fixed-arity", "mixed-arity"))
    p.add_argument("--arity", type=int)
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--tie-policy", dest="tie_policy", choices=("optimistic", "pessimistic"))
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="also write the metrics document here")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("diff-arch", help="count matching blocks of two architecture files")
    p.add_argument("left")
    p.add_argument("right")
    p.set_defaults(func=cmd_diff_arch)

    p = sub.add_parser("inspect-arch", help="summarize an architecture file")
    p.add_argument("arch")
    p.add_argument("--blocks", action="store_true", help="list nonzero blocks")
    p.set_defaults(func=cmd_inspect_arch)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
