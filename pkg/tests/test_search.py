import numpy as np
import pytest

from narytd.blocks import ArchitectureSet, CoreAssignment, zero_assignment
from narytd.data import Dataset, Fact, Vocabulary, build_filter_index
from narytd.embeddings import SegmentedEmbeddings
from narytd.errors import DataError
from narytd.search import (
    ArchitectureDistribution,
    AsngState,
    SearchConfig,
    SufficientStatistic,
    asng_update,
    derive_final,
    init_theta,
    load_theta,
    ranked_utilities,
    sample_architectures,
    save_theta,
    search_loop,
    theta_from_doc,
    theta_gradient,
    theta_to_doc,
    validation_utility,
)
from narytd.synth import PlantedSpec, generate_planted, random_truth
from narytd.training import TrainConfig


def one_hot_distribution(architecture: ArchitectureSet) -> ArchitectureDistribution:
    thetas = {}
    for n in architecture.arities():
        codes = architecture[n].codes
        theta = np.zeros((3, len(codes)))
        theta[codes.astype(int) + 1, np.arange(len(codes))] = 1.0
        thetas[n] = theta
    return ArchitectureDistribution(thetas, architecture.segment_count)


class TestInitTheta:
    def test_uniform_columns(self):
        dist = init_theta(2, 2)
        assert set(dist.thetas) == {2}
        assert dist.thetas[2].shape == (3, 8)
        assert np.all(dist.thetas[2] == pytest.approx(1 / 3))

    def test_block_counts_per_arity(self):
        dist = init_theta(4, 4)
        assert dist.thetas[2].shape == (3, 8)
        assert dist.thetas[3].shape == (3, 81)
        assert dist.thetas[4].shape == (3, 1024)

    def test_columns_sum_to_one(self):
        dist = init_theta(3, 2)
        for theta in dist.thetas.values():
            np.testing.assert_allclose(theta.sum(axis=0), 1.0, atol=1e-12)

    def test_rejects_simplex_violation(self):
        with pytest.raises(DataError):
            ArchitectureDistribution({2: np.full((3, 8), 0.5)}, 2)


class TestSampling:
    def test_one_hot_is_deterministic(self):
        arch = ArchitectureSet({2: CoreAssignment(2, 2, np.array([1, -1, 0, 1, 0, 0, -1, 1], np.int8))})
        dist = one_hot_distribution(arch)
        rng = np.random.default_rng(0)
        for sampled, stat in sample_architectures(dist, 5, rng):
            assert sampled == arch
            assert np.all(stat.stats[2].sum(axis=0) == 1.0)

    def test_statistic_records_draw(self):
        dist = init_theta(2, 2)
        rng = np.random.default_rng(1)
        arch, stat = dist.sample_with_stats(rng)
        for k, code in enumerate(arch[2].codes):
            assert stat.stats[2][int(code) + 1, k] == 1.0

    def test_uniform_frequencies_chi_squared(self):
        # 30,000 draws of one block: counts stay inside the 99% chi^2 band
        dist = init_theta(2, 1)  # K = 1
        rng = np.random.default_rng(7)
        counts = np.zeros(3)
        for arch, _ in sample_architectures(dist, 30_000, rng):
            counts[int(arch[2].codes[0]) + 1] += 1
        expected = 10_000.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        assert chi2 <= 9.2103  # chi^2_{2, 0.99}

    def test_sampling_deterministic_under_seed(self):
        dist = init_theta(3, 2)
        a = sample_architectures(dist, 4, np.random.default_rng(5))
        b = sample_architectures(dist, 4, np.random.default_rng(5))
        for (arch_a, _), (arch_b, _) in zip(a, b):
            assert arch_a == arch_b


class TestThetaGradient:
    def test_single_sample_direct_substitution(self):
        dist = init_theta(2, 1)
        stat = SufficientStatistic({2: np.array([[0.0], [0.0], [1.0]])})
        direction = theta_gradient([(stat, 1.0)], dist, transform="raw")
        np.testing.assert_allclose(direction[2][:, 0], [-1 / 3, -1 / 3, 2 / 3], atol=1e-12)

    def test_zero_utilities_zero_direction(self):
        dist = init_theta(2, 2)
        rng = np.random.default_rng(0)
        samples = [(stat, 0.0) for _, stat in sample_architectures(dist, 3, rng)]
        direction = theta_gradient(samples, dist, transform="raw")
        assert np.all(direction[2] == 0.0)

    def test_ranked_pair(self):
        dist = init_theta(2, 2)
        rng = np.random.default_rng(1)
        (a1, s1), (a2, s2) = sample_architectures(dist, 2, rng)
        direction = theta_gradient([(s1, 1.0), (s2, 0.0)], dist, transform="ranked")
        np.testing.assert_allclose(direction[2], (s1.stats[2] - s2.stats[2]) / 2.0, atol=1e-12)

    def test_ranked_transform_values(self):
        np.testing.assert_array_equal(ranked_utilities([1.0, 0.0]), [1.0, -1.0])
        np.testing.assert_array_equal(ranked_utilities([0.5, 0.5]), [0.0, 0.0])
        np.testing.assert_array_equal(ranked_utilities([0.1, 0.9, 0.4]), [-1.0, 1.0, 0.0])


class TestAsngUpdate:
    def test_zero_direction_keeps_theta_and_decays_signal(self):
        dist = init_theta(2, 2)
        state = AsngState.for_distribution(dist)
        state.signal[:] = 1.0
        before = dist.thetas[2].copy()
        signal_before = state.signal.copy()
        asng_update(dist, {2: np.zeros((3, 8))}, state)
        np.testing.assert_allclose(dist.thetas[2], before, atol=1e-12)
        assert np.all(np.abs(state.signal) < np.abs(signal_before))

    def test_constant_direction_increases_favored_entry(self):
        dist = init_theta(2, 2)
        state = AsngState.for_distribution(dist)
        direction = {2: np.zeros((3, 8))}
        direction[2][:, 3] = [-0.5, -0.5, 1.0]
        prev = dist.thetas[2][2, 3]
        for _ in range(25):
            asng_update(dist, direction, state)
            now = dist.thetas[2][2, 3]
            if now >= 1.0 - 1e-6:
                break
            assert now > prev
            prev = now
        assert dist.thetas[2][2, 3] > 0.9

    def test_simplex_preserved_under_random_updates(self):
        dist = init_theta(3, 2)
        state = AsngState.for_distribution(dist)
        rng = np.random.default_rng(3)
        for _ in range(2000):
            direction = {n: rng.normal(scale=0.5, size=t.shape) for n, t in dist.thetas.items()}
            asng_update(dist, direction, state)
            for theta in dist.thetas.values():
                assert np.all(theta >= 0.0)
                np.testing.assert_allclose(theta.sum(axis=0), 1.0, atol=1e-9)


class TestDeriveFinal:
    def test_one_hot_roundtrip(self):
        arch = ArchitectureSet({2: CoreAssignment(2, 2, np.array([1, -1, 0, 0, 1, -1, 1, 0], np.int8))})
        assert derive_final(one_hot_distribution(arch)) == arch

    def test_uniform_prefers_zero(self):
        derived = derive_final(init_theta(2, 2))
        assert np.all(derived[2].codes == 0)

    def test_argmax_row(self):
        theta = np.tile([[0.2], [0.3], [0.5]], (1, 8))
        dist = ArchitectureDistribution({2: theta}, 2)
        assert np.all(derive_final(dist)[2].codes == 1)

    def test_idempotent(self):
        dist = init_theta(3, 2)
        rng = np.random.default_rng(0)
        state = AsngState.for_distribution(dist)
        for _ in range(50):
            asng_update(dist, {n: rng.normal(size=t.shape) for n, t in dist.thetas.items()}, state)
        a = derive_final(dist)
        b = derive_final(dist)
        assert a == b


class TestValidationUtility:
    def test_single_entity_vocabulary(self):
        vocab = Vocabulary(["only"], ["r"])
        facts = [Fact(0, (0, 0))]
        ds = Dataset(vocab, facts, facts, facts)
        emb = SegmentedEmbeddings(np.ones((1, 4)), np.ones((1, 4)), 2)
        utilities, mean = validation_utility(
            emb, ArchitectureSet({2: zero_assignment(2, 2)}), facts, build_filter_index(ds)
        )
        assert np.all(utilities == 1.0) and mean == 1.0

    def test_zero_architecture_tie_policy_value(self):
        rng = np.random.default_rng(1)
        vocab = Vocabulary([f"e{i}" for i in range(6)], ["r"])
        facts = [Fact(0, (0, 1)), Fact(0, (2, 3))]
        ds = Dataset(vocab, facts, facts, facts)
        emb = SegmentedEmbeddings(rng.normal(size=(6, 4)), rng.normal(size=(1, 4)), 2)
        fi = build_filter_index(ds)
        arch = ArchitectureSet({2: zero_assignment(2, 2)})
        utilities, _ = validation_utility(emb, arch, facts, fi, tie_policy="optimistic")
        assert np.all(utilities == 1.0)  # uniform scores, optimistic ties
        utilities, _ = validation_utility(emb, arch, facts, fi, tie_policy="pessimistic")
        # every surviving candidate ties: rank = entity_count - filtered-out
        assert np.all(utilities < 0.5)

    def test_memorization_model_perfect_utility(self):
        from narytd.blocks import memorization_model

        vocab = Vocabulary([f"e{i}" for i in range(4)], ["r0", "r1"])
        facts = [Fact(0, (0, 1)), Fact(1, (2, 3))]
        emb, arch = memorization_model(facts, vocab)
        ds = Dataset(vocab, facts, facts, facts)
        utilities, mean = validation_utility(emb, arch, facts, build_filter_index(ds))
        assert mean == 1.0

    def test_empty_batch_errors(self):
        with pytest.raises(DataError):
            validation_utility(None, None, [], None)


def planted_dataset():
    truth = random_truth((2,), 2, seed=4)
    spec = PlantedSpec(20, 2, (2,), 8, 2, truth, 150, 1.0, seed=4, sigma=0.8)
    return generate_planted(spec).dataset


class TestSearchLoop:
    def test_zero_epochs_returns_tie_rule_architecture(self):
        ds = planted_dataset()
        sc = SearchConfig(lam=2, search_epochs=0, val_batch_size=16, seed=0, dimension=8)
        tc = TrainConfig(dimension=8, segment_count=2, batch_size=32, seed=0)
        result = search_loop(ds, sc, tc)
        assert np.all(result.architecture[2].codes == 0)
        assert len(result.trace) == 0

    def test_trace_length_counts_iterations(self):
        ds = planted_dataset()
        sc = SearchConfig(lam=2, search_epochs=3, val_batch_size=16, seed=0, dimension=8)
        tc = TrainConfig(dimension=8, segment_count=2, batch_size=32, seed=0)
        result = search_loop(ds, sc, tc)
        batches_per_epoch = int(np.ceil(len(ds.train) / 32))
        assert len(result.trace) == 3 * batches_per_epoch
        record = result.trace.records[0]
        assert {"iteration", "epoch", "utilities", "val_mrr", "theta_entropy", "sampled_ops"} <= set(record)

    def test_requires_validation_split(self):
        ds = planted_dataset()
        empty_valid = Dataset(ds.vocabulary, ds.train, [], ds.test)
        sc = SearchConfig(lam=2, search_epochs=1, seed=0, dimension=8)
        tc = TrainConfig(dimension=8, segment_count=2, seed=0)
        with pytest.raises(DataError):
            search_loop(empty_valid, sc, tc)


class TestThetaSnapshot:
    def test_doc_layout(self):
        dist = init_theta(3, 2)
        doc = theta_to_doc(dist)
        assert set(doc) == {"segment_count", "max_arity", "2", "3"}
        assert len(doc["2"]) == 3 and len(doc["2"][0]) == 8

    def test_file_round_trip(self, tmp_path):
        dist = init_theta(2, 2)
        state = AsngState.for_distribution(dist)
        rng = np.random.default_rng(0)
        for _ in range(10):
            asng_update(dist, {2: rng.normal(size=(3, 8))}, state)
        save_theta(tmp_path / "theta.json", dist)
        back = load_theta(tmp_path / "theta.json")
        np.testing.assert_allclose(back.thetas[2], dist.thetas[2], atol=1e-15)

    def test_doc_validates(self):
        doc = theta_to_doc(init_theta(2, 2))
        doc["2"][0][0] = 0.9  # break the simplex
        with pytest.raises(DataError):
            theta_from_doc(doc)
