import numpy as np
import pytest

from narytd import kernels


def random_case(rng, P=3, m=2, ds=4, B=5):
    codes = rng.choice([-1.0, 0.0, 1.0], size=m**P)
    X = rng.normal(size=(B, P, m, ds))
    return codes, X


def test_decode_encode_roundtrip():
    for P, m in [(3, 2), (4, 3), (5, 4)]:
        for k in range(m**P):
            idx = kernels.decode_block(k, P, m)
            assert len(idx) == P
            assert all(0 <= j < m for j in idx)
            assert kernels.encode_block(idx, m) == k


def test_decode_row_major_relation_slowest():
    # k = 0 is all-zeros, k = m**P - 1 is all-(m-1), participant 0 moves slowest
    assert kernels.decode_block(0, 3, 2) == (0, 0, 0)
    assert kernels.decode_block(7, 3, 2) == (1, 1, 1)
    assert kernels.decode_block(4, 3, 2) == (1, 0, 0)
    assert kernels.decode_block(1, 3, 2) == (0, 0, 1)


def test_score_single_block_manual():
    # one +1 block at (0, 1, 0) with segment length 1
    codes = np.zeros(8)
    codes[kernels.encode_block((0, 1, 0), 2)] = 1.0
    X = np.array([[[[1.0], [2.0]], [[3.0], [4.0]], [[5.0], [6.0]]]])
    # r seg0 = 1, e1 seg1 = 4, e2 seg0 = 5
    assert kernels.score_batch(codes, X)[0] == pytest.approx(20.0)


def test_backends_agree():
    rng = np.random.default_rng(0)
    for P, m, ds in [(3, 1, 5), (3, 2, 4), (4, 3, 2), (5, 4, 3)]:
        codes, X = random_case(rng, P=P, m=m, ds=ds, B=6)
        np.testing.assert_allclose(
            kernels._score_np(codes, X), kernels._score_nb(codes, X), rtol=1e-12, atol=1e-12
        )
        for hole in range(P):
            np.testing.assert_allclose(
                kernels._context_np(codes, X, hole),
                kernels._context_nb(codes, X, hole),
                rtol=1e-12,
                atol=1e-12,
            )


def test_context_reconstructs_score():
    # pairing the context against the held-out participant gives the score
    rng = np.random.default_rng(1)
    codes, X = random_case(rng, P=4, m=3, ds=2, B=7)
    scores = kernels.score_batch(codes, X)
    for hole in range(4):
        ctx = kernels.context_batch(codes, X, hole)
        recombined = np.einsum("bjt,bjt->b", ctx, X[:, hole])
        np.testing.assert_allclose(recombined, scores, rtol=1e-10, atol=1e-12)


def test_score_linear_in_codes():
    # positive rescaling of all codes rescales every score, preserving order
    rng = np.random.default_rng(2)
    codes, X = random_case(rng, P=3, m=2, ds=4, B=10)
    base = kernels.score_batch(codes, X)
    for c in (0.5, 2.0, 7.25):
        scaled = kernels.score_batch(c * codes, X)
        np.testing.assert_allclose(scaled, c * base, rtol=1e-12)
        assert np.array_equal(np.argsort(scaled), np.argsort(base))


def test_score_additive_over_blocks():
    rng = np.random.default_rng(3)
    codes, X = random_case(rng, P=3, m=2, ds=4, B=4)
    total = np.zeros(4)
    for k in range(len(codes)):
        single = np.zeros_like(codes)
        single[k] = codes[k]
        total += kernels.score_batch(single, X)
    np.testing.assert_allclose(total, kernels.score_batch(codes, X), rtol=1e-10, atol=1e-12)


def test_bruteforce_scalar_segments():
    # with segment length 1 the score is an explicit sum over multi-indices
    rng = np.random.default_rng(4)
    for P, m in [(3, 2), (4, 3)]:
        codes = rng.choice([-1.0, 0.0, 1.0], size=m**P)
        X = rng.normal(size=(3, P, m, 1))
        expected = np.zeros(3)
        for k, c in enumerate(codes):
            idx = kernels.decode_block(k, P, m)
            for b in range(3):
                prod = c
                for q, j in enumerate(idx):
                    prod *= X[b, q, j, 0]
                expected[b] += prod
        np.testing.assert_allclose(kernels.score_batch(codes, X), expected, rtol=1e-10)


def test_zero_codes_zero_everything():
    rng = np.random.default_rng(5)
    _, X = random_case(rng)
    codes = np.zeros(8)
    assert np.all(kernels.score_batch(codes, X) == 0.0)
    assert np.all(kernels.context_batch(codes, X, 1) == 0.0)


def test_context_hole_out_of_range():
    rng = np.random.default_rng(6)
    codes, X = random_case(rng)
    with pytest.raises(ValueError):
        kernels.context_batch(codes, X, 3)
