import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcbpool.fft import circular_convolve
from mcbpool.sketch import (
    CountSketchParams,
    apply,
    apply_adjoint,
    child_seed,
    outer_product_params,
    sample_params,
)


def by_hand(h, s, n, d):
    return CountSketchParams.from_one_based(n, d, h, s)


def test_sampling_is_deterministic():
    a, b = sample_params(7, 5, 3), sample_params(7, 5, 3)
    assert a == b and hash(a) == hash(b)
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_array_equal(a.s, b.s)
    assert sample_params(8, 5, 3) != a


def test_sampled_ranges():
    p = sample_params(3, 1000, 17)
    assert p.h_one_based.min() >= 1 and p.h_one_based.max() <= 17
    assert set(np.unique(p.s)) == {-1, 1}


def test_buckets_uniform():
    p = sample_params(11, 100_000, 4)
    freq = np.bincount(p.h, minlength=4) / p.n
    sigma = np.sqrt(0.25 * 0.75 / p.n)
    assert np.all(np.abs(freq - 0.25) < 3 * sigma)


@pytest.mark.parametrize("n, d", [(0, 3), (3, 0), (-1, 2)])
def test_bad_sizes(n, d):
    with pytest.raises(ValueError):
        sample_params(0, n, d)


def test_params_are_read_only():
    p = sample_params(0, 4, 4)
    with pytest.raises(ValueError):
        p.h[0] = 1
    with pytest.raises(AttributeError):
        p.d = 5


def test_invalid_explicit_params():
    with pytest.raises(ValueError):
        by_hand([1, 3], [1, 1], 2, 2)
    with pytest.raises(ValueError):
        by_hand([1, 2], [1, 0], 2, 2)
    with pytest.raises(ValueError):
        by_hand([1], [1, 1], 2, 2)


def test_child_seeds_differ_per_modality():
    assert len({child_seed(5, k) for k in range(4)}) == 4
    assert child_seed(5, 1) == child_seed(5, 1)


def test_identity_sketch():
    p = by_hand([1, 2, 3], [1, 1, 1], 3, 3)
    v = np.array([0.3, -1.0, 2.5])
    np.testing.assert_array_equal(apply(p, v), v)
    np.testing.assert_array_equal(apply_adjoint(p, v), v)


def test_hand_example():
    p = by_hand([1, 1, 2], [1, -1, 1], 3, 2)
    np.testing.assert_array_equal(apply(p, [2, 3, 5]), [-1, 5])
    np.testing.assert_array_equal(apply_adjoint(p, [10, 20]), [10, -10, 20])
    np.testing.assert_array_equal(apply_adjoint(p, [0, 0]), [0, 0, 0])


def test_linearity(rng):
    p = sample_params(2, 9, 4)
    v = rng.standard_normal(9)
    np.testing.assert_allclose(apply(p, 2 * v), 2 * apply(p, v), rtol=0, atol=1e-15)


def test_batched_apply_matches_rows(rng):
    p = sample_params(2, 9, 5)
    v = rng.standard_normal((4, 3, 9))
    out = apply(p, v)
    for idx in np.ndindex(4, 3):
        np.testing.assert_array_equal(out[idx], apply(p, v[idx]))
    g = rng.standard_normal((4, 3, 5))
    back = apply_adjoint(p, g)
    assert back.shape == (4, 3, 9)
    np.testing.assert_array_equal(back[1, 2], apply_adjoint(p, g[1, 2]))


def test_dimension_mismatch():
    p = sample_params(0, 4, 3)
    with pytest.raises(ValueError):
        apply(p, np.ones(5))
    with pytest.raises(ValueError):
        apply_adjoint(p, np.ones(4))


def test_adjoint_identity_1000_triples(rng):
    worst = 0.0
    for t in range(1000):
        n, d = rng.integers(1, 65, size=2)
        p = sample_params(t, int(n), int(d))
        v, g = rng.standard_normal(n), rng.standard_normal(d)
        lhs, rhs = apply(p, v) @ g, v @ apply_adjoint(p, g)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    assert worst < 1e-12


def test_at_most_min_n_d_nonzeros(rng):
    for n, d in [(3, 10), (10, 3), (8, 8)]:
        y = apply(sample_params(n * d, n, d), rng.standard_normal(n))
        assert np.count_nonzero(y) <= min(n, d)


def test_inner_product_unbiased():
    rng = np.random.default_rng(99)
    u, v = rng.standard_normal((2, 16))
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    est = np.array([apply(p, u) @ apply(p, v)
                    for p in (sample_params(5000 + m, 16, 64) for m in range(2000))])
    assert abs(est.mean() - u @ v) < 4 * est.std(ddof=1) / np.sqrt(len(est))


def test_outer_product_scalar_case():
    p1, p2 = by_hand([1], [1], 1, 1), by_hand([1], [-1], 1, 1)
    combo = outer_product_params(p1, p2)
    np.testing.assert_array_equal(apply(combo, np.outer([3.0], [4.0]).ravel()), [-12])


def test_outer_product_hash_rule():
    p1, p2 = by_hand([1, 3], [1, -1], 2, 3), by_hand([2, 3, 1], [-1, 1, 1], 3, 3)
    combo = outer_product_params(p1, p2)
    # row-major (i, j): h' = ((h1 - 1 + h2 - 1) mod d) + 1
    want_h = [((a - 1 + b - 1) % 3) + 1 for a in (1, 3) for b in (2, 3, 1)]
    np.testing.assert_array_equal(combo.h_one_based, want_h)
    np.testing.assert_array_equal(combo.s, [a * b for a in (1, -1) for b in (-1, 1, 1)])
    assert set(np.unique(combo.s)) <= {-1, 1}


def test_outer_product_d_mismatch():
    with pytest.raises(ValueError):
        outer_product_params(sample_params(0, 2, 3), sample_params(1, 2, 4))


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 32), st.integers(1, 32), st.integers(1, 64), st.integers(0, 2**63))
def test_convolution_identity(n1, n2, d, seed):
    p1, p2 = sample_params(seed, n1, d), sample_params(seed + 1, n2, d)
    rng = np.random.default_rng(seed % 2**32)
    x, q = rng.standard_normal(n1), rng.standard_normal(n2)
    oracle = apply(outer_product_params(p1, p2), np.outer(x, q).ravel())
    assert np.max(np.abs(oracle - circular_convolve(apply(p1, x), apply(p2, q)))) < 1e-9


def test_random_4_by_3_into_8(rng):
    p1, p2 = sample_params(41, 4, 8), sample_params(42, 3, 8)
    x, q = rng.standard_normal(4), rng.standard_normal(3)
    oracle = apply(outer_product_params(p1, p2), np.outer(x, q).ravel())
    assert np.max(np.abs(oracle - circular_convolve(apply(p1, x), apply(p2, q)))) < 1e-9
