import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import numeric_grad, rel_err
from mcbpool.mcb import (
    McbOperator,
    full_bilinear_param_count,
    mcb_backward,
    mcb_forward,
    mcb_param_count,
)
from mcbpool.sketch import CountSketchParams, apply, outer_product_params, sample_params
from mcbpool.verify import kernel_statistic, oracle_equivalence_error


def scalar_op(s1, s2):
    return McbOperator(1, (CountSketchParams.from_one_based(1, 1, [1], [s1]),
                           CountSketchParams.from_one_based(1, 1, [1], [s2])))


def explicit(op, vs):
    outer = vs[0]
    for v in vs[1:]:
        outer = np.multiply.outer(outer, v)
    return apply(outer_product_params(*op.inputs), outer.ravel())


def test_scalar_case():
    rec = mcb_forward(scalar_op(1, -1), [[3.0], [4.0]])
    np.testing.assert_allclose(rec.output, [-12.0], atol=1e-14)


def test_scalar_gradients():
    op = scalar_op(1, 1)
    rec = mcb_forward(op, [[3.0], [4.0]])
    gx, gq = mcb_backward(op, rec, np.array([1.0]))
    np.testing.assert_allclose(gx, [4.0], atol=1e-14)
    np.testing.assert_allclose(gq, [3.0], atol=1e-14)


def test_zero_upstream_gradient(rng):
    op = McbOperator.sample(1, (5, 6), 8)
    rec = mcb_forward(op, [rng.standard_normal(5), rng.standard_normal(6)])
    for g in mcb_backward(op, rec, np.zeros(8)):
        assert not np.any(g)


def test_random_8x8_into_16(rng):
    op = McbOperator.sample(3, (8, 8), 16)
    x, q = rng.standard_normal((2, 8))
    assert np.max(np.abs(mcb_forward(op, [x, q]).output - explicit(op, [x, q]))) < 1e-9


def test_three_inputs(rng):
    op = McbOperator.sample(4, (4, 4, 4), 8)
    vs = list(rng.standard_normal((3, 4)))
    assert np.max(np.abs(mcb_forward(op, vs).output - explicit(op, vs))) < 1e-9


def test_triple_hash_rule():
    op = McbOperator.sample(5, (2, 3, 2), 5)
    combo = outer_product_params(*op.inputs)
    hs = [p.h_one_based for p in op.inputs]
    ss = [p.s for p in op.inputs]
    k = 0
    for i in range(2):
        for j in range(3):
            for m in range(2):
                assert combo.h_one_based[k] == (hs[0][i] - 1 + hs[1][j] - 1 + hs[2][m] - 1) % 5 + 1
                assert combo.s[k] == ss[0][i] * ss[1][j] * ss[2][m]
                k += 1


def test_oracle_equivalence_100_seeds():
    assert oracle_equivalence_error() < 1e-9
    assert oracle_equivalence_error(k=3, max_n=12) < 1e-9


def test_record_contents(rng):
    op = McbOperator.sample(6, (3, 5), 7)
    x, q = rng.standard_normal(3), rng.standard_normal(5)
    rec = mcb_forward(op, [x, q])
    np.testing.assert_array_equal(rec.inputs[0], x)
    np.testing.assert_array_equal(rec.sketches[1], apply(op.inputs[1], q))
    assert rec.spectra[0].shape == (7,) and rec.output.shape == (7,)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3))
def test_multilinear(seed, alpha):
    rng = np.random.default_rng(seed)
    op = McbOperator.sample(seed, (6, 5), 9)
    x, q = rng.standard_normal(6), rng.standard_normal(5)
    base = mcb_forward(op, [x, q]).output
    scaled = mcb_forward(op, [alpha * x, q]).output
    assert np.max(np.abs(scaled - alpha * base)) < 1e-10 * max(1.0, abs(alpha))
    x2 = rng.standard_normal(6)
    summed = mcb_forward(op, [x + x2, q]).output
    assert np.max(np.abs(summed - base - mcb_forward(op, [x2, q]).output)) < 1e-10


def test_batch_rows_independent_of_order(rng):
    op = McbOperator.sample(7, (10, 12), 30)
    x, q = rng.standard_normal((6, 10)), rng.standard_normal((6, 12))
    out = mcb_forward(op, [x, q]).output
    perm = rng.permutation(6)
    np.testing.assert_array_equal(mcb_forward(op, [x[perm], q[perm]]).output, out[perm])
    for b in range(6):
        np.testing.assert_allclose(out[b], mcb_forward(op, [x[b], q[b]]).output, atol=1e-13)


def test_broadcast_query(rng):
    op = McbOperator.sample(8, (4, 3), 6)
    grid, q = rng.standard_normal((5, 4)), rng.standard_normal(3)
    rec = mcb_forward(op, [grid, q])
    assert rec.output.shape == (5, 6)
    g = rng.standard_normal((5, 6))
    gx, gq = mcb_backward(op, rec, g)
    assert gx.shape == (5, 4) and gq.shape == (3,)
    rec_full = mcb_forward(op, [grid, np.tile(q, (5, 1))])
    np.testing.assert_allclose(gq, mcb_backward(op, rec_full, g)[1].sum(axis=0), atol=1e-12)


@pytest.mark.parametrize("k", [2, 3])
def test_backward_matches_finite_differences(k):
    worst = 0.0
    for case in range(50):
        rng = np.random.default_rng(case)
        dims = tuple(int(n) for n in rng.integers(1, 7, size=k))
        op = McbOperator.sample(case, dims, int(rng.integers(1, 13)))
        vs = [rng.standard_normal(n) for n in dims]
        w = rng.standard_normal(op.d)
        grads = mcb_backward(op, mcb_forward(op, vs), w)
        for j in range(k):
            num = numeric_grad(lambda: mcb_forward(op, vs).output @ w, vs[j])
            worst = max(worst, rel_err(grads[j], num))
    assert worst < 1e-5


def test_backward_4x4_into_8(rng):
    op = McbOperator.sample(9, (4, 4), 8)
    vs = list(rng.standard_normal((2, 4)))
    w = rng.standard_normal(8)
    grads = mcb_backward(op, mcb_forward(op, vs), w)
    for j in range(2):
        num = numeric_grad(lambda: mcb_forward(op, vs).output @ w, vs[j])
        assert rel_err(grads[j], num) < 1e-5


def test_arity_and_dimension_errors(rng):
    op = McbOperator.sample(1, (3, 4), 5)
    with pytest.raises(ValueError):
        mcb_forward(op, [np.ones(3)])
    with pytest.raises(ValueError):
        mcb_forward(op, [np.ones(4), np.ones(4)])
    rec = mcb_forward(op, [np.ones(3), np.ones(4)])
    with pytest.raises(ValueError):
        mcb_backward(op, rec, np.ones(6))


def test_operator_invariants():
    with pytest.raises(ValueError):
        McbOperator(4, (sample_params(0, 3, 4),))
    with pytest.raises(ValueError):
        McbOperator(4, (sample_params(0, 3, 4), sample_params(1, 3, 5)))
    op = McbOperator.sample(10, (3, 4, 5), 6)
    assert op.k == 3 and op.input_dims == (3, 4, 5)
    assert McbOperator.sample(10, (3, 4, 5), 6) == op
    # modalities get independent streams
    assert not np.array_equal(op.inputs[0].h[:3], op.inputs[1].h[:3]) or \
        not np.array_equal(op.inputs[0].s[:3], op.inputs[1].s[:3])


def test_kernel_unbiased():
    target, mean, se = kernel_statistic()
    assert abs(mean - target) < 4 * se


@pytest.mark.parametrize("args, want", [
    ((2048, 2048, 3000), 12_582_912_000),
    ((1, 1, 1), 1),
    ((128, 128, 16000), 262_144_000),
])
def test_full_bilinear_count(args, want):
    assert full_bilinear_param_count(*args) == want


@pytest.mark.parametrize("args, want", [((16000, 3000), 48_000_000), ((1, 1), 1), ((4096, 3000), 12_288_000)])
def test_mcb_count(args, want):
    assert mcb_param_count(*args) == want


def test_count_overflow_and_bad_sizes():
    with pytest.raises(ValueError):
        full_bilinear_param_count(2**32, 2**32, 2)
    with pytest.raises(ValueError):
        mcb_param_count(0, 5)
