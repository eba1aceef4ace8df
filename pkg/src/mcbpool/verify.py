"""Self-verification suites run by ``mcbpool verify``.

Each suite measures a worst-case error (or a test statistic) and compares
it with a threshold. Passing a ``tolerance`` replaces the threshold of every
error-based suite, which makes it possible to demonstrate failure reporting
(``tolerance=0`` fails them all).
"""

from dataclasses import dataclass

import numpy as np

from . import sketch as cs
from .fft import circular_convolve, fft_forward, fft_inverse, naive_dft
from .harness import grad_check
from .mcb import McbOperator, full_bilinear_param_count, mcb_forward, mcb_param_count
from .models import ModelSpec
from .nn import POOLING_TAGS, PoolingMethod
from .tasks import ClassificationData, GroundingData

__all__ = ["SuiteResult", "SUITES", "run_suites", "naive_circular_convolve",
           "oracle_equivalence_error", "kernel_statistic"]


@dataclass(frozen=True)
class SuiteResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: measured {self.measured:.3e} (threshold {self.threshold:.3e}) {self.detail}".rstrip()


def naive_circular_convolve(a, b):
    n = len(a)
    return np.array([sum(a[j] * b[(k - j) % n] for j in range(n)) for k in range(n)])


def _rng(seed):
    return np.random.default_rng(seed)


def fft_roundtrip(tol=1e-10, max_len=1024):
    rng = _rng(1)
    worst = 0.0
    for n in range(1, max_len + 1):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        worst = max(worst, float(np.max(np.abs(fft_inverse(fft_forward(v)) - v))))
    return SuiteResult("fft round trip, lengths 1..%d" % max_len, worst < tol, worst, tol)


def fft_naive(tol=1e-9, max_len=256):
    rng = _rng(2)
    worst = 0.0
    for n in range(1, max_len + 1):
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        ref = naive_dft(v)
        worst = max(worst, float(np.max(np.abs(fft_forward(v) - ref)) / max(np.max(np.abs(ref)), 1.0)))
    return SuiteResult("fft vs naive DFT, lengths 1..%d" % max_len, worst < tol, worst, tol)


def convolution_naive(tol=1e-9, max_len=256):
    rng = _rng(3)
    worst = 0.0
    for n in range(1, max_len + 1):
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        worst = max(worst, float(np.max(np.abs(circular_convolve(a, b) - naive_circular_convolve(a, b)))))
    return SuiteResult("circular convolution vs naive sum", worst < tol, worst, tol)


def sketch_adjoint(tol=1e-12, trials=1000):
    rng = _rng(4)
    worst = 0.0
    for t in range(trials):
        n, d = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        p = cs.sample_params(t, n, d)
        v, g = rng.standard_normal(n), rng.standard_normal(d)
        lhs = float(np.dot(cs.apply(p, v), g))
        rhs = float(np.dot(v, cs.apply_adjoint(p, g)))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    return SuiteResult("count sketch adjoint identity", worst < tol, worst, tol)


def oracle_equivalence_error(seeds=range(100), k=2, max_n=32, max_d=64):
    """Worst ``||mcb_forward - explicit outer-product sketch||_inf`` over random cases."""
    worst = 0.0
    for seed in seeds:
        rng = _rng(1000 + seed)
        dims = [int(rng.integers(1, max_n + 1)) for _ in range(k)]
        d = int(rng.integers(1, max_d + 1))
        op = McbOperator.sample(seed, dims, d)
        vs = [rng.standard_normal(n) for n in dims]
        outer = vs[0]
        for v in vs[1:]:
            outer = np.multiply.outer(outer, v)
        ref = cs.apply(cs.outer_product_params(*op.inputs), outer.ravel())
        worst = max(worst, float(np.max(np.abs(mcb_forward(op, vs).output - ref))))
    return worst


def oracle_equivalence(tol=1e-9):
    worst = oracle_equivalence_error()
    return SuiteResult("MCB vs explicit outer-product sketch (k=2)", worst < tol, worst, tol)


def oracle_equivalence_triple(tol=1e-9):
    worst = oracle_equivalence_error(k=3, max_n=12)
    return SuiteResult("MCB vs explicit outer-product sketch (k=3)", worst < tol, worst, tol)


def kernel_statistic(operators=2000, d=512, dim=16, seed=0):
    """Estimate ``<x,x'><q,q'>`` by averaging ``<MCB(x,q), MCB(x',q')>``.

    Returns ``(target, mean, standard error)``.
    """
    rng = _rng(seed)
    x, xp, q, qp = (v / np.linalg.norm(v) for v in rng.standard_normal((4, dim)))
    target = float(np.dot(x, xp) * np.dot(q, qp))
    xs, qs = np.stack([x, xp]), np.stack([q, qp])
    vals = np.empty(operators)
    for m in range(operators):
        out = mcb_forward(McbOperator.sample(10_000 + m, (dim, dim), d), [xs, qs]).output
        vals[m] = np.dot(out[0], out[1])
    return target, float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(operators))


def kernel_unbiased(z_max=4.0):
    target, mean, se = kernel_statistic()
    z = abs(mean - target) / se
    return SuiteResult("kernel unbiasedness (|mean - target| / SE)", z < z_max, z, z_max,
                       f"target={target:.5f} mean={mean:.5f} se={se:.5f}")


def _grad_cases():
    rng = _rng(5)
    n, classes = 6, 3

    def unit(*shape):
        v = rng.standard_normal(shape)
        return v / np.linalg.norm(v, axis=-1, keepdims=True)

    pair = ClassificationData(unit(2, n), unit(2, n), np.array([0, 2]))
    grid = ClassificationData(unit(2, 4, n), unit(2, n), np.array([1, 2]))
    ground = GroundingData(unit(2, n), unit(2, 5, n), np.array([3, 0]))
    cases = []
    for tag in POOLING_TAGS:
        hidden = () if tag in ("full-bilinear", "mcb") else (5,)
        if tag == "concat-fc":
            hidden = (5, 4)
        method = PoolingMethod(tag, d=16 if tag == "mcb" else None, hidden=hidden)
        cases.append((f"pipeline {tag}", ModelSpec(method, seed=11), pair))
        cases.append((f"grounding {tag}", ModelSpec(PoolingMethod(tag, d=16 if tag == "mcb" else None,
                                                                  hidden=(4,)), seed=12), ground))
    for glimpses in (1, 2, 4):
        spec = ModelSpec(PoolingMethod("mcb", d=16), use_attention=True, glimpses=glimpses,
                         attention_hidden=6, attention_d=24, seed=13)
        cases.append((f"attention glimpses={glimpses}", spec, grid))
    return cases, classes


def gradients(tol=1e-5):
    cases, classes = _grad_cases()
    worst, worst_name = 0.0, ""
    for name, spec, sample in cases:
        err = grad_check(spec, sample, classes)
        if err >= worst:
            worst, worst_name = err, name
    return SuiteResult("full-pipeline gradients vs central differences", worst < tol, worst, tol,
                       f"worst case: {worst_name}")


def parameter_counts(tol=0.5):
    got = (full_bilinear_param_count(2048, 2048, 3000), mcb_param_count(16000, 3000))
    want = (12_582_912_000, 48_000_000)
    err = float(sum(abs(g - w) for g, w in zip(got, want)))
    return SuiteResult("parameter counts (2048x2048x3000, 16000x3000)", err < tol, err, tol,
                       f"full={got[0]:,} mcb={got[1]:,}")


SUITES = {
    "fft-roundtrip": fft_roundtrip,
    "fft-naive": fft_naive,
    "convolution": convolution_naive,
    "sketch-adjoint": sketch_adjoint,
    "oracle-equivalence": oracle_equivalence,
    "oracle-equivalence-k3": oracle_equivalence_triple,
    "kernel": kernel_unbiased,
    "gradients": gradients,
    "param-counts": parameter_counts,
}

# suites whose threshold is an error tolerance (replaced by ``tolerance``)
_TOLERANCE_SUITES = {"fft-roundtrip", "fft-naive", "convolution", "sketch-adjoint",
                     "oracle-equivalence", "oracle-equivalence-k3", "gradients", "param-counts"}


def run_suites(names=None, tolerance=None):
    results = []
    for name in names or SUITES:
        suite = SUITES[name]
        if tolerance is not None and name in _TOLERANCE_SUITES:
            results.append(suite(tolerance))
        else:
            results.append(suite())
    return results
