import pytest

from mcbpool.bench import BENCH_HEADER, run_bench
from mcbpool.exceptions import ConfigurationError
from mcbpool.verify import SUITES, run_suites


def test_fast_suites_pass():
    names = ["convolution", "sketch-adjoint", "oracle-equivalence", "oracle-equivalence-k3", "param-counts"]
    results = run_suites(names)
    assert all(r.passed for r in results), [r.line() for r in results]
    assert all(r.measured < r.threshold for r in results)


def test_zero_tolerance_fails_every_error_suite():
    names = ["convolution", "sketch-adjoint", "oracle-equivalence"]
    results = run_suites(names, tolerance=0.0)
    assert not any(r.passed for r in results)
    assert all("FAIL" in r.line() for r in results)


def test_suite_registry():
    assert {"fft-roundtrip", "kernel", "gradients", "param-counts"} <= set(SUITES)


def test_bench_degenerate_sizes():
    rows = run_bench(1, 1, 1, 1, batch=1, repetitions=2)
    assert [r.leg for r in rows] == ["mcb", "full-bilinear"]
    assert all(r.status == "ok" for r in rows)
    assert len(rows[0].as_tuple()) == len(BENCH_HEADER)


def test_bench_refuses_explicit_leg_at_scale():
    rows = run_bench(2048, 2048, 16000, 3000, batch=1, repetitions=1)
    assert rows[0].n_params == 48_000_000 and rows[0].status == "ok"
    assert rows[1].n_params == 12_582_912_000
    assert rows[1].status == "refused" and rows[1].median_ms is None


def test_bench_rejects_bad_sizes():
    with pytest.raises(ConfigurationError):
        run_bench(0, 4, 4, 4)
