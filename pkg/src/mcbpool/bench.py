"""Wall-clock comparison of MCB against explicit outer-product pooling.

The explicit leg is only timed when its classifier would fit under the
harness cap (``n1 * n2 * C <= FULL_BILINEAR_CAP``); otherwise it is reported
as refused, next to the parameter count that makes it infeasible.
"""

import time
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError
from .mcb import McbOperator, full_bilinear_param_count, mcb_forward, mcb_param_count
from .models import FULL_BILINEAR_CAP

__all__ = ["BenchRow", "BENCH_HEADER", "run_bench", "time_call"]

BENCH_HEADER = ("leg", "n1", "n2", "d", "classes", "batch", "repetitions", "status",
                "median_ms", "p95_ms", "n_params")


@dataclass(frozen=True)
class BenchRow:
    leg: str
    n1: int
    n2: int
    d: int
    classes: int
    batch: int
    repetitions: int
    status: str
    median_ms: float | None
    p95_ms: float | None
    n_params: int

    def as_tuple(self):
        return tuple(getattr(self, k) for k in BENCH_HEADER)


def time_call(fn, repetitions):
    """Median and 95th percentile of ``fn()`` in milliseconds (one warm-up call)."""
    fn()
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1e3)
    return float(np.median(times)), float(np.percentile(times, 95))


def run_bench(n1=2048, n2=2048, d=16000, classes=3000, batch=16, repetitions=5, seed=0):
    """Time both legs; returns ``[mcb row, full-bilinear row]``."""
    for name, value in (("n1", n1), ("n2", n2), ("d", d), ("classes", classes),
                        ("batch", batch), ("repetitions", repetitions)):
        if int(value) < 1:
            raise ConfigurationError(f"--{name} must be >= 1, got {value}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((batch, n1))
    q = rng.standard_normal((batch, n2))
    op = McbOperator.sample(seed, (n1, n2), d)
    med, p95 = time_call(lambda: mcb_forward(op, [x, q]), repetitions)
    rows = [BenchRow("mcb", n1, n2, d, classes, batch, repetitions, "ok", med, p95,
                     mcb_param_count(d, classes))]
    full = full_bilinear_param_count(n1, n2, classes)
    if full > FULL_BILINEAR_CAP:
        rows.append(BenchRow("full-bilinear", n1, n2, d, classes, batch, repetitions,
                             "refused", None, None, full))
    else:
        med, p95 = time_call(lambda: np.einsum("bi,bj->bij", x, q).reshape(batch, -1),
                             repetitions)
        rows.append(BenchRow("full-bilinear", n1, n2, d, classes, batch, repetitions,
                             "ok", med, p95, full))
    return rows
