"""Count Sketch projection.

A sketch is fixed by a bucket map ``h`` and a sign vector ``s``; applying it
accumulates ``s[i] * v[i]`` into bucket ``h[i]`` of a length-``d`` output.
Buckets are stored 0-based; :attr:`CountSketchParams.h_one_based` gives the
1-based view used by the on-disk format.

Random parameters come from NumPy's PCG64 generator seeded directly with the
user seed. Multi-modality operators derive one child seed per modality index
``k`` with :func:`child_seed`.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CountSketchParams",
    "sample_params",
    "child_seed",
    "apply",
    "apply_adjoint",
    "outer_product_params",
]

_UINT64_MAX = 2**64 - 1


def _check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= _UINT64_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def child_seed(seed, k):
    """Seed for modality ``k`` of an operator seeded with ``seed``.

    Derived as the first 64-bit word of ``SeedSequence(seed, spawn_key=(k,))``.
    """
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=(int(k),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class CountSketchParams:
    """Immutable hash/sign pair of one count sketch.

    Parameters
    ----------
    n, d : int
        Input and output dimensions.
    h : ndarray of int64, shape (n,)
        0-based bucket of every input coordinate, in ``[0, d)``.
    s : ndarray of int8, shape (n,)
        Sign of every input coordinate, ``-1`` or ``+1``.
    seed : int or None
        Seed the parameters were sampled from; ``None`` for derived sketches.
    """

    n: int
    d: int
    h: np.ndarray = field(repr=False)
    s: np.ndarray = field(repr=False)
    seed: int | None = None

    def __post_init__(self):
        h = np.array(self.h, dtype=np.int64)
        s = np.array(self.s, dtype=np.int8)
        if self.n < 1 or self.d < 1:
            raise ValueError(f"n and d must be >= 1, got n={self.n}, d={self.d}")
        if h.shape != (self.n,) or s.shape != (self.n,):
            raise ValueError("h and s must both have length n")
        if h.size and (h.min() < 0 or h.max() >= self.d):
            raise ValueError("bucket indices out of range [0, d)")
        if not np.all(np.abs(s) == 1):
            raise ValueError("signs must be -1 or +1")
        h.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "s", s)

    @property
    def h_one_based(self):
        return self.h + 1

    @classmethod
    def from_one_based(cls, n, d, h, s, seed=None):
        return cls(n, d, np.asarray(h, dtype=np.int64) - 1, s, seed)

    def __eq__(self, other):
        if not isinstance(other, CountSketchParams):
            return NotImplemented
        return (self.n == other.n and self.d == other.d and self.seed == other.seed
                and np.array_equal(self.h, other.h) and np.array_equal(self.s, other.s))

    def __hash__(self):
        return hash((self.n, self.d, self.seed, self.h.tobytes(), self.s.tobytes()))


def sample_params(seed, n, d):
    """Draw ``h`` uniformly from ``{0..d-1}^n`` and ``s`` from ``{-1, 1}^n``."""
    if n < 1 or d < 1:
        raise ValueError(f"n and d must be >= 1, got n={n}, d={d}")
    seed = _check_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    h = rng.integers(0, d, size=n, dtype=np.int64)
    s = (2 * rng.integers(0, 2, size=n, dtype=np.int64) - 1).astype(np.int8)
    return CountSketchParams(n, d, h, s, seed)


def apply(p, v):
    """Count-sketch ``v`` (shape ``(..., n)``) into shape ``(..., d)``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != p.n:
        raise ValueError(f"expected last dimension {p.n}, got shape {v.shape}")
    lead = v.shape[:-1]
    weighted = (v * p.s).reshape(-1, p.n)
    rows = weighted.shape[0]
    # one bincount over row-offset buckets; each row sums in index order
    idx = (p.h + p.d * np.arange(rows)[:, None]).ravel()
    y = np.bincount(idx, weights=weighted.ravel(), minlength=rows * p.d)
    return y.reshape(lead + (p.d,))


def apply_adjoint(p, g):
    """Transpose of :func:`apply`: ``r[i] = s[i] * g[h[i]]``."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 0 or g.shape[-1] != p.d:
        raise ValueError(f"expected last dimension {p.d}, got shape {g.shape}")
    return g[..., p.h] * p.s


def outer_product_params(*params):
    """Sketch of the flattened (row-major) outer product of several inputs.

    For two inputs the combined coordinate ``(i, j)`` lands in bucket
    ``(h1[i] + h2[j]) mod d`` with sign ``s1[i] * s2[j]``; more inputs extend
    the sum and product. Applying the result to ``vec(x (x) q)`` equals the
    circular convolution of the individual sketches, which makes it the
    brute-force oracle for the FFT route.
    """
    if len(params) < 2:
        raise ValueError("need at least two sketches")
    d = params[0].d
    if any(p.d != d for p in params):
        raise ValueError("all sketches must share the output dimension d")
    h = np.zeros(1, dtype=np.int64)
    s = np.ones(1, dtype=np.int64)
    for p in params:
        h = ((h[:, None] + p.h[None, :]) % d).ravel()
        s = (s[:, None] * p.s[None, :]).ravel()
    n = int(np.prod([p.n for p in params]))
    return CountSketchParams(n, d, h, s.astype(np.int8), None)
