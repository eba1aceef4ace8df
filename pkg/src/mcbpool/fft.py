"""Discrete Fourier transforms of arbitrary length and circular convolution.

Power-of-two lengths use an iterative radix-2 Cooley-Tukey transform
(with a direct DFT for blocks of up to 32 points).
Every other length goes through Bluestein's chirp-z algorithm, which
rewrites the DFT as a convolution evaluated with a padded power-of-two
transform. Both paths are O(n log n).

All functions operate along the last axis and broadcast over any leading
batch axes. The forward transform is unscaled and the inverse carries the
``1/n`` factor.
"""

from functools import lru_cache

import numpy as np

from .exceptions import NumericalError

__all__ = [
    "fft_forward",
    "fft_inverse",
    "fft_real_pair",
    "circular_convolve",
    "naive_dft",
]

# Relative bound on the imaginary part left over by a real convolution.
RESIDUE_TOL = 1e-6


def _is_pow2(n):
    return n & (n - 1) == 0


def _frozen(a):
    a.flags.writeable = False
    return a


# Largest block transformed by a direct DFT matrix before radix-2 merging.
_BASE = 32


@lru_cache(maxsize=16)
def _dft_matrix(m):
    k = np.arange(m)
    return _frozen(np.exp(-2j * np.pi * np.outer(k, k) / m))


@lru_cache(maxsize=64)
def _merge_twiddles(rows):
    return _frozen(np.exp(-1j * np.pi * np.arange(rows) / rows))


def _fft_pow2(x):
    """Radix-2 decimation in time over a ``(..., c, m)`` layout.

    Row ``r`` of the working array starts as the direct ``m``-point DFT of
    the decimated subsequence ``x[r::c]``. Each merge combines the first and
    second halves of the rows with twiddles, halving the row count and
    doubling the row length, so the contiguous axis only grows.
    """
    n = x.shape[-1]
    lead = x.shape[:-1]
    m = min(n, _BASE)
    X = np.matmul(x.reshape(lead + (m, n // m)).swapaxes(-1, -2), _dft_matrix(m))
    while X.shape[-2] > 1:
        cols, rows = X.shape[-2:]
        half = cols // 2
        even = X[..., :half, :]
        odd = X[..., half:, :] * _merge_twiddles(rows)
        out = np.empty(lead + (half, 2 * rows), dtype=np.complex128)
        np.add(even, odd, out=out[..., :rows])
        np.subtract(even, odd, out=out[..., rows:])
        X = out
    return X.reshape(lead + (n,))


@lru_cache(maxsize=64)
def _bluestein_plan(n):
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp phase exact for large n
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    kernel = np.zeros(m, dtype=np.complex128)
    kernel[:n] = np.conj(chirp)
    kernel[m - n + 1:] = np.conj(chirp[1:][::-1])
    return m, _frozen(chirp), _frozen(_fft_pow2(kernel))


def _fft_bluestein(x):
    n = x.shape[-1]
    m, chirp, kernel_spec = _bluestein_plan(n)
    padded = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    padded[..., :n] = x * chirp
    conv = _fft_pow2(padded) * kernel_spec
    # inverse power-of-two FFT via conjugation
    conv = np.conj(_fft_pow2(np.conj(conv))) / m
    return conv[..., :n] * chirp


def _as_complex(v):
    x = np.asarray(v, dtype=np.complex128)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ValueError("FFT input must have length >= 1 along the last axis")
    return x


def fft_forward(v):
    """Unscaled DFT along the last axis: ``X[k] = sum_j v[j] exp(-2 pi i jk/n)``.

    Accepts real or complex input of any length >= 1.
    """
    x = _as_complex(v)
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    if _is_pow2(n):
        return _fft_pow2(x)
    return _fft_bluestein(x)


def fft_inverse(V):
    """Inverse DFT along the last axis, scaled by ``1/n``."""
    x = _as_complex(V)
    n = x.shape[-1]
    return np.conj(fft_forward(np.conj(x))) / n


def fft_real_pair(a, b):
    """Spectra of two real arrays of equal shape from one complex transform.

    With ``Z = fft(a + i b)``, ``fft(a)[k] = (Z[k] + conj(Z[-k])) / 2`` and
    ``fft(b)[k] = (Z[k] - conj(Z[-k])) / 2i``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    z = fft_forward(a + 1j * b)
    n = z.shape[-1]
    zr = np.conj(z[..., (-np.arange(n)) % n])
    return 0.5 * (z + zr), -0.5j * (z - zr)


def circular_convolve(a, b):
    """Real circular convolution ``c[k] = sum_j a[j] b[(k - j) mod n]``.

    Evaluated as ``ifft(fft(a) * fft(b))``. The imaginary residue is checked
    against ``RESIDUE_TOL * ||c||`` and a :class:`NumericalError` is raised if
    it is larger.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1:] != b.shape[-1:]:
        raise ValueError(f"length mismatch: {a.shape[-1:]} vs {b.shape[-1:]}")
    c = fft_inverse(fft_forward(a) * fft_forward(b))
    floor = 1e-12 * np.linalg.norm(a) * np.linalg.norm(b)
    return real_part_checked(c, floor)


def real_part_checked(c, floor=0.0):
    """Drop the imaginary part of ``c`` after checking it is negligible.

    The residue may not exceed ``RESIDUE_TOL * max|c| + floor``; ``floor``
    absorbs rounding when the result itself cancels to (near) zero.
    """
    residue = np.max(np.abs(c.imag), initial=0.0)
    scale = np.max(np.abs(c.real), initial=0.0)
    if residue > RESIDUE_TOL * scale + floor:
        raise NumericalError(
            f"imaginary residue {residue:.3e} exceeds {RESIDUE_TOL:g} x {scale:.3e}")
    return np.ascontiguousarray(c.real)


def naive_dft(v):
    """O(n^2) reference DFT, used as a test oracle."""
    x = np.asarray(v, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ mat.T
