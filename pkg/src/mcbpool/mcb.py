"""Multimodal compact bilinear pooling.

The operator count-sketches each input with its own fixed random
parameters, multiplies the spectra of all sketches element-wise, and
transforms back. For two inputs the result is the count sketch of the
flattened outer product ``x q^T``; for more inputs it is the sketch of the
higher-order outer product.
"""

from dataclasses import dataclass

import numpy as np

from . import sketch as cs
from .fft import fft_forward, fft_inverse, fft_real_pair, real_part_checked

__all__ = [
    "McbOperator",
    "McbForwardRecord",
    "mcb_forward",
    "mcb_backward",
    "full_bilinear_param_count",
    "mcb_param_count",
]

_UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class McbOperator:
    """A bundle of ``k >= 2`` count sketches sharing the output dimension ``d``."""

    d: int
    inputs: tuple
    seed: int | None = None

    def __post_init__(self):
        inputs = tuple(self.inputs)
        if len(inputs) < 2:
            raise ValueError("an MCB operator needs at least two inputs")
        if any(p.d != self.d for p in inputs):
            raise ValueError("all input sketches must have output dimension d")
        object.__setattr__(self, "inputs", inputs)

    @classmethod
    def sample(cls, seed, input_dims, d):
        """Sample one independent sketch per modality from child seeds of ``seed``."""
        params = tuple(cs.sample_params(cs.child_seed(seed, k), n, d)
                       for k, n in enumerate(input_dims))
        return cls(d, params, int(seed))

    @property
    def k(self):
        return len(self.inputs)

    @property
    def input_dims(self):
        return tuple(p.n for p in self.inputs)


@dataclass
class McbForwardRecord:
    """Values cached by the forward pass for use in :func:`mcb_backward`."""

    inputs: list
    sketches: list
    spectra: list
    output: np.ndarray


def _check_inputs(op, vs):
    if len(vs) != op.k:
        raise ValueError(f"operator takes {op.k} inputs, got {len(vs)}")
    vs = [np.asarray(v, dtype=np.float64) for v in vs]
    for j, (v, p) in enumerate(zip(vs, op.inputs)):
        if v.ndim == 0 or v.shape[-1] != p.n:
            raise ValueError(f"input {j}: expected last dimension {p.n}, got {v.shape}")
    return vs


def _row_norms(y):
    return np.sqrt(np.einsum("...i,...i->...", y, y))[..., None]


def _residue_floor(norms):
    # rounding scale of the product of spectra
    return 1e-12 * float(np.prod([np.max(nrm, initial=0.0) for nrm in norms])) + 1e-300


# Outputs smaller than this fraction of the product of sketch norms are
# FFT rounding noise (typically structurally empty buckets) and are zeroed.
SNAP_TOL = 1e-13


def _snap(output, norms):
    scale = norms[0]
    for nrm in norms[1:]:
        scale = scale * nrm
    output[np.abs(output) < SNAP_TOL * scale] = 0.0
    return output


def _spectra(sketches):
    """FFT of every sketch, pairing equal-shaped real inputs into one transform."""
    spectra = [None] * len(sketches)
    pending = None
    for j, y in enumerate(sketches):
        if pending is not None and sketches[pending].shape == y.shape:
            spectra[pending], spectra[j] = fft_real_pair(sketches[pending], y)
            pending = None
        else:
            if pending is not None:
                spectra[pending] = fft_forward(sketches[pending])
            pending = j
    if pending is not None:
        spectra[pending] = fft_forward(sketches[pending])
    return spectra


def mcb_forward(op, vs):
    """Pool the inputs ``vs`` (one array per modality, shape ``(..., n_j)``).

    Leading axes broadcast against each other, so a batch of ``x`` can be
    pooled with a single ``q``. Returns a :class:`McbForwardRecord` whose
    ``output`` has shape ``(..., d)``.
    """
    vs = _check_inputs(op, vs)
    sketches = [cs.apply(p, v) for p, v in zip(op.inputs, vs)]
    spectra = _spectra(sketches)
    prod = spectra[0]
    for spec in spectra[1:]:
        prod = prod * spec
    norms = [_row_norms(y) for y in sketches]
    output = real_part_checked(fft_inverse(prod), _residue_floor(norms))
    return McbForwardRecord(vs, sketches, spectra, _snap(output, norms))


def _others_product(spectra, j):
    prod = None
    for i, spec in enumerate(spectra):
        if i != j:
            prod = spec if prod is None else prod * spec
    return prod


def _unbroadcast(grad, shape):
    """Sum ``grad`` over axes that were broadcast to reach its shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def mcb_backward(op, rec, g):
    """Gradients of a loss with respect to each input, given ``dL/doutput = g``.

    For fixed other inputs the map from input ``j`` to the output is linear,
    so its gradient is the adjoint chain: correlate ``g`` with the
    convolution of the other sketches (multiply by the conjugate of their
    spectra) and pull the result back through the count sketch.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != rec.output.shape:
        raise ValueError(f"gradient shape {g.shape} != output shape {rec.output.shape}")
    g_spec = fft_forward(g)
    corr_spectra = [g_spec * np.conj(_others_product(rec.spectra, j)) for j in range(op.k)]
    g_sketches = [None] * op.k
    # both correlations are spectra of real signals: invert two at once as
    # the real and imaginary parts of one transform
    for j in range(0, op.k - 1, 2):
        both = fft_inverse(corr_spectra[j] + 1j * corr_spectra[j + 1])
        g_sketches[j] = np.ascontiguousarray(both.real)
        g_sketches[j + 1] = np.ascontiguousarray(both.imag)
    if op.k % 2:
        g_sketches[-1] = fft_inverse(corr_spectra[-1]).real
    return [_unbroadcast(cs.apply_adjoint(p, gs), v.shape)
            for p, gs, v in zip(op.inputs, g_sketches, rec.inputs)]


def _checked_product(*factors):
    if any(int(f) < 1 for f in factors):
        raise ValueError(f"all sizes must be positive, got {factors}")
    total = 1
    for f in factors:
        total *= int(f)
    if total > _UINT64_MAX:
        raise ValueError(f"parameter count {total} overflows 64 bits")
    return total


def full_bilinear_param_count(n1, n2, outputs):
    """Weights of a linear classifier over the explicit outer product."""
    return _checked_product(n1, n2, outputs)


def mcb_param_count(d, outputs):
    """Weights of a linear classifier over the pooled feature.

    The sketch itself has no learned parameters, so the count does not
    depend on the input dimensions.
    """
    return _checked_product(d, outputs)
