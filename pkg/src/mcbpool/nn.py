"""Differentiable building blocks: normalisation, linear layers, pooling
baselines, softmax cross-entropy and Adam.

Every forward function works along the last axis and accepts arbitrary
leading (batch) axes. Backward functions take the forward input and the
upstream gradient and return the gradient with respect to that input.
"""

from dataclasses import dataclass, field

import numpy as np

from .mcb import mcb_backward, mcb_forward

__all__ = [
    "DELTA",
    "signed_sqrt_forward",
    "signed_sqrt_backward",
    "l2_normalize_forward",
    "l2_normalize_backward",
    "relu_forward",
    "relu_backward",
    "LinearLayer",
    "init_linear",
    "linear_forward",
    "linear_backward",
    "POOLING_TAGS",
    "PoolingMethod",
    "DEFAULT_D",
    "parse_method",
    "pool",
    "pool_backward",
    "softmax",
    "softmax_cross_entropy",
    "Adam",
]

# Regulariser for the signed square root derivative and the L2 norm guard.
DELTA = 1e-12


def signed_sqrt_forward(v):
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.sqrt(np.abs(v))


def signed_sqrt_backward(v, g):
    """``g / (2 sqrt(|v| + DELTA))``; finite at ``v = 0``."""
    v = np.asarray(v, dtype=np.float64)
    return np.asarray(g, dtype=np.float64) / (2.0 * np.sqrt(np.abs(v) + DELTA))


def _norms(v):
    return np.sqrt(np.sum(v * v, axis=-1, keepdims=True))


def l2_normalize_forward(v):
    """``v / max(||v||, DELTA)``; the zero vector maps to itself."""
    v = np.asarray(v, dtype=np.float64)
    return v / np.maximum(_norms(v), DELTA)


def l2_normalize_backward(v, g):
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    norm = np.maximum(_norms(v), DELTA)
    y = v / norm
    return (g - y * np.sum(y * g, axis=-1, keepdims=True)) / norm


def relu_forward(v):
    return np.maximum(v, 0.0)


def relu_backward(v, g):
    return np.where(np.asarray(v) > 0, g, 0.0)


@dataclass(eq=False)
class LinearLayer:
    """Affine map ``y = weight @ v + bias``; ``bias`` may be ``None``."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError("weight must be a 2-D (out x in) matrix")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64)
            if self.bias.shape != (self.weight.shape[0],):
                raise ValueError("bias length must equal the number of outputs")

    @property
    def shape(self):
        return self.weight.shape

    def parameters(self):
        params = {"weight": self.weight}
        if self.bias is not None:
            params["bias"] = self.bias
        return params

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters().values())


def init_linear(rng, n_in, n_out, bias=True):
    """Uniform init in ``+-sqrt(6 / (n_in + n_out))``; zero bias."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    weight = rng.uniform(-limit, limit, size=(n_out, n_in))
    return LinearLayer(weight, np.zeros(n_out) if bias else None)


def linear_forward(layer, v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 0 or v.shape[-1] != layer.weight.shape[1]:
        raise ValueError(f"expected last dimension {layer.weight.shape[1]}, got {v.shape}")
    y = v @ layer.weight.T
    if layer.bias is not None:
        y = y + layer.bias
    return y


def linear_backward(layer, v, g):
    """Returns ``(grad_weight, grad_bias, grad_input)``.

    Leading axes of ``v`` and ``g`` are summed out of the parameter
    gradients. ``grad_bias`` is ``None`` for a bias-free layer.
    """
    v = np.asarray(v, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    n_out, n_in = layer.weight.shape
    if v.shape[-1] != n_in or g.shape[-1] != n_out or v.shape[:-1] != g.shape[:-1]:
        raise ValueError(f"shape mismatch: v {v.shape}, g {g.shape}, weight {layer.weight.shape}")
    g2 = g.reshape(-1, n_out)
    grad_weight = g2.T @ v.reshape(-1, n_in)
    grad_bias = g2.sum(axis=0) if layer.bias is not None else None
    return grad_weight, grad_bias, g @ layer.weight


POOLING_TAGS = ("eltwise-sum", "eltwise-product", "concat", "concat-fc", "full-bilinear", "mcb")

# Hidden width given to concat-fc when none is configured.
DEFAULT_CONCAT_FC_HIDDEN = 64
DEFAULT_D = 256
METHOD_ALIASES = {"sum": "eltwise-sum", "product": "eltwise-product", "bilinear": "full-bilinear"}


@dataclass(frozen=True)
class PoolingMethod:
    """How two modality vectors are combined.

    ``d`` is the MCB output size. ``hidden`` lists the widths of the ReLU
    fully connected layers stacked after pooling; ``concat-fc`` defaults to
    one layer of width 64.
    """

    tag: str
    d: int | None = None
    hidden: tuple = field(default=())

    def __post_init__(self):
        if self.tag not in POOLING_TAGS:
            raise ValueError(f"unknown pooling method {self.tag!r}; choose from {POOLING_TAGS}")
        if self.tag == "mcb" and (self.d is None or self.d < 1):
            raise ValueError("mcb pooling requires a positive d")
        hidden = tuple(int(h) for h in self.hidden)
        if self.tag == "concat-fc" and not hidden:
            hidden = (DEFAULT_CONCAT_FC_HIDDEN,)
        if any(h < 1 for h in hidden):
            raise ValueError("hidden widths must be positive")
        object.__setattr__(self, "hidden", hidden)

    @property
    def is_bilinear(self):
        return self.tag in ("full-bilinear", "mcb")

    def output_dim(self, n1, n2):
        if self.tag in ("eltwise-sum", "eltwise-product"):
            return n1
        if self.tag in ("concat", "concat-fc"):
            return n1 + n2
        if self.tag == "full-bilinear":
            return n1 * n2
        return self.d


def parse_method(method, d=DEFAULT_D, hidden=()):
    """Coerce a tag (aliases ``sum``, ``product``, ``bilinear`` allowed) to a
    :class:`PoolingMethod`; ``d`` applies only to ``mcb``. Methods pass through."""
    if isinstance(method, PoolingMethod):
        return method
    tag = METHOD_ALIASES.get(method, method)
    return PoolingMethod(tag, d=d if tag == "mcb" else None, hidden=hidden)


def _check_pair(method, x, q):
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if x.shape[:-1] != q.shape[:-1]:
        raise ValueError(f"batch shapes differ: {x.shape} vs {q.shape}")
    if method.tag in ("eltwise-sum", "eltwise-product") and x.shape[-1] != q.shape[-1]:
        raise ValueError(f"{method.tag} needs equal lengths, got {x.shape[-1]} and {q.shape[-1]}")
    return x, q


def _pool_raw(method, x, q, mcb_op):
    tag = method.tag
    if tag == "eltwise-sum":
        return x + q
    if tag == "eltwise-product":
        return x * q
    if tag in ("concat", "concat-fc"):
        return np.concatenate([x, q], axis=-1)
    if tag == "full-bilinear":
        outer = x[..., :, None] * q[..., None, :]
        return outer.reshape(x.shape[:-1] + (x.shape[-1] * q.shape[-1],))
    if mcb_op is None:
        raise ValueError("mcb pooling needs an McbOperator")
    return mcb_forward(mcb_op, [x, q]).output


def pool(method, x, q, *, mcb_op=None, fc=None):
    """Combine ``x`` and ``q`` with ``method``.

    ``concat-fc`` passes the concatenation through ``fc`` followed by a ReLU
    (when ``fc`` is given); the remaining hidden layers of a model are not
    part of pooling.
    """
    x, q = _check_pair(method, x, q)
    out = _pool_raw(method, x, q, mcb_op)
    if method.tag == "concat-fc" and fc is not None:
        out = relu_forward(linear_forward(fc, out))
    return out


def pool_backward(method, x, q, g, *, mcb_op=None, mcb_record=None):
    """Gradients ``(gx, gq)`` of the raw pooling (no ``fc`` stage)."""
    x, q = _check_pair(method, x, q)
    g = np.asarray(g, dtype=np.float64)
    tag = method.tag
    if tag == "eltwise-sum":
        return g.copy(), g.copy()
    if tag == "eltwise-product":
        return g * q, g * x
    if tag in ("concat", "concat-fc"):
        n1 = x.shape[-1]
        return g[..., :n1].copy(), g[..., n1:].copy()
    if tag == "full-bilinear":
        gm = g.reshape(x.shape[:-1] + (x.shape[-1], q.shape[-1]))
        return np.einsum("...ij,...j->...i", gm, q), np.einsum("...ij,...i->...j", gm, x)
    if mcb_record is None:
        mcb_record = mcb_forward(mcb_op, [x, q])
    gx, gq = mcb_backward(mcb_op, mcb_record, g)
    return gx, gq


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    z = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_cross_entropy(logits, label):
    """Loss ``-log softmax(logits)[label]`` and its gradient.

    For a batch (``logits`` of shape ``(B, C)``, ``label`` of shape ``(B,)``)
    the loss is the batch mean and the gradient is that of the mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    z = np.atleast_2d(logits)
    labels = np.atleast_1d(np.asarray(label))
    n, c = z.shape
    if labels.shape != (n,) or not np.issubdtype(labels.dtype, np.integer):
        raise ValueError("labels must be integers, one per row of logits")
    if np.any(labels < 0) or np.any(labels >= c):
        raise ValueError(f"label out of range [0, {c})")
    shifted = z - np.max(z, axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(n)
    losses = log_norm - shifted[rows, labels]
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / n


class Adam:
    """Adam with bias correction.

    ``lr`` is the step size; ``stab_eps`` is the denominator guard.

    Moment buffers are kept per parameter name; :meth:`step` updates the
    arrays in ``params`` in place.
    """

    def __init__(self, lr=0.0007, beta1=0.9, beta2=0.999, stab_eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.stab_eps = stab_eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        if params.keys() != grads.keys():
            raise ValueError("params and grads must have the same keys")
        for name, p in params.items():
            if np.shape(grads[name]) != p.shape:
                raise ValueError(f"{name}: grad shape {np.shape(grads[name])} != {p.shape}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.stab_eps)
        return params
