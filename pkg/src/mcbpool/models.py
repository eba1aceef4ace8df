"""Trainable pipelines assembled from the layers in :mod:`mcbpool.nn`.

Classification::

    [attention over grid] -> pool(x, q) -> [signed sqrt -> L2] -> (FC -> ReLU)* -> linear

Grounding (one score per proposal, softmax over proposals)::

    proposals -> linear embed -> L2,  phrase -> L2
    pool per proposal -> [signed sqrt -> L2] -> (FC -> ReLU)* -> linear -> score

Networks expose ``parameters()`` (name -> array, updated in place by the
optimiser), ``forward`` returning outputs plus a cache, and ``backward``
returning gradients for every parameter and both inputs.
"""

from dataclasses import dataclass

import numpy as np

from .attention import DEFAULT_HIDDEN, AttentionHead, attention_backward, attention_forward
from .mcb import McbOperator, mcb_forward
from .nn import (
    PoolingMethod,
    init_linear,
    l2_normalize_backward,
    l2_normalize_forward,
    linear_backward,
    linear_forward,
    pool,
    pool_backward,
    relu_backward,
    relu_forward,
    signed_sqrt_backward,
    signed_sqrt_forward,
    softmax_cross_entropy,
)
from .sketch import child_seed

__all__ = ["ModelSpec", "PoolingNetwork", "GroundingNetwork", "FULL_BILINEAR_CAP"]

# Largest n1 * n2 * C accepted for explicit outer-product pooling.
FULL_BILINEAR_CAP = 10**7

# spawn keys of the streams derived from a model seed
_INIT_STREAM = 3
_POOL_SKETCH = 101
_ATTENTION_SKETCH = 102


@dataclass(frozen=True)
class ModelSpec:
    """Configuration of a pooling model.

    ``normalization`` defaults to on for the bilinear methods (MCB and full
    bilinear) and off otherwise. ``attention_d`` is the MCB size used to
    score grid locations; it defaults to the pooling ``d`` or 64.
    """

    pooling: PoolingMethod
    use_attention: bool = False
    glimpses: int = 1
    normalization: bool | None = None
    classifier_bias: bool = False
    attention_hidden: int = DEFAULT_HIDDEN
    attention_d: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.glimpses < 1:
            raise ValueError("glimpses must be >= 1")
        if self.normalization is None:
            object.__setattr__(self, "normalization", self.pooling.is_bilinear)

    @property
    def effective_attention_d(self):
        if self.attention_d is not None:
            return self.attention_d
        return self.pooling.d if self.pooling.d else 64


def _init_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_INIT_STREAM,)))


class _Trunk:
    """pool -> [signed sqrt -> L2] -> hidden ReLU stack -> output linear."""

    def __init__(self, spec, n1, n2, n_out, rng, out_bias):
        method = spec.pooling
        if method.tag == "full-bilinear" and n1 * n2 * n_out > FULL_BILINEAR_CAP:
            raise ValueError(
                f"full bilinear pooling of {n1}x{n2} -> {n_out} needs "
                f"{n1 * n2 * n_out} weights, above the cap of {FULL_BILINEAR_CAP}")
        self.method = method
        self.normalization = spec.normalization
        self.mcb_op = None
        if method.tag == "mcb":
            self.mcb_op = McbOperator.sample(child_seed(spec.seed, _POOL_SKETCH), (n1, n2), method.d)
        width = method.output_dim(n1, n2)
        self.hidden = []
        for h in method.hidden:
            self.hidden.append(init_linear(rng, width, h))
            width = h
        self.out = init_linear(rng, width, n_out, bias=out_bias)

    def parameters(self, prefix=""):
        params = {}
        for i, layer in enumerate(self.hidden):
            for key, arr in layer.parameters().items():
                params[f"{prefix}fc{i}.{key}"] = arr
        for key, arr in self.out.parameters().items():
            params[f"{prefix}classifier.{key}"] = arr
        return params

    def forward(self, x, q):
        cache = {"x": x, "q": q}
        if self.mcb_op is not None:
            cache["mcb"] = mcb_forward(self.mcb_op, [x, q])
            feat = cache["mcb"].output
        else:
            feat = pool(self.method, x, q)
        cache["pooled"] = feat
        if self.normalization:
            feat = l2_normalize_forward(signed_sqrt_forward(feat))
        pre, inputs = [], []
        for layer in self.hidden:
            inputs.append(feat)
            h = linear_forward(layer, feat)
            pre.append(h)
            feat = relu_forward(h)
        cache["pre"] = pre
        cache["inputs"] = inputs
        cache["final_in"] = feat
        return linear_forward(self.out, feat), cache

    def backward(self, cache, g, prefix=""):
        grads = {}
        gw, gb, g = linear_backward(self.out, cache["final_in"], g)
        grads[f"{prefix}classifier.weight"] = gw
        if gb is not None:
            grads[f"{prefix}classifier.bias"] = gb
        for i in reversed(range(len(self.hidden))):
            g = relu_backward(cache["pre"][i], g)
            gw, gb, g = linear_backward(self.hidden[i], cache["inputs"][i], g)
            grads[f"{prefix}fc{i}.weight"] = gw
            grads[f"{prefix}fc{i}.bias"] = gb
        pooled = cache["pooled"]
        if self.normalization:
            s = signed_sqrt_forward(pooled)
            g = signed_sqrt_backward(pooled, l2_normalize_backward(s, g))
        gx, gq = pool_backward(self.method, cache["x"], cache["q"], g,
                               mcb_op=self.mcb_op, mcb_record=cache.get("mcb"))
        return grads, gx, gq


class PoolingNetwork:
    """Classifier over ``(x, q)`` pairs, or ``(grid, q)`` with attention.

    Parameters
    ----------
    spec : ModelSpec
    input_dims : (int, int)
        Dimension of ``x`` (of each grid vector with attention) and of ``q``.
    n_classes : int
    """

    def __init__(self, spec, input_dims, n_classes):
        n1, n2 = (int(n) for n in input_dims)
        self.spec = spec
        self.input_dims = (n1, n2)
        self.n_classes = int(n_classes)
        rng = _init_rng(spec.seed)
        self.attention = None
        pooled_x = n1
        if spec.use_attention:
            self.attention = AttentionHead.create(
                rng, n1, n2, spec.effective_attention_d, spec.glimpses,
                spec.attention_hidden, seed=child_seed(spec.seed, _ATTENTION_SKETCH))
            pooled_x = self.attention.output_dim
        self.trunk = _Trunk(spec, pooled_x, n2, self.n_classes, rng, spec.classifier_bias)

    def parameters(self):
        params = {}
        if self.attention is not None:
            for key, arr in self.attention.parameters().items():
                params[f"attention.{key}"] = arr
        params.update(self.trunk.parameters())
        return params

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters().values())

    def _check(self, x, q):
        x = np.asarray(x, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        want_ndim = 3 if self.attention is not None else 2
        if x.ndim != want_ndim or q.ndim != 2 or len(x) != len(q):
            raise ValueError(f"bad input shapes {x.shape}, {q.shape}")
        if x.shape[-1] != self.input_dims[0] or q.shape[-1] != self.input_dims[1]:
            raise ValueError(
                f"expected dims {self.input_dims}, got ({x.shape[-1]}, {q.shape[-1]})")
        return x, q

    def forward(self, x, q):
        x, q = self._check(x, q)
        cache = {}
        feat = x
        if self.attention is not None:
            feat, cache["maps"], cache["attention"] = attention_forward(self.attention, x, q)
        logits, cache["trunk"] = self.trunk.forward(feat, q)
        return logits, cache

    def backward(self, cache, grad_logits):
        grads, gx, gq = self.trunk.backward(cache["trunk"], grad_logits)
        if self.attention is not None:
            att = attention_backward(self.attention, cache["attention"], gx)
            for key in self.attention.parameters():
                grads[f"attention.{key}"] = att[key]
            gx = att["grid"]
            gq = gq + att["query"]
        grads["x"] = gx
        grads["q"] = gq
        return grads

    def loss_and_grads(self, x, q, labels):
        logits, cache = self.forward(x, q)
        loss, g = softmax_cross_entropy(logits, labels)
        return loss, self.backward(cache, g)

    def loss(self, x, q, labels):
        return softmax_cross_entropy(self.forward(x, q)[0], labels)[0]

    def decision_function(self, x, q, batch_size=1024):
        x, q = self._check(x, q)
        out = [self.forward(x[i:i + batch_size], q[i:i + batch_size])[0]
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out, axis=0)

    def attention_maps(self, x, q):
        if self.attention is None:
            raise ValueError("model has no attention head")
        x, q = self._check(x, q)
        return attention_forward(self.attention, x, q)[1]


class GroundingNetwork:
    """Scores ``P`` proposals against a phrase; trained with softmax over proposals.

    The proposal embedding has ``embed_dim`` outputs (defaults to the phrase
    dimension so element-wise pooling is defined).
    """

    def __init__(self, spec, n_v, n_p, embed_dim=None):
        self.spec = spec
        self.n_v, self.n_p = int(n_v), int(n_p)
        self.embed_dim = int(embed_dim or n_p)
        rng = _init_rng(spec.seed)
        self.embed = init_linear(rng, self.n_v, self.embed_dim)
        self.trunk = _Trunk(spec, self.embed_dim, self.n_p, 1, rng, False)

    def parameters(self):
        params = {f"embed.{k}": v for k, v in self.embed.parameters().items()}
        params.update(self.trunk.parameters())
        return params

    @property
    def n_params(self):
        return sum(p.size for p in self.parameters().values())

    def _check(self, phrases, proposals):
        phrases = np.asarray(phrases, dtype=np.float64)
        proposals = np.asarray(proposals, dtype=np.float64)
        if (phrases.ndim != 2 or proposals.ndim != 3 or len(phrases) != len(proposals)
                or phrases.shape[1] != self.n_p or proposals.shape[2] != self.n_v):
            raise ValueError(f"bad input shapes {phrases.shape}, {proposals.shape}")
        return phrases, proposals

    def forward(self, phrases, proposals):
        phrases, proposals = self._check(phrases, proposals)
        emb = linear_forward(self.embed, proposals)
        v = l2_normalize_forward(emb)
        p = np.repeat(l2_normalize_forward(phrases)[:, None, :], proposals.shape[1], axis=1)
        scores, trunk_cache = self.trunk.forward(v, p)
        cache = {"phrases": phrases, "proposals": proposals, "emb": emb, "trunk": trunk_cache}
        return scores[..., 0], cache

    def backward(self, cache, grad_scores):
        grads, gv, gp = self.trunk.backward(cache["trunk"], grad_scores[..., None])
        g_emb = l2_normalize_backward(cache["emb"], gv)
        gw, gb, g_props = linear_backward(self.embed, cache["proposals"], g_emb)
        grads["embed.weight"] = gw
        grads["embed.bias"] = gb
        grads["proposals"] = g_props
        grads["phrases"] = l2_normalize_backward(cache["phrases"], gp.sum(axis=1))
        return grads

    def loss_and_grads(self, phrases, proposals, correct):
        scores, cache = self.forward(phrases, proposals)
        loss, g = softmax_cross_entropy(scores, correct)
        return loss, self.backward(cache, g)

    def loss(self, phrases, proposals, correct):
        return softmax_cross_entropy(self.forward(phrases, proposals)[0], correct)[0]

    def decision_function(self, phrases, proposals, batch_size=1024):
        phrases, proposals = self._check(phrases, proposals)
        out = [self.forward(phrases[i:i + batch_size], proposals[i:i + batch_size])[0]
               for i in range(0, len(phrases), batch_size)]
        return np.concatenate(out, axis=0)
