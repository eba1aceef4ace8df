"""Soft spatial attention driven by compact bilinear pooling.

Every grid location is pooled with the query through one shared MCB
operator, normalised (signed square root, then L2), and scored by two
per-location projections (``d -> hidden`` with ReLU, ``hidden -> glimpses``).
A softmax over locations turns each glimpse's scores into an attention map,
and the attended vector of a glimpse is the map-weighted sum of the grid
vectors. Glimpse outputs are concatenated.
"""

from dataclasses import dataclass

import numpy as np

from .mcb import McbOperator, mcb_backward, mcb_forward
from .nn import (
    LinearLayer,
    init_linear,
    l2_normalize_backward,
    l2_normalize_forward,
    linear_backward,
    linear_forward,
    relu_backward,
    relu_forward,
    signed_sqrt_backward,
    signed_sqrt_forward,
    softmax,
)

__all__ = ["AttentionHead", "AttentionCache", "attention_forward", "attention_backward"]

DEFAULT_HIDDEN = 64


@dataclass(eq=False)
class AttentionHead:
    mcb: McbOperator
    proj1: LinearLayer
    proj2: LinearLayer
    glimpses: int

    def __post_init__(self):
        if self.mcb.k != 2:
            raise ValueError("attention pools exactly two inputs (grid vector, query)")
        d = self.mcb.d
        hidden = self.proj1.weight.shape[0]
        if self.proj1.weight.shape[1] != d:
            raise ValueError(f"proj1 must take {d} inputs")
        if self.proj2.weight.shape != (self.glimpses, hidden):
            raise ValueError(f"proj2 must map {hidden} -> {self.glimpses}")

    @classmethod
    def create(cls, rng, grid_dim, query_dim, d, glimpses=1, hidden=DEFAULT_HIDDEN, seed=0):
        """Fresh head; the shared MCB operator is sampled from ``seed``."""
        op = McbOperator.sample(seed, (grid_dim, query_dim), d)
        return cls(op, init_linear(rng, d, hidden), init_linear(rng, hidden, glimpses), glimpses)

    @property
    def grid_dim(self):
        return self.mcb.inputs[0].n

    @property
    def query_dim(self):
        return self.mcb.inputs[1].n

    @property
    def output_dim(self):
        return self.glimpses * self.grid_dim

    def parameters(self):
        params = {}
        for name, layer in (("proj1", self.proj1), ("proj2", self.proj2)):
            for key, arr in layer.parameters().items():
                params[f"{name}.{key}"] = arr
        return params


@dataclass
class AttentionCache:
    grid: np.ndarray
    query: np.ndarray
    record: object
    sqrt_out: np.ndarray
    hidden_pre: np.ndarray
    hidden: np.ndarray
    weights: np.ndarray
    batched: bool


def attention_forward(head, grid, query):
    """Attend over ``grid`` (``(G, n_v)`` or ``(B, G, n_v)``) given ``query``.

    Returns ``(attended, maps, cache)``: ``attended`` has length
    ``glimpses * n_v`` and ``maps`` has shape ``(glimpses, G)`` (with a
    leading batch axis for batched input). Each map sums to one.
    """
    grid = np.asarray(grid, dtype=np.float64)
    query = np.asarray(query, dtype=np.float64)
    batched = grid.ndim == 3
    if not batched:
        grid, query = grid[None], query[None]
    if grid.ndim != 3 or query.ndim != 2 or grid.shape[0] != query.shape[0]:
        raise ValueError(f"bad shapes: grid {grid.shape}, query {query.shape}")
    if grid.shape[1] < 1:
        raise ValueError("grid must have at least one location")
    if grid.shape[2] != head.grid_dim or query.shape[1] != head.query_dim:
        raise ValueError(
            f"expected grid dim {head.grid_dim} and query dim {head.query_dim}, "
            f"got {grid.shape[2]} and {query.shape[1]}")

    rec = mcb_forward(head.mcb, [grid, query[:, None, :]])
    sqrt_out = signed_sqrt_forward(rec.output)
    normed = l2_normalize_forward(sqrt_out)
    hidden_pre = linear_forward(head.proj1, normed)
    hidden = relu_forward(hidden_pre)
    logits = linear_forward(head.proj2, hidden)          # (B, G, K)
    weights = softmax(logits, axis=1)
    attended = np.einsum("bgk,bgn->bkn", weights, grid)
    attended = attended.reshape(grid.shape[0], -1)
    maps = np.swapaxes(weights, 1, 2)
    cache = AttentionCache(grid, query, rec, sqrt_out, hidden_pre, hidden, weights, batched)
    if not batched:
        return attended[0], maps[0], cache
    return attended, maps, cache


def attention_backward(head, cache, g_attended):
    """Gradients for the projections, the grid and the query.

    Returns a dict with keys ``proj1.weight``, ``proj1.bias``,
    ``proj2.weight``, ``proj2.bias``, ``grid`` and ``query``. Parameter
    gradients are summed over the batch.
    """
    g = np.asarray(g_attended, dtype=np.float64)
    if not cache.batched:
        g = g[None]
    grid, weights = cache.grid, cache.weights
    b, n_g, n_v = grid.shape
    k = head.glimpses
    if g.shape != (b, k * n_v):
        raise ValueError(f"expected gradient shape {(b, k * n_v)}, got {g.shape}")
    g = g.reshape(b, k, n_v)

    g_grid = np.einsum("bgk,bkn->bgn", weights, g)
    g_w = np.einsum("bkn,bgn->bgk", g, grid)
    # softmax Jacobian over locations: y * (g - <y, g>)
    g_logits = weights * (g_w - np.sum(weights * g_w, axis=1, keepdims=True))

    gw2, gb2, g_hidden = linear_backward(head.proj2, cache.hidden, g_logits)
    g_hidden_pre = relu_backward(cache.hidden_pre, g_hidden)
    normed = l2_normalize_forward(cache.sqrt_out)
    gw1, gb1, g_normed = linear_backward(head.proj1, normed, g_hidden_pre)
    g_sqrt = l2_normalize_backward(cache.sqrt_out, g_normed)
    g_mcb = signed_sqrt_backward(cache.record.output, g_sqrt)
    gx, gq = mcb_backward(head.mcb, cache.record, g_mcb)

    g_grid = g_grid + gx
    g_query = gq.reshape(b, -1)
    if not cache.batched:
        g_grid, g_query = g_grid[0], g_query[0]
    return {
        "proj1.weight": gw1,
        "proj1.bias": gb1,
        "proj2.weight": gw2,
        "proj2.bias": gb2,
        "grid": g_grid,
        "query": g_query,
    }
