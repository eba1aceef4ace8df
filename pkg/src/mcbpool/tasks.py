"""Synthetic tasks with a planted bilinear ground truth.

Three generators:

* classification of ``(x, q)`` pairs, labelled by ``argmax_c x^T A_c q``;
* the same with ``x`` hidden among distractors on a spatial grid, the
  relevant location being the one with the largest planted key score
  ``x_g^T K q`` (exercises attention);
* proposal ranking, where the correct proposal maximises ``p^T M v``
  (a stand-in for phrase grounding).

All feature vectors lie on the unit sphere. Planted matrices are drawn
i.i.d. Gaussian and Frobenius-normalised. Sample ``i`` of a dataset is drawn
from its own stream ``SeedSequence(seed, spawn_key=(1, i))``, so datasets
are pure functions of the task and the index range, and disjoint index
ranges give disjoint train/validation/test splits.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ClassificationData",
    "GroundingData",
    "BilinearClassificationTask",
    "GridClassificationTask",
    "GroundingRankingTask",
    "gen_classification",
    "gen_grid_classification",
    "gen_grounding",
    "planted_accuracy",
    "planted_grounding_accuracy",
]

MAX_LABEL_SHARE = 0.9
MAX_RETRIES = 16
_PROBE = 2000


def _unit(rng, *shape):
    v = rng.standard_normal(shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def _planted(rng, *shape):
    m = rng.standard_normal(shape)
    norms = np.sqrt(np.sum(m * m, axis=(-2, -1), keepdims=True))
    return m / norms


def _sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, index)))


def _probe_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(2,)))


def _planted_rng(seed):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))


def _argmax(scores):
    # np.argmax returns the first maximum: lowest-index tie-break
    return np.argmax(scores, axis=-1)


def _hash_arrays(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class ClassificationData:
    """Pairs ``(x, q)`` with integer labels. ``x`` may be a grid ``(N, G, n)``."""

    x: np.ndarray
    q: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return ClassificationData(self.x[idx], self.q[idx], self.labels[idx])

    def content_hash(self):
        return _hash_arrays(self.x, self.q, self.labels)


@dataclass(eq=False)
class GroundingData:
    """Phrase vectors, ``P`` proposal vectors per item, and the correct index."""

    phrases: np.ndarray
    proposals: np.ndarray
    correct: np.ndarray

    def __len__(self):
        return len(self.correct)

    def subset(self, idx):
        return GroundingData(self.phrases[idx], self.proposals[idx], self.correct[idx])

    def content_hash(self):
        return _hash_arrays(self.phrases, self.proposals, self.correct)


def _balanced(labels, n_values):
    counts = np.bincount(labels, minlength=n_values)
    return counts.max() <= MAX_LABEL_SHARE * len(labels)


@dataclass(eq=False)
class BilinearClassificationTask:
    """Planted bilinear classification; ``planted`` has shape ``(C, n1, n2)``.

    ``planted`` is drawn at construction when not supplied. If the noise-free
    labels of a probe sample are too unbalanced the matrices are redrawn
    from ``seed + 1``, ``seed + 2``, ... (at most 16 retries).
    """

    n1: int
    n2: int
    classes: int
    noise_sigma: float = 0.0
    seed: int = 0
    planted: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if min(self.n1, self.n2) < 1 or self.classes < 2:
            raise ValueError("need n1, n2 >= 1 and at least two classes")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.planted is None:
            self.planted = self._draw_planted()
        self.planted = np.asarray(self.planted, dtype=np.float64)
        if self.planted.shape != (self.classes, self.n1, self.n2):
            raise ValueError("planted must have shape (classes, n1, n2)")

    def _draw_planted(self):
        probe = _probe_rng(self.seed)
        x, q = _unit(probe, _PROBE, self.n1), _unit(probe, _PROBE, self.n2)
        for retry in range(MAX_RETRIES + 1):
            planted = _planted(_planted_rng(self.seed + retry), self.classes, self.n1, self.n2)
            if _balanced(_argmax(self.scores(x, q, planted)), self.classes):
                return planted
        raise ValueError("could not draw a planted task with balanced labels")

    def scores(self, x, q, planted=None):
        planted = self.planted if planted is None else planted
        return np.einsum("...i,cij,...j->...c", x, planted, q)


def gen_classification(task, count, start=0):
    """Samples ``start .. start + count - 1`` of ``task``.

    ``label = argmax_c (x^T A_c q + N(0, noise_sigma^2))``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    x = np.empty((count, task.n1))
    q = np.empty((count, task.n2))
    noise = np.empty((count, task.classes))
    for i in range(count):
        rng = _sample_rng(task.seed, start + i)
        x[i] = _unit(rng, task.n1)
        q[i] = _unit(rng, task.n2)
        noise[i] = rng.standard_normal(task.classes)
    labels = _argmax(task.scores(x, q) + task.noise_sigma * noise)
    return ClassificationData(x, q, labels)


def planted_accuracy(task, data):
    """Accuracy of the noise-free planted scorer on ``data`` (a ceiling proxy)."""
    return float(np.mean(_argmax(task.scores(data.x, data.q)) == data.labels))


@dataclass(eq=False)
class GridClassificationTask:
    """Planted classification where ``x`` sits on a grid of ``locations``.

    The relevant grid vector is the one maximising ``x_g^T K q``; its label
    follows the classification rule. ``key`` has shape ``(n_v, n_q)``.
    """

    n_v: int
    n_q: int
    classes: int
    locations: int
    noise_sigma: float = 0.0
    seed: int = 0
    key: np.ndarray = field(default=None, repr=False)
    planted: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.locations < 1:
            raise ValueError("locations must be >= 1")
        inner = BilinearClassificationTask(self.n_v, self.n_q, self.classes, self.noise_sigma,
                                           self.seed, self.planted)
        self.planted = inner.planted
        self._inner = inner
        if self.key is None:
            self.key = _planted(_planted_rng(self.seed + 1_000_003), self.n_v, self.n_q)
        self.key = np.asarray(self.key, dtype=np.float64)

    def salient(self, grid, q):
        return _argmax(np.einsum("...gi,ij,...j->...g", grid, self.key, q))

    def scores(self, x, q):
        return self._inner.scores(x, q)


def gen_grid_classification(task, count, start=0):
    if count < 1:
        raise ValueError("count must be >= 1")
    grid = np.empty((count, task.locations, task.n_v))
    q = np.empty((count, task.n_q))
    noise = np.empty((count, task.classes))
    for i in range(count):
        rng = _sample_rng(task.seed, start + i)
        grid[i] = _unit(rng, task.locations, task.n_v)
        q[i] = _unit(rng, task.n_q)
        noise[i] = rng.standard_normal(task.classes)
    where = task.salient(grid, q)
    x = grid[np.arange(count), where]
    labels = _argmax(task.scores(x, q) + task.noise_sigma * noise)
    return ClassificationData(grid, q, labels)


@dataclass(eq=False)
class GroundingRankingTask:
    """Planted proposal ranking; ``scorer`` has shape ``(n_p, n_v)``."""

    n_v: int
    n_p: int
    proposals: int
    noise_sigma: float = 0.0
    seed: int = 0
    scorer: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.proposals < 2:
            raise ValueError("need at least two proposals per item")
        if min(self.n_v, self.n_p) < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.scorer is None:
            self.scorer = self._draw_scorer()
        self.scorer = np.asarray(self.scorer, dtype=np.float64)
        if self.scorer.shape != (self.n_p, self.n_v):
            raise ValueError("scorer must have shape (n_p, n_v)")

    def _draw_scorer(self):
        probe = _probe_rng(self.seed)
        phrases = _unit(probe, _PROBE, self.n_p)
        props = _unit(probe, _PROBE, self.proposals, self.n_v)
        for retry in range(MAX_RETRIES + 1):
            scorer = _planted(_planted_rng(self.seed + retry), self.n_p, self.n_v)
            if _balanced(_argmax(self.scores(phrases, props, scorer)), self.proposals):
                return scorer
        raise ValueError("could not draw a planted scorer with balanced answers")

    def scores(self, phrases, proposals, scorer=None):
        scorer = self.scorer if scorer is None else scorer
        return np.einsum("...i,ij,...pj->...p", phrases, scorer, proposals)


def gen_grounding(task, count, start=0):
    if count < 1:
        raise ValueError("count must be >= 1")
    phrases = np.empty((count, task.n_p))
    proposals = np.empty((count, task.proposals, task.n_v))
    noise = np.empty((count, task.proposals))
    for i in range(count):
        rng = _sample_rng(task.seed, start + i)
        phrases[i] = _unit(rng, task.n_p)
        proposals[i] = _unit(rng, task.proposals, task.n_v)
        noise[i] = rng.standard_normal(task.proposals)
    correct = _argmax(task.scores(phrases, proposals) + task.noise_sigma * noise)
    return GroundingData(phrases, proposals, correct)


def planted_grounding_accuracy(task, data):
    return float(np.mean(_argmax(task.scores(data.phrases, data.proposals)) == data.correct))
