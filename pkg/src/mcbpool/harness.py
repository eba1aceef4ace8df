"""Training, evaluation, gradient checking and ablation runs.

Training uses Adam on the mean softmax cross-entropy over mini-batches,
records per-epoch accuracies, and keeps the parameters of the epoch with
the best validation accuracy (early stopping with epoch patience). A run is
a pure function of the model spec, the data and the training settings.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ConfigurationError, TrainingDivergedError
from .mcb import full_bilinear_param_count
from .models import FULL_BILINEAR_CAP, GroundingNetwork, ModelSpec, PoolingNetwork
from .nn import DEFAULT_D, Adam, parse_method, softmax_cross_entropy
from .tasks import (
    BilinearClassificationTask,
    ClassificationData,
    GroundingData,
    GroundingRankingTask,
    gen_classification,
    gen_grounding,
)

__all__ = [
    "TrainConfig",
    "TrainResult",
    "AblationRow",
    "AblationReport",
    "default_task",
    "default_grounding_task",
    "split_data",
    "build_model",
    "train",
    "evaluate",
    "gradient_errors",
    "grad_check",
    "count_params",
    "budget_match",
    "method_label",
    "ablate",
    "train_grounding",
    "ablate_grounding",
    "max_workers",
]

_SHUFFLE_STREAM = 4
FD_STEP = 1e-6
# Denominator floor of the relative gradient error; stops gradients that are
# exactly zero (e.g. a bias under a shift-invariant softmax) from turning
# finite-difference rounding into a spurious failure.
FD_FLOOR = 1e-4
BUDGET_TOLERANCE = 0.10


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings.

    The Adam defaults (step 0.0007, betas 0.9 / 0.999) are the published
    MCB training values.
    """

    epochs: int = 100
    batch_size: int = 32
    patience: int = 15
    lr: float = 0.0007
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_accuracy: float = float("nan")


def default_task(seed=0, noise_sigma=0.02, n1=16, n2=16, classes=8):
    """The desk-scale classification task used by the ablations."""
    return BilinearClassificationTask(n1, n2, classes, noise_sigma, seed)


def default_grounding_task(seed=0, noise_sigma=0.05, n_v=8, n_p=8, proposals=8):
    return GroundingRankingTask(n_v, n_p, proposals, noise_sigma, seed)


def split_data(task, n_train=4000, n_val=1000, n_test=1000, gen=None):
    """Disjoint train / validation / test index ranges of ``task``."""
    if gen is None:
        gen = gen_grounding if isinstance(task, GroundingRankingTask) else gen_classification
    train = gen(task, n_train, 0)
    val = gen(task, n_val, n_train)
    test = gen(task, n_test, n_train + n_val)
    return train, val, test


def build_model(spec, data, n_classes=None):
    """Fresh network for ``spec`` sized to ``data``."""
    if isinstance(data, GroundingData):
        return GroundingNetwork(spec, data.proposals.shape[-1], data.phrases.shape[-1])
    if spec.use_attention and data.x.ndim != 3:
        raise ValueError("attention needs grid-shaped inputs of shape (N, G, n)")
    if not spec.use_attention and data.x.ndim != 2:
        raise ValueError("grid inputs need use_attention=True")
    if n_classes is None:
        n_classes = int(data.labels.max()) + 1
    return PoolingNetwork(spec, (data.x.shape[-1], data.q.shape[-1]), n_classes)


def _inputs(data):
    if isinstance(data, GroundingData):
        return data.phrases, data.proposals, data.correct
    return data.x, data.q, data.labels


def evaluate(model, data):
    """Fraction of items whose arg-max score equals the label (lowest-index ties)."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    a, b, target = _inputs(data)
    scores = model.decision_function(a, b)
    return float(np.mean(np.argmax(scores, axis=1) == target))


def _snapshot(model):
    return {k: v.copy() for k, v in model.parameters().items()}


def _restore(model, snapshot):
    for k, v in model.parameters().items():
        v[...] = snapshot[k]


def fit_model(model, train_set, val_set, config=TrainConfig(), seed=0):
    """Train ``model`` in place; returns a :class:`TrainResult`.

    The per-epoch ``train_accuracy`` is the running accuracy of the
    mini-batch predictions made during that epoch (before each update).
    Without ``val_set`` the training set doubles as validation data.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if val_set is None:
        val_set = train_set
    params = model.parameters()
    opt = Adam(config.lr, config.beta1, config.beta2)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_SHUFFLE_STREAM,)))
    a, b, target = _inputs(train_set)
    n = len(target)
    result = TrainResult(model)
    best = _snapshot(model)
    best_val = evaluate(model, val_set)
    result.best_val_accuracy = best_val
    since_best = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, hits = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            scores, cache = model.forward(a[idx], b[idx])
            loss, g = softmax_cross_entropy(scores, target[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            grads = model.backward(cache, g)
            total += loss * len(idx)
            hits += int(np.sum(np.argmax(scores, axis=1) == target[idx]))
            opt.step(params, {k: grads[k] for k in params})
        val_acc = evaluate(model, val_set)
        result.history.append({
            "epoch": epoch,
            "loss": total / n,
            "train_accuracy": hits / n,
            "val_accuracy": val_acc,
        })
        if val_acc > best_val:
            best_val, best, since_best = val_acc, _snapshot(model), 0
            result.best_epoch = epoch
            result.best_val_accuracy = val_acc
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    _restore(model, best)
    return result


def train(spec, train_set, val_set=None, epochs=100, config=None, n_classes=None):
    """Build a model for ``spec`` and train it for at most ``epochs`` epochs.

    Returns the best-validation snapshot inside a :class:`TrainResult`.
    """
    config = replace(config or TrainConfig(), epochs=epochs)
    model = build_model(spec, train_set, n_classes)
    return fit_model(model, train_set, val_set, config, spec.seed)


def gradient_errors(model, inputs, step=FD_STEP):
    """Per-tensor relative error of backprop against central differences.

    ``inputs`` is ``(a, b, target)`` as accepted by ``model.loss``. The error
    of a tensor is ``max|analytic - numeric| / max(max|analytic|,
    max|numeric|, FD_FLOOR)``. Both input arrays are checked too, under the
    names used by ``model.backward``.
    """
    a, b, target = (np.array(v) for v in inputs)
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    _, grads = model.loss_and_grads(a, b, target)
    names = ("phrases", "proposals") if isinstance(model, GroundingNetwork) else ("x", "q")
    tensors = dict(model.parameters())
    tensors[names[0]] = a
    tensors[names[1]] = b
    errors = {}
    for name, arr in tensors.items():
        numeric = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            old = arr[i]
            arr[i] = old + step
            up = model.loss(a, b, target)
            arr[i] = old - step
            down = model.loss(a, b, target)
            arr[i] = old
            numeric[i] = (up - down) / (2 * step)
        analytic = grads[name]
        denom = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), FD_FLOOR)
        errors[name] = float(np.max(np.abs(analytic - numeric)) / denom)
    return errors


def grad_check(spec, sample, n_classes=None):
    """Maximum relative gradient error of a freshly built model on ``sample``."""
    model = build_model(spec, sample, n_classes)
    return max(gradient_errors(model, _inputs(sample)).values())


def count_params(spec, input_dims, n_classes):
    """Learned parameters of a classification model, by enumerating its tensors."""
    return PoolingNetwork(spec, input_dims, n_classes).n_params


def _stack_params(width_in, widths, n_classes):
    total, prev = 0, width_in
    for w in widths:
        total += prev * w + w
        prev = w
    return total + prev * n_classes


def budget_match(method, target, n1, n2, n_classes, tolerance=BUDGET_TOLERANCE):
    """Resize the hidden FC stack of a non-bilinear ``method`` to ``target`` parameters.

    Every hidden layer gets the same width ``w`` (one layer is added when
    the method has none); the ``w`` whose count is closest to ``target`` is
    chosen. Raises :class:`ConfigurationError` if no width lands within
    ``tolerance``.
    """
    if method.is_bilinear:
        return method
    depth = max(len(method.hidden), 1)
    width_in = method.output_dim(n1, n2)
    best_w, best_gap = None, None
    w = 1
    while True:
        count = _stack_params(width_in, [w] * depth, n_classes)
        gap = abs(count - target)
        if best_gap is None or gap < best_gap:
            best_w, best_gap = w, gap
        if count > target:
            break
        w += 1
    if best_gap > tolerance * target:
        raise ConfigurationError(
            f"cannot match {method.tag} to {target} parameters within {tolerance:.0%}")
    return replace(method, hidden=(best_w,) * depth)


def method_label(method):
    if method.tag == "mcb":
        extra = f"d={method.d}"
    elif method.tag == "full-bilinear":
        extra = ""
    else:
        extra = "fc=" + "x".join(str(h) for h in method.hidden) if method.hidden else ""
    if method.tag == "mcb" and method.hidden:
        extra += ",fc=" + "x".join(str(h) for h in method.hidden)
    return f"{method.tag}[{extra}]" if extra else method.tag


@dataclass(frozen=True)
class AblationRow:
    method: str
    config: str
    n_params: int
    train_accuracy: float
    test_accuracy: float
    seconds: float
    seed: int


@dataclass
class AblationReport:
    rows: list

    def methods(self):
        return sorted({r.method for r in self.rows})

    def summary(self):
        """Mean and sample standard deviation of test accuracy per method."""
        out = []
        for m in self.methods():
            acc = np.array([r.test_accuracy for r in self.rows if r.method == m])
            out.append({
                "method": m,
                "runs": len(acc),
                "mean_test_accuracy": float(acc.mean()),
                "std_test_accuracy": float(acc.std(ddof=1)) if len(acc) > 1 else 0.0,
                "mean_train_accuracy": float(np.mean(
                    [r.train_accuracy for r in self.rows if r.method == m])),
            })
        return out

    def mean(self, method):
        return next(s["mean_test_accuracy"] for s in self.summary() if s["method"] == method)

    def std(self, method):
        return next(s["std_test_accuracy"] for s in self.summary() if s["method"] == method)


def max_workers():
    """Worker cap from ``MCB_THREADS`` (default: number of cores)."""
    value = os.environ.get("MCB_THREADS")
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def _run_cell(args):
    spec, label, data, config, classes = args
    train_set, val_set, test_set = data
    start = time.perf_counter()
    result = train(spec, train_set, val_set, config.epochs, config, classes)
    seconds = time.perf_counter() - start
    model = result.model
    return AblationRow(label, _config_text(spec.pooling), model.n_params,
                       evaluate(model, train_set), evaluate(model, test_set), seconds, spec.seed)


def _config_text(method):
    parts = []
    if method.d is not None and method.tag == "mcb":
        parts.append(f"d={method.d}")
    if method.hidden:
        parts.append("hidden=" + "x".join(str(h) for h in method.hidden))
    return ";".join(parts)


def _run_all(cells, n_jobs):
    if n_jobs is None:
        n_jobs = max_workers()
    if n_jobs <= 1 or len(cells) <= 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(_run_cell, cells))


def _resolve_methods(methods, budget, n1, n2, classes, d=DEFAULT_D):
    methods = [parse_method(m, d) for m in methods]
    if not methods:
        raise ValueError("need at least one method")
    if budget:
        mcb = [m for m in methods if m.tag == "mcb"]
        if not mcb:
            raise ConfigurationError("budget matching needs an mcb method to set the target")
        target = count_params(ModelSpec(mcb[0]), (n1, n2), classes)
        methods = [budget_match(m, target, n1, n2, classes) for m in methods]
    for m in methods:
        if m.tag == "full-bilinear" and n1 * n2 * classes > FULL_BILINEAR_CAP:
            raise ConfigurationError(
                f"full-bilinear needs {full_bilinear_param_count(n1, n2, classes)} weights")
    return methods


def ablate(task, methods, budget=False, seeds=(1, 2, 3, 4, 5), config=None,
           n_train=4000, n_val=1000, n_test=1000, n_jobs=None, normalization=False,
           d=DEFAULT_D):
    """Train every method with every seed on the same data and tabulate results.

    ``methods`` holds :class:`PoolingMethod` objects or tags (``d`` sizes a
    bare ``mcb`` tag). With
    ``budget`` set, the FC stacks of the non-bilinear methods are resized so
    their parameter counts fall within 10% of the first MCB method's.
    ``normalization`` applies to every method; None keeps the per-method
    default of :class:`ModelSpec`. Rows are sorted by method label, then seed.
    """
    if not seeds:
        raise ValueError("need at least one seed")
    config = config or TrainConfig()
    classes = task.classes
    n1, n2 = task.n1, task.n2
    methods = _resolve_methods(methods, budget, n1, n2, classes, d)
    data = split_data(task, n_train, n_val, n_test)
    cells = []
    for m in methods:
        for seed in seeds:
            spec = ModelSpec(m, normalization=normalization, seed=int(seed))
            cells.append((spec, method_label(m), data, config, classes))
    rows = _run_all(cells, n_jobs)
    rows.sort(key=lambda r: (r.method, r.seed))
    return AblationReport(rows)


def train_grounding(spec, task, epochs=100, config=None, n_train=4000, n_val=1000, n_test=1000):
    """Train a grounding head on ``task``; returns ``(TrainResult, test top-1 accuracy)``."""
    config = replace(config or TrainConfig(), epochs=epochs)
    train_set, val_set, test_set = split_data(task, n_train, n_val, n_test)
    result = fit_model(build_model(spec, train_set), train_set, val_set, config, spec.seed)
    return result, evaluate(result.model, test_set)


def ablate_grounding(task, methods, seeds=(1, 2, 3, 4, 5), config=None,
                     n_train=4000, n_val=1000, n_test=1000, hidden=(), d=DEFAULT_D,
                     normalization=None):
    """Grounding counterpart of :func:`ablate` (no budget matching).

    The default head scores each pooled proposal with a single linear layer.
    """
    config = config or TrainConfig()
    methods = [parse_method(m, d, hidden) for m in methods]
    train_set, val_set, test_set = split_data(task, n_train, n_val, n_test)
    rows = []
    for m in methods:
        for seed in seeds:
            spec = ModelSpec(m, normalization=normalization, seed=int(seed))
            start = time.perf_counter()
            result = fit_model(build_model(spec, train_set), train_set, val_set, config, seed)
            seconds = time.perf_counter() - start
            model = result.model
            rows.append(AblationRow(method_label(m), _config_text(m), model.n_params,
                                    evaluate(model, train_set), evaluate(model, test_set),
                                    seconds, int(seed)))
    rows.sort(key=lambda r: (r.method, r.seed))
    return AblationReport(rows)
