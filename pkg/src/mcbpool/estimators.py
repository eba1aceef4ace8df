"""scikit-learn style wrappers.

sklearn estimators take a single feature matrix, so both modalities are
passed side by side: the first ``input_dims[0]`` columns of ``X`` are ``x``
and the remaining ``input_dims[1]`` columns are ``q``.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .harness import TrainConfig, fit_model
from .mcb import McbOperator, mcb_forward
from .models import ModelSpec, PoolingNetwork
from .nn import DEFAULT_D, parse_method, softmax
from .tasks import ClassificationData

__all__ = ["CompactBilinearPooling", "BilinearPoolingClassifier"]


def _split(X, input_dims):
    if input_dims is None:
        raise ValueError("input_dims must be given as (n1, n2)")
    n1, n2 = (int(n) for n in input_dims)
    if n1 < 1 or n2 < 1:
        raise ValueError("input_dims must be positive")
    if X.shape[1] != n1 + n2:
        raise ValueError(f"X has {X.shape[1]} columns, expected {n1} + {n2}")
    return X[:, :n1], X[:, n1:]


class CompactBilinearPooling(TransformerMixin, BaseEstimator):
    """Map ``[x | q]`` rows to their ``d``-dimensional MCB features.

    Parameters
    ----------
    d : int
        Output dimension.
    input_dims : (int, int)
        Split point of the columns of ``X``.
    random_state : int
        Seed of the two count sketches.

    Attributes
    ----------
    operator_ : McbOperator
    n_features_in_ : int
    """

    def __init__(self, d=DEFAULT_D, input_dims=None, random_state=0):
        self.d = d
        self.input_dims = input_dims
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        _split(X, self.input_dims)
        self.n_features_in_ = X.shape[1]
        self.operator_ = McbOperator.sample(int(self.random_state or 0),
                                            tuple(self.input_dims), int(self.d))
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        X = check_array(X, dtype=np.float64)
        x, q = _split(X, self.input_dims)
        return mcb_forward(self.operator_, [x, q]).output


class BilinearPoolingClassifier(ClassifierMixin, BaseEstimator):
    """Pooling network classifier over ``[x | q]`` rows.

    Parameters
    ----------
    method : str
        Pooling tag (``mcb``, ``concat``, ``eltwise-sum`` ... or the aliases
        ``sum``, ``product``, ``bilinear``).
    d : int
        MCB output size (ignored by the other methods).
    input_dims : (int, int)
    hidden : tuple of int
        Widths of ReLU layers after pooling.
    normalization : bool or None
        Signed sqrt and L2 after pooling; None means on for bilinear methods.
    epochs, batch_size, patience, learning_rate : training settings
    random_state : int
        Seeds the sketches, the initial weights and the batch order.

    Attributes
    ----------
    classes_ : ndarray
    network_ : PoolingNetwork
    history_ : list of dict
    """

    def __init__(self, method="mcb", d=DEFAULT_D, input_dims=None, hidden=(),
                 normalization=None, epochs=100, batch_size=32, patience=15,
                 learning_rate=0.0007, random_state=0):
        self.method = method
        self.d = d
        self.input_dims = input_dims
        self.hidden = hidden
        self.normalization = normalization
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _data(self, X, y):
        x, q = _split(X, self.input_dims)
        return ClassificationData(x, q, np.searchsorted(self.classes_, y))

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` enables early stopping."""
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        train_set = self._data(X, y)
        val_set = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            if not np.all(np.isin(yv, self.classes_)):
                raise ValueError("eval_set has labels not seen in y")
            val_set = self._data(Xv, yv)
        seed = int(self.random_state or 0)
        spec = ModelSpec(parse_method(self.method, int(self.d), tuple(self.hidden)),
                         normalization=self.normalization, seed=seed)
        self.network_ = PoolingNetwork(spec, tuple(self.input_dims), len(self.classes_))
        config = TrainConfig(epochs=int(self.epochs), batch_size=int(self.batch_size),
                             patience=int(self.patience), lr=float(self.learning_rate))
        result = fit_model(self.network_, train_set, val_set, config, seed)
        self.history_ = result.history
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        x, q = _split(X, self.input_dims)
        return self.network_.decision_function(x, q)

    def predict_proba(self, X):
        return softmax(self.decision_function(X), axis=-1)

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
