"""scikit-learn compatible wrapper around the operator models.

``X`` rows are flat records: the sensor values of each input function one
after another, followed by the query coordinates. For two functions with
``m`` sensors and ``y = (x, t)`` that is ``[u_1..u_m, v_1..v_m, x, t]``.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .models import KINDS, ModelSpec, build, match_parameter_counts
from .training import TrainConfig, fit_arrays, predict_arrays


def dataset_to_xy(dataset, record_index=None):
    """Flatten dataset records into ``(X, y)`` for :class:`OperatorRegressor`."""
    rows = dataset.records if record_index is None else dataset.records[record_index]
    return rows[:, :-1].copy(), rows[:, -1].copy()


class OperatorRegressor(RegressorMixin, BaseEstimator):
    """Fit an FNN, concatenated DeepONet or EDeepONet on flat operator records.

    Parameters
    ----------
    kind : {"fnn", "deeponet", "edeeponet"}
    n_functions : int
        Number of input functions packed into each row of ``X``.
    hidden_widths : tuple of int
        Hidden widths of each branch and of the trunk.
    latent_dim : int
        Size of the branch/trunk output vectors.
    fnn_widths : tuple of int or None
        Hidden widths of the FNN. ``None`` picks a three-layer width whose
        parameter count matches the EDeepONet built from ``hidden_widths``.
    query_dim : int
        Number of trailing query coordinates in each row.
    lr, epochs, batch_size : training settings (``batch_size=None`` uses
        ``min(1000, n_samples // 10)``).
    random_state : int
        Seeds both weight initialization and batch shuffling.
    """

    def __init__(self, kind="edeeponet", n_functions=2, hidden_widths=(64, 64), latent_dim=64,
                 fnn_widths=None, query_dim=2, lr=1e-4, epochs=200, batch_size=None,
                 random_state=0):
        self.kind = kind
        self.n_functions = n_functions
        self.hidden_widths = hidden_widths
        self.latent_dim = latent_dim
        self.fnn_widths = fnn_widths
        self.query_dim = query_dim
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def _spec(self, n_features):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        sensors = n_features - self.query_dim
        if sensors <= 0 or sensors % self.n_functions:
            raise ValueError(
                f"{n_features} features cannot hold {self.n_functions} equal sensor blocks "
                f"plus {self.query_dim} query coordinates"
            )
        reference = ModelSpec(
            kind="edeeponet" if self.n_functions >= 2 else "deeponet",
            sensor_count=sensors // self.n_functions,
            n_branches=self.n_functions,
            branch_widths=tuple(self.hidden_widths),
            trunk_widths=tuple(self.hidden_widths),
            latent_dim=self.latent_dim,
            query_dim=self.query_dim,
            seed=self.random_state,
        )
        if self.kind == "fnn" and self.fnn_widths is None:
            return match_parameter_counts(reference, "fnn")
        if self.kind == "fnn":
            return ModelSpec(**{**reference.to_dict(), "kind": "fnn",
                                "fnn_widths": tuple(self.fnn_widths)})
        return ModelSpec(**{**reference.to_dict(), "kind": self.kind})

    def _split(self, X):
        m = self.spec_.sensor_count
        functions = [np.ascontiguousarray(X[:, i * m:(i + 1) * m]) for i in range(self.n_functions)]
        return functions, np.ascontiguousarray(X[:, -self.query_dim:])

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.spec_ = self._spec(X.shape[1])
        self.model_ = build(self.spec_)
        functions, q = self._split(X)
        config = TrainConfig(lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
                             seed=self.random_state, keep_best=False)
        self.metrics_, _ = fit_arrays(self.model_, (functions, q, y), None, config)
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        functions, q = self._split(X)
        return predict_arrays(self.model_, functions, q)
