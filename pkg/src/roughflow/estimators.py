"""scikit-learn style transformers over the library."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .fields import ElementaryDifferentials, LinearFamily
from .flows import compose_scheme, davie_flow, dyadic_partition, log_ode_flow
from .graded import WordAlgebra, log_truncated
from .words import PiecewiseLinearPath, default_alphabet, signature, signature_path


class SignatureTransformer(TransformerMixin, BaseEstimator):
    """Map sampled paths to their truncated (log-)signature coefficients.

    ``X`` has shape ``(n_samples, n_times * dim)`` with each row the flattened
    knot values of a path sampled at equally spaced times in ``[0, 1]``.
    """

    def __init__(self, depth=2, dim=2, log=False):
        self.depth = depth
        self.dim = dim
        self.log = log

    def fit(self, X, y=None):
        X = check_array(X)
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if X.shape[1] % self.dim or X.shape[1] // self.dim < 2:
            raise ValueError("each row must hold at least two knots of the given dimension")
        alg = WordAlgebra(default_alphabet(self.dim), "tensor")
        self.keys_ = [w for k in range(1, self.depth + 1) for w in alg.words(k)]
        self.n_features_in_ = X.shape[1]
        return self

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "keys_")
        return np.array(["".join(w) for w in self.keys_], dtype=object)

    def transform(self, X):
        check_is_fitted(self, "keys_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        n_times = X.shape[1] // self.dim
        times = np.linspace(0.0, 1.0, n_times)
        out = np.empty((X.shape[0], len(self.keys_)))
        for r, row in enumerate(X):
            path = PiecewiseLinearPath(list(times), row.reshape(n_times, self.dim).tolist())
            sig = signature(path, 0.0, 1.0, self.depth)
            if self.log:
                sig = log_truncated(sig)
            out[r] = [float(sig[w]) for w in self.keys_]
        return out


class RoughFlowTransformer(TransformerMixin, BaseEstimator):
    """Push initial states through a scheme driven by a fixed sampled path.

    ``driver`` is an array ``(n_times, d)`` sampled on ``[0, 1]``; ``matrices``
    are the ``d`` linear fields ``f_i(x) = M_i x``.  ``transform`` maps rows of
    initial states to terminal states.
    """

    def __init__(self, driver=None, matrices=None, depth=2, scheme="log-ode", mesh_depth=6, substeps=32):
        self.driver = driver
        self.matrices = matrices
        self.depth = depth
        self.scheme = scheme
        self.mesh_depth = mesh_depth
        self.substeps = substeps

    def fit(self, X, y=None):
        X = check_array(X)
        drv = check_array(self.driver)
        mats = [np.asarray(M, dtype=float) for M in self.matrices]
        if len(mats) != drv.shape[1]:
            raise ValueError("need one matrix per driver coordinate")
        if any(M.shape != (X.shape[1], X.shape[1]) for M in mats):
            raise ValueError("matrices must be square with the state dimension")
        letters = default_alphabet(drv.shape[1])
        path = PiecewiseLinearPath(list(np.linspace(0.0, 1.0, len(drv))), drv.tolist())
        x = signature_path(path, self.depth)
        F = ElementaryDifferentials(LinearFamily(dict(zip(letters, mats))), x.algebra)
        if self.scheme == "log-ode":
            self.flow_ = log_ode_flow(x, F, substeps=self.substeps)
        elif self.scheme == "davie":
            self.flow_ = davie_flow(x, F)
        else:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "flow_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        part = dyadic_partition(1.0, self.mesh_depth)
        return np.array([compose_scheme(self.flow_, part, row).final for row in X])
