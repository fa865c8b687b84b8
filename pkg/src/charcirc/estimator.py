"""scikit-learn style density estimator built on characteristic circuits."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .circuit import KINDS
from .data import MAX_DISCRETE_STATES, infer_kinds
from .errors import ConfigError, DimensionError
from .inference import evaluate_cf, log_density, marginal_log_density, moment
from .learning import OptimizerConfig, StructureConfig, build_random_structure, fit_parameters, learn_structure
from .quadrature import QuadratureConfig

MODES = ("structure", "params", "both")


class CharacteristicCircuitDensity(DensityMixin, BaseEstimator):
    """Density estimator for mixed discrete/continuous tables.

    ``mode="structure"`` learns the circuit recursively, ``"params"`` fits
    the parameters of a random structure by minimising the CFD to the
    training ECF, and ``"both"`` does structure learning followed by that fit.

    Discrete columns (fewer than ``max_discrete_states`` distinct values
    unless ``column_kinds`` is given) get categorical leaves; continuous
    columns get ``continuous_leaf`` leaves.  ``states`` maps discrete column
    indices to their full domain when the training rows may miss some values.
    """

    def __init__(self, mode="structure", *, column_kinds=None, states=None, max_discrete_states=MAX_DISCRETE_STATES,
                 continuous_leaf="gaussian", min_k=100, k_sum=2, k_prod=2, split_method="gtest",
                 rdc_threshold=None, lr_start=0.5, lr_end=0.01, iters=300, eta=1.0, num_freqs=100,
                 batch_count=1, quadrature_degree=50, random_state=0):
        self.mode = mode
        self.column_kinds = column_kinds
        self.states = states
        self.max_discrete_states = max_discrete_states
        self.continuous_leaf = continuous_leaf
        self.min_k = min_k
        self.k_sum = k_sum
        self.k_prod = k_prod
        self.split_method = split_method
        self.rdc_threshold = rdc_threshold
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.iters = iters
        self.eta = eta
        self.num_freqs = num_freqs
        self.batch_count = batch_count
        self.quadrature_degree = quadrature_degree
        self.random_state = random_state

    def _configs(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        policy = {"discrete": "categorical", "continuous": self.continuous_leaf}
        structure = StructureConfig(
            min_k=self.min_k, k_sum=self.k_sum, k_prod=self.k_prod, split_method=self.split_method,
            rdc_threshold=self.rdc_threshold, leaf_policy=policy, seed=self.random_state,
        )
        optimizer = OptimizerConfig(
            lr_start=self.lr_start, lr_end=self.lr_end, iters=self.iters, eta=self.eta,
            num_freqs=self.num_freqs, batch_count=self.batch_count, seed=self.random_state,
        )
        return structure, optimizer, QuadratureConfig(self.quadrature_degree)

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        structure, optimizer, _ = self._configs()
        if self.column_kinds is None:
            kinds = infer_kinds(X, self.max_discrete_states)
        else:
            kinds = tuple(self.column_kinds)
            if len(kinds) != X.shape[1] or any(k not in KINDS for k in kinds):
                raise ConfigError(f"column_kinds must list {X.shape[1]} entries from {KINDS}")
        if self.mode == "params":
            circuit = build_random_structure(
                X.shape[1], kinds, X, seed=self.random_state, leaf_policy=structure.leaf_policy,
                states=self.states,
            )
        else:
            circuit = learn_structure(X, structure, kinds=kinds, states=self.states)
        self.loss_trace_ = []
        if self.mode in ("params", "both"):
            circuit, self.loss_trace_, _ = fit_parameters(circuit, X, optimizer)
        self.circuit_ = circuit
        self.column_kinds_ = kinds
        self.n_features_in_ = X.shape[1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "circuit_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"X has {X.shape[1]} features, the model was fitted on {self.n_features_in_}")
        return X

    def score_samples(self, X):
        """Per-row log-density (non-positive quadrature values are floored)."""
        X = self._check_X(X)
        return log_density(self.circuit_, X, QuadratureConfig(self.quadrature_degree), on_underflow="floor")

    def score(self, X, y=None):
        """Mean log-density of the rows of ``X``."""
        return float(np.mean(self.score_samples(X)))

    def cf(self, T):
        check_is_fitted(self, "circuit_")
        return evaluate_cf(self.circuit_, T)

    def moment(self, order):
        check_is_fitted(self, "circuit_")
        return moment(self.circuit_, order)

    def marginal_score_samples(self, keep, X_sub):
        check_is_fitted(self, "circuit_")
        return marginal_log_density(
            self.circuit_, keep, X_sub, QuadratureConfig(self.quadrature_degree), on_underflow="floor"
        )
