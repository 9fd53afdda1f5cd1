"""Estimator-style wrappers around the solvers.

Hyper-parameters go to ``__init__`` and fitted state ends with an
underscore, so ``get_params``/``set_params``/``clone`` work as usual.  The
fitted object is a model and a start state rather than a data matrix.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .bellman import iterate_from_above, iterate_from_below, residual
from .stopping_policy import evaluate_policy_mc
from .validation import check_choice, check_number, check_positive


class ValueIteration(BaseEstimator):
    """Monotone value iteration for the minimal or maximal solution.

    Parameters
    ----------
    direction : {"from-below", "from-above"}
    tol : float
        Sup-change threshold over the evaluation window.
    max_iter : int
    window_depth : int
        Depth of the evaluation window around the start states.
    """

    def __init__(self, direction="from-below", tol=1e-8, max_iter=500, window_depth=64):
        self.direction = direction
        self.tol = tol
        self.max_iter = max_iter
        self.window_depth = window_depth

    def _validate(self):
        check_choice(self.direction, "direction", {"from-below", "from-above"})
        check_number(self.tol, "tol", min_val=0.0)
        check_positive(self.max_iter, "max_iter", integer=True)
        check_number(self.window_depth, "window_depth", min_val=0, integer=True)

    def fit(self, model, x0, eval_states=None):
        self._validate()
        solve = iterate_from_below if self.direction == "from-below" else iterate_from_above
        self.run_ = solve(model, x0, self.tol, self.max_iter, eval_states=eval_states,
                          window_depth=self.window_depth)
        self.model_ = model
        self.value_ = self.run_.final
        self.converged_ = self.run_.converged
        self.n_iter_ = self.run_.iteration_count
        return self

    def predict(self, states):
        check_is_fitted(self, "value_")
        return np.array([self.run_.value(x) for x in np.ravel(states)], dtype=float)

    def score(self, states):
        """Negative Bellman residual of the fitted values on ``states``."""
        check_is_fitted(self, "value_")
        return -residual(self.model_, self.value_, np.ravel(states).tolist())


class PolicyEvaluator(BaseEstimator):
    """Monte Carlo value of a stopping policy in log domain."""

    def __init__(self, n_traj=10_000, horizon_cap=10_000, seed=0):
        self.n_traj = n_traj
        self.horizon_cap = horizon_cap
        self.seed = seed

    def fit(self, model, policy, x0):
        check_number(self.n_traj, "n_traj", min_val=2, integer=True)
        check_positive(self.horizon_cap, "horizon_cap", integer=True)
        check_number(self.seed, "seed", min_val=0, integer=True)
        self.estimate_ = evaluate_policy_mc(model, policy, x0, self.n_traj, self.horizon_cap,
                                            self.seed)
        return self

    def predict(self, x=None):
        check_is_fitted(self, "estimate_")
        return getattr(self.estimate_, "log_mean", np.inf)
