"""Risk-sensitive optimal stopping with unbounded terminal cost.

Value functions live in log domain.  The minimal and maximal solutions of
``v = min(G, g + ln E[e^{v(X_1)}])`` are computed by monotone iteration from
``0`` and from ``G``; policies are evaluated by simulation and the gap
between the two solutions is diagnosed through uniform integrability.
"""

__version__ = "0.1.0"

from .bellman import (BellmanRun, LogValueFn, SandwichReport, apply_bellman, iterate_from_above,
                      iterate_from_below, residual, truncated_terminal_iteration, verify_sandwich)
from .diagnostics import GapReport, UiProfile, gap_report, regime_classifier, ui_profile
from .estimators import PolicyEvaluator, ValueIteration
from .exceptions import (AnalyticUnavailable, BadCandidate, BudgetExceeded, InvalidParams,
                         MaxIterExceeded, ModelMismatch, RiskStopError, TailUndecidable,
                         WrongRegime)
from .markov_model import (FiniteChain, KernelRow, MarkovModel, ParetoChain, PowerLawTail,
                           RandomResetChain, log_mgf, sample_next, validate_costs)
from .pdmp import PdmpParams, dyadic_finite_horizon, embed, simulate_and_evaluate
from .stopping_policy import (DivergentTarget, McEstimate, StoppingPolicy, bounded_policy_floor,
                              evaluate_policy_mc, finite_horizon_policy, hitting_policy,
                              martingale_check, rule_policy, stop_immediately, stop_set_policy)

__all__ = [
    "AnalyticUnavailable", "BadCandidate", "BellmanRun", "BudgetExceeded", "DivergentTarget",
    "FiniteChain", "GapReport", "InvalidParams", "KernelRow", "LogValueFn", "MarkovModel",
    "MaxIterExceeded", "McEstimate", "ModelMismatch", "ParetoChain", "PdmpParams",
    "PolicyEvaluator", "PowerLawTail", "RandomResetChain", "RiskStopError", "SandwichReport",
    "StoppingPolicy", "TailUndecidable", "UiProfile", "ValueIteration", "WrongRegime",
    "apply_bellman", "bounded_policy_floor", "dyadic_finite_horizon", "embed",
    "evaluate_policy_mc", "finite_horizon_policy", "gap_report", "hitting_policy",
    "iterate_from_above", "iterate_from_below", "log_mgf", "martingale_check",
    "regime_classifier", "residual", "rule_policy", "sample_next", "simulate_and_evaluate",
    "stop_immediately", "stop_set_policy", "truncated_terminal_iteration", "ui_profile",
    "validate_costs", "verify_sandwich",
]
