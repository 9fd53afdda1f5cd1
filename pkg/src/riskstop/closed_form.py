"""Exact oracles for the random-reset chain and the Pareto chain.

None of these routines touch the iteration engine, so they can be used to
check it.  The Pareto sums go through partial sums and the complement of
the normalised mass rather than through the zeta function used by
:class:`~riskstop.markov_model.ParetoChain`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp, xlogy

from .exceptions import InvalidParams, WrongRegime

P1 = 6.0 / math.pi ** 2


@dataclass(frozen=True)
class Ex3Params:
    """Reset chain: jump to 0 w.p. ``alpha``, else ``x -> x + 1``; g = c, G(x) = x."""

    alpha: float
    c: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParams(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (self.c > 0.0 and math.isfinite(self.c)):
            raise InvalidParams(f"c must be positive and finite, got {self.c}")

    @property
    def growth(self) -> float:
        """``(1 - alpha) e^c``; K is finite iff this is below one."""
        return (1.0 - self.alpha) * math.exp(self.c)

    @property
    def K(self) -> float:
        if self.growth >= 1.0:
            return math.inf
        return math.log(self.alpha) + self.c - math.log1p(-self.growth)

    @property
    def lower_boundary(self) -> float:
        return -math.expm1(-self.c)

    @property
    def upper_boundary(self) -> float:
        return -math.expm1(-self.c - 1.0)

    @property
    def regime(self) -> str:
        if self.alpha <= self.lower_boundary:
            return "stop-now"
        if self.alpha <= self.upper_boundary:
            return "gap"
        return "wait"

    @property
    def ui_log_rate(self) -> float:
        """``ln((1 - alpha) e^{c+1})``, the per-step growth of the survival term."""
        if self.alpha == 1.0:
            return -math.inf
        return math.log1p(-self.alpha) + self.c + 1.0


def ex3_values(params: Ex3Params, x: float) -> tuple[float, float]:
    """Minimal and maximal solutions ``(u(x), w(x))``."""
    x = float(x)
    if x < 0.0:
        raise InvalidParams("states are non-negative")
    regime = params.regime
    if regime == "stop-now":
        return x, x
    low = min(x, params.K)
    if regime == "gap":
        return low, x
    return low, low


def ex3_cn(params: Ex3Params, n: int) -> float:
    """Constant ``c_n`` with ``u_n(x) = x ∧ c_n`` for states far from the origin.

    ``e^{c_n} = sum_{k<n} alpha (1-alpha)^{k-1} e^{kc} + (1-alpha)^{n-1} e^{nc}``.
    """
    if n < 1:
        raise InvalidParams("n must be >= 1")
    a, c = params.alpha, params.c
    k = np.arange(1, n)
    with np.errstate(divide="ignore"):
        log_a = math.log(a) if a > 0 else -math.inf
        terms = log_a + xlogy(k - 1, 1.0 - a) + k * c
    last = xlogy(n - 1, 1.0 - a) + n * c
    return float(logsumexp(np.append(terms, last)))


def ex3_discontinuous_solution(params: Ex3Params, x: float) -> float:
    """Extra solution in the gap regime: ``x`` on ``[0, K]`` and the integers, ``K`` elsewhere."""
    if params.regime != "gap":
        raise WrongRegime(f"regime is {params.regime}, expected gap")
    x = float(x)
    if x <= params.K or x == math.floor(x):
        return x
    return params.K


def ex3_ui_log(params: Ex3Params, x0: float, T: int) -> float:
    """``ln E[1_{tau>T} Z_T]`` for the hitting time of ``x ∧ K`` started above K."""
    return float(x0) + T * params.ui_log_rate


@dataclass(frozen=True)
class Ex1Params:
    """Pareto chain: i.i.d. jumps with ``P(k) = 6 / (pi^2 k^2)``; g = c, G(k) = k."""

    c: float

    def __post_init__(self):
        if not (0.0 < self.c < -math.log1p(-P1)):
            raise InvalidParams(f"c must lie in (0, {-math.log1p(-P1):.6f}), got {self.c}")

    @property
    def p1(self) -> float:
        return P1

    @property
    def B(self) -> float:
        return P1 * math.exp(self.c + 1.0) / (1.0 - math.exp(self.c) * (1.0 - P1))

    @property
    def log_B(self) -> float:
        return math.log(self.B)


def _pareto_log_expect_min(level: float) -> float:
    """``ln E[exp(min(X, level))]`` for the Pareto law on 1, 2, ..."""
    if level <= 0.0:
        return 0.0
    m = int(math.floor(level))
    k = np.arange(1, m + 1, dtype=float)
    prob = P1 / k ** 2
    rest = 1.0 - prob.sum()
    terms = np.log(prob) + k
    if rest > 0.0:
        terms = np.append(terms, math.log(rest) + level)
    return float(logsumexp(terms))


def ex1_b_sequence(params: Ex1Params, n: int) -> list[float]:
    """``b_0 = 0``, ``b_{k+1} = c + ln E[e^{min(X, b_k)}]`` for ``k < n``."""
    b = [0.0]
    for _ in range(n):
        b.append(params.c + _pareto_log_expect_min(b[-1]))
    return b


def ex1_b_limit(params: Ex1Params, tol: float = 1e-15, max_iter: int = 100_000) -> float:
    b = 0.0
    for _ in range(max_iter):
        nxt = params.c + _pareto_log_expect_min(b)
        if abs(nxt - b) <= tol:
            return nxt
        b = nxt
    return b


class Ex1Values(NamedTuple):
    u: float
    u_bound: float
    w: float
    b_limit: float


def ex1_values(params: Ex1Params, x: int) -> Ex1Values:
    """Values at ``x``: ``u = x ∧ b_limit``, the bound ``ln B``, and ``w = x``."""
    if x < 1 or int(x) != x:
        raise InvalidParams("states are positive integers")
    b = ex1_b_limit(params)
    return Ex1Values(min(float(x), b), params.log_B, float(x), b)


def ex1_growth_ratio(power: float = 0.5) -> float:
    """``e (1 - p_1)^power``; above one means the survival term does not vanish."""
    return math.e * (1.0 - P1) ** power
