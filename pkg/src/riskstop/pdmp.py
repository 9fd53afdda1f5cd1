"""Piecewise-constant jump process with exponential holding times.

The state jumps at the epochs of a Poisson(lambda) clock.  At each jump it
resets to 0 with probability ``alpha`` and moves ``x -> x + 1`` otherwise.
Continuing costs ``d`` per unit time and stopping in ``x`` costs ``x``.
Since the state is constant between jumps and running cost is positive,
stopping is only worthwhile at jump epochs, and observing the process at
those epochs gives the reset chain with per-step cost
``c = ln lambda - ln(lambda - d)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import gammaln, logsumexp
from scipy.stats import poisson

from .bellman import TIE
from .closed_form import Ex3Params
from .exceptions import BudgetExceeded, InvalidParams
from .markov_model import RandomResetChain
from .stopping_policy import (McEstimate, StoppingPolicy, _batched, _divergence,
                              log_mean_ci)


@dataclass(frozen=True)
class PdmpParams:
    lam: float
    d: float
    alpha: float

    def __post_init__(self):
        if not (self.lam > 0.0 and math.isfinite(self.lam)):
            raise InvalidParams(f"lambda must be positive and finite, got {self.lam}")
        if not 0.0 < self.d < self.lam:
            raise InvalidParams(f"d must lie in (0, lambda), got d={self.d}, lambda={self.lam}")
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParams(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def c_embed(self) -> float:
        return -math.log1p(-self.d / self.lam)

    @property
    def embedded(self) -> Ex3Params:
        return Ex3Params(self.alpha, self.c_embed)


def embed(params: PdmpParams) -> RandomResetChain:
    """Jump-epoch chain with the same reset law and per-jump cost ``c_embed``."""
    return RandomResetChain(params.alpha, params.c_embed)


def sample_gaps(params: PdmpParams, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.exponential(1.0 / params.lam, size=n)


@dataclass(frozen=True)
class Trajectory:
    x0: float
    times: tuple[float, ...]
    states: tuple[float, ...]
    horizon: float

    def state_at(self, t: float) -> float:
        i = int(np.searchsorted(self.times, t, side="right"))
        return self.x0 if i == 0 else self.states[i - 1]


def simulate_trajectory(params: PdmpParams, x0: float, horizon: float,
                        rng: np.random.Generator) -> Trajectory:
    """Jump times and post-jump states on ``[0, horizon]``."""
    times, states = [], []
    t, x = 0.0, float(x0)
    while True:
        t += rng.exponential(1.0 / params.lam)
        if t > horizon:
            break
        x = 0.0 if rng.random() < params.alpha else x + 1.0
        times.append(t)
        states.append(x)
    return Trajectory(float(x0), tuple(times), tuple(states), float(horizon))


def write_trajectory_csv(path, trajectories) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("traj_id", "jump", "time", "state"))
        for i, tr in enumerate(trajectories):
            out.writerow((i, 0, repr(0.0), repr(tr.x0)))
            for j, (t, x) in enumerate(zip(tr.times, tr.states), start=1):
                out.writerow((i, j, repr(t), repr(x)))


def _rollout(params, policy, x0, n, t_cap, rng):
    x = np.full(n, float(x0))
    t = np.zeros(n)
    cost = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    censored = 0
    while True:
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        stop = policy.stop_mask(x[idx])
        halt = idx[stop]
        cost[halt] = params.d * t[halt] + x[halt]
        alive[halt] = False
        go = idx[~stop]
        if go.size == 0:
            break
        t_next = t[go] + rng.exponential(1.0 / params.lam, size=go.size)
        late = t_next >= t_cap
        cut = go[late]
        cost[cut] = params.d * t_cap + x[cut]
        alive[cut] = False
        censored += int(late.sum())
        move = go[~late]
        t[move] = t_next[~late]
        reset = rng.random(move.size) < params.alpha
        x[move] = np.where(reset, 0.0, x[move] + 1.0)
    return cost, censored


def simulate_and_evaluate(params: PdmpParams, x0: float, policy: StoppingPolicy, n_traj: int,
                          t_cap: float, seed: int):
    """Estimate ``ln E[exp(d tau + X_tau)]`` for a rule consulted at jump epochs.

    The rule is a policy on the embedded chain; it is asked only at time 0
    and right after each jump.  Paths still running at ``t_cap`` pay
    ``d t_cap + X_{t_cap}``.
    """
    if n_traj < 2:
        raise InvalidParams("n_traj must be >= 2")
    if not t_cap > 0.0:
        raise InvalidParams("t_cap must be positive")
    if not policy.stationary:
        raise InvalidParams("jump-epoch rules must be stationary")
    bad = _divergence(embed(params), policy, x0)
    if bad is not None:
        return bad

    def work(size, rng, offset):
        return _rollout(params, policy, x0, size, t_cap, rng)

    sizes, parts = _batched(n_traj, seed, work)
    costs = np.concatenate([p[0] for p in parts])
    log_mean, lo, hi, batch = log_mean_ci(costs, sizes)
    return McEstimate(log_mean, lo, hi, n_traj, sum(p[1] for p in parts), seed, batch)


@dataclass(frozen=True)
class DyadicValue:
    """Grid value with its Poisson truncation budget (an upper bound on the error)."""

    value: float
    budget: float
    T: float
    m: int
    k_max: int

    def __float__(self) -> float:
        return self.value


def _step_bound(rate: float, k: int, log_top: float) -> float:
    """Log-domain error from dropping more than ``k`` jumps in one step."""
    tail = poisson.sf(k, rate)
    head = poisson.cdf(k, rate)
    return float(tail * math.exp(log_top) / head)


def _pick_k(rate: float, steps: int, d_step: float, accuracy: float, k_cap: int = 400) -> int:
    per_step = accuracy / steps
    log_top = d_step * (steps - 1)
    k = 1
    while _step_bound(rate, k, log_top) > per_step:
        k += 1
        if k > k_cap:
            raise BudgetExceeded(f"no truncation order up to {k_cap} meets accuracy {accuracy}")
    return k


def dyadic_finite_horizon(params: PdmpParams, x0: float, T: float, m: int, k_max: int | None = 12,
                          accuracy: float | None = None, max_states: int = 2_000_000) -> DyadicValue:
    """Finite-horizon value over stopping times on the grid ``{0, T/2^m, ..., T}``.

    Backward recursion from ``0``:
    ``e^{w_j(x)} = E_x[e^{d Delta + w_{j-1}(X_Delta)}] ∧ e^{x}``,
    conditioning on the number of jumps in ``Delta = T / 2^m``.  Terminal
    cost is not charged at ``T`` itself.  The expectation keeps at most
    ``k_max`` jumps per step; ``k_max=None`` picks the smallest order whose
    bound fits ``accuracy`` (default ``1e-8``).  The returned budget sums the
    per-step bounds ``P(N > k) e^{d (j-1) Delta} / P(N <= k)``, which is valid
    because ``w_{j-1} <= d (j-1) Delta`` and the step map is non-expansive.
    """
    if not T >= 0.0:
        raise InvalidParams("T must be non-negative")
    if m < 0:
        raise InvalidParams("m must be >= 0")
    if x0 < 0:
        raise InvalidParams("x0 must be non-negative")
    if T == 0.0:
        return DyadicValue(0.0, 0.0, 0.0, m, 0)
    steps = 2 ** m
    dt = T / steps
    rate = params.lam * dt
    d_step = params.d * dt
    if k_max is None:
        k = _pick_k(rate, steps, d_step, accuracy if accuracy is not None else 1e-8)
    else:
        if k_max < 1:
            raise InvalidParams("k_max must be >= 1")
        k = int(k_max)
    budget = sum(_step_bound(rate, k, d_step * (j - 1)) for j in range(1, steps + 1))
    if accuracy is not None and budget > accuracy:
        raise BudgetExceeded(f"truncation budget {budget:.3e} exceeds accuracy {accuracy:.3e}")
    length = k * steps + 1
    if 2 * length > max_states:
        raise BudgetExceeded(f"{2 * length} states needed, cap is {max_states}")

    a = params.alpha
    jumps = np.arange(k + 1)
    log_pk = jumps * math.log(rate) - rate - gammaln(jumps + 1)
    with np.errstate(divide="ignore"):
        log_a = math.log(a) if a > 0 else -math.inf
        log_b = math.log1p(-a) if a < 1 else -math.inf
    with np.errstate(invalid="ignore"):
        powers = np.where(jumps == 0, 0.0, jumps * log_b)
    stay = log_pk + powers
    # after kk jumps the chain sits on base state r < kk w.p. alpha (1-alpha)^r
    reset_w = np.full((k + 1, k), -np.inf)
    for kk in range(1, k + 1):
        reset_w[kk, :kk] = log_pk[kk] + log_a + powers[:kk]
    reset_w = logsumexp(reset_w, axis=0)

    ray_G = float(x0) + np.arange(length)
    base_G = np.arange(length, dtype=float)
    ray = np.zeros(length)
    base = np.zeros(length)
    for j in range(1, steps + 1):
        n_out = length - j * k
        reset_part = float(logsumexp(reset_w + base[:k])) if a > 0 else -math.inf
        new = []
        for vals, G in ((ray, ray_G), (base, base_G)):
            win = sliding_window_view(vals[:n_out + k], k + 1)
            part = logsumexp(win + stay, axis=1)
            cont = d_step + np.logaddexp(part, reset_part)
            g = G[:n_out]
            new.append(np.where(cont >= g - TIE, g, cont))
        ray, base = new
    return DyadicValue(float(ray[0]), budget, float(T), m, k)
