"""Stopping policies and their Monte Carlo evaluation in log domain.

Trajectories are simulated in lockstep with numpy.  The sample is cut into
16 batches; each batch draws from its own child of ``SeedSequence(seed)``
so results do not depend on the number of worker threads.  Costs are
reduced in batch order, which makes estimates bit-reproducible.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .bellman import TIE, LogValueFn, iterate_from_above
from .exceptions import InvalidParams
from .markov_model import MarkovModel, log_mgf

N_BATCHES = 16
Z99 = 2.576


@dataclass(frozen=True, eq=False)
class StoppingPolicy:
    """Stationary hitting rule, finite-horizon table rule, or explicit rule.

    ``table[i]`` is the value with ``i`` steps to go, so at step ``s`` of a
    horizon-``n`` policy the rule consults ``table[n - s]``.
    """

    kind: str
    model: MarkovModel
    value: LogValueFn | None = None
    table: tuple = ()
    horizon: int | None = None
    rule: Callable[[float], bool] | None = None
    tail_stop: bool | None = None
    name: str = ""
    _memo: dict = field(default_factory=dict, repr=False)

    def stops(self, x: float, step: int = 0) -> bool:
        x = float(x)
        if self.kind == "finite-horizon":
            if step >= self.horizon:
                return True
            v = self.table[self.horizon - step]
            return v(x) >= self.model.terminal_cost(x) - TIE
        hit = self._memo.get(x)
        if hit is None:
            if self.kind == "hitting":
                hit = self.value(x) >= self.model.terminal_cost(x) - TIE
            else:
                hit = bool(self.rule(x))
            self._memo[x] = hit
        return hit

    def stop_mask(self, xs: np.ndarray, step: int = 0) -> np.ndarray:
        if self.kind == "finite-horizon" and step >= self.horizon:
            return np.ones(len(xs), dtype=bool)
        uniq, inv = np.unique(xs, return_inverse=True)
        dec = np.array([self.stops(u, step) for u in uniq.tolist()], dtype=bool)
        return dec[inv]

    @property
    def stationary(self) -> bool:
        return self.kind != "finite-horizon"

    def stops_on_tail(self) -> bool | None:
        """Whether the rule stops everywhere on an analytic tail, if decidable."""
        if self.tail_stop is not None:
            return self.tail_stop
        if self.kind == "hitting" and self.value.func is None:
            return math.isinf(self.value.level)
        return None


def hitting_policy(v: LogValueFn, name: str = "") -> StoppingPolicy:
    """Stop at the first state with ``v >= G`` (ties stop)."""
    return StoppingPolicy("hitting", v.model, value=v, name=name or "hitting")


def finite_horizon_policy(table: Sequence[LogValueFn], name: str = "") -> StoppingPolicy:
    """Rule built from finite-horizon values ``table[0] = G, ..., table[n]``."""
    if not table:
        raise InvalidParams("table must hold at least the horizon-0 value")
    return StoppingPolicy("finite-horizon", table[0].model, table=tuple(table),
                          horizon=len(table) - 1, name=name or f"horizon-{len(table) - 1}")


def rule_policy(model: MarkovModel, predicate: Callable[[float], bool], *, tail_stop: bool = False,
                name: str = "rule") -> StoppingPolicy:
    """Stationary rule stopping where ``predicate(x)`` holds.

    ``tail_stop`` declares the rule's behaviour on an analytic tail, which
    the divergence guard needs.
    """
    return StoppingPolicy("rule", model, rule=predicate, tail_stop=tail_stop, name=name)


def stop_set_policy(model: MarkovModel, states: Iterable[float], name: str = "") -> StoppingPolicy:
    targets = frozenset(float(s) for s in states)
    return rule_policy(model, targets.__contains__, tail_stop=False,
                       name=name or "stop-at-" + "-".join(repr(s) for s in sorted(targets)))


def stop_immediately(model: MarkovModel) -> StoppingPolicy:
    return rule_policy(model, lambda x: True, tail_stop=True, name="stop-now")


@dataclass(frozen=True)
class McEstimate:
    """Log of a sample mean of ``exp(cost)`` with a 99% batch-means interval."""

    log_mean: float
    ci_low: float
    ci_high: float
    n_traj: int
    n_censored: int
    seed: int
    batch_log_means: tuple[float, ...] = ()
    trace: tuple = field(default=(), repr=False, compare=False)

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class DivergentTarget:
    """Returned instead of an estimate when the target expectation is infinite."""

    state: float
    reason: str


def log_mean_ci(costs: np.ndarray, sizes: Sequence[int]) -> tuple[float, float, float, tuple]:
    """Log-domain mean and 99% CI from contiguous batches of ``costs``."""
    costs = np.asarray(costs, dtype=float)
    if costs.size and np.all(costs == costs[0]):
        v = float(costs[0])
        return v, v, v, tuple(v for _ in sizes)
    n = costs.size
    log_mean = float(logsumexp(costs) - math.log(n))
    bounds = np.cumsum([0, *sizes])
    batch = [float(logsumexp(costs[a:b]) - math.log(b - a)) for a, b in zip(bounds, bounds[1:])]
    if not math.isfinite(log_mean):
        return log_mean, log_mean, log_mean, tuple(batch)
    ratios = np.exp(np.array(batch) - log_mean)
    se = float(np.std(ratios, ddof=1)) / math.sqrt(len(sizes)) if len(sizes) > 1 else math.inf
    lo = 1.0 - Z99 * se
    low = log_mean + math.log(lo) if lo > 0.0 else -math.inf
    high = log_mean + math.log1p(Z99 * se)
    return log_mean, low, high, tuple(batch)


def _threads() -> int:
    try:
        cap = int(os.environ.get("RISKSTOP_THREADS", "0"))
    except ValueError:
        cap = 0
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, N_BATCHES))


def _batched(n_traj: int, seed: int, work: Callable):
    """Run ``work(size, rng, offset)`` over the batches, results in batch order."""
    n_batches = min(N_BATCHES, n_traj)
    sizes = [len(a) for a in np.array_split(np.arange(n_traj), n_batches)]
    offsets = np.cumsum([0, *sizes[:-1]]).tolist()
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_batches)]
    jobs = list(zip(sizes, streams, offsets))
    workers = _threads()
    if workers == 1:
        return sizes, [work(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return sizes, list(pool.map(lambda j: work(*j), jobs))


def _rollout(model, policy, x0, n, horizon_cap, rng, offset, trace):
    x = np.full(n, float(x0))
    cost = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    censored = 0
    rows = []
    for step in range(horizon_cap + 1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        xs = x[idx]
        stop = policy.stop_mask(xs, step)
        if step == horizon_cap:
            censored = int((~stop).sum())
            stop_all = np.ones_like(stop)
        else:
            stop_all = stop
        halt = idx[stop_all]
        cost[halt] += model.terminal_cost_batch(x[halt])
        alive[halt] = False
        go = idx[~stop_all]
        g = model.running_cost_batch(x[go])
        if trace:
            paid = dict(zip(go.tolist(), g.tolist()))
            for i, s in zip(idx.tolist(), stop.tolist()):
                action = "stop" if s else ("censor" if step == horizon_cap else "continue")
                rows.append((offset + i, step, float(x[i]), action, paid.get(i, 0.0)))
        cost[go] += g
        if go.size:
            x[go] = model.sample_batch(x[go], rng)
    return cost, censored, rows


def _divergence(model: MarkovModel, policy: StoppingPolicy, x0: float, depth: int = 2):
    """Look for a continuing state whose next step certainly has infinite cost.

    Continuation costs are non-negative, so ``E_x[exp(cost)]`` is bounded
    below by ``e^{g(x)} E_x[exp(V(X_1))]`` with ``V = G`` where the rule stops
    and ``0`` elsewhere.
    """
    frontier = [(float(x0), 0)]
    seen = set()
    while frontier:
        x, step = frontier.pop()
        if (x, step) in seen or step > depth or policy.stops(x, step):
            continue
        seen.add((x, step))
        row = model.row(x)
        if row.tail is not None:
            tail_stop = policy.stops_on_tail()
            if tail_stop:
                vals = {y: (model.terminal_cost(y) if policy.stops(y, step + 1) else 0.0)
                        for y, _ in row.atoms}
                bound = LogValueFn(model, vals, math.inf)
                if math.isinf(log_mgf(model, x, bound)):
                    return DivergentTarget(x, "stopping on the heavy tail has infinite exponential moment")
        for y, p in row.atoms:
            if p > 0.0:
                frontier.append((float(y), step + 1))
    return None


def evaluate_policy_mc(model: MarkovModel, policy: StoppingPolicy, x0: float, n_traj: int,
                       horizon_cap: int, seed: int, *, trace: bool = False):
    """Estimate ``ln E[exp(sum g + G(X_tau))]`` for ``tau ∧ horizon_cap``.

    Returns a :class:`DivergentTarget` instead when the kernel certifies the
    expectation as infinite.
    """
    if n_traj < 2:
        raise InvalidParams("n_traj must be >= 2")
    if horizon_cap < 1:
        raise InvalidParams("horizon_cap must be >= 1")
    bad = _divergence(model, policy, x0)
    if bad is not None:
        return bad

    def work(size, rng, offset):
        return _rollout(model, policy, x0, size, horizon_cap, rng, offset, trace)

    sizes, parts = _batched(n_traj, seed, work)
    costs = np.concatenate([p[0] for p in parts])
    log_mean, lo, hi, batch = log_mean_ci(costs, sizes)
    rows = tuple(sorted(r for p in parts for r in p[2])) if trace else ()
    return McEstimate(log_mean, lo, hi, n_traj, sum(p[1] for p in parts), seed, batch, rows)


TRACE_COLUMNS = ("traj_id", "step", "state", "action", "running_cost")


def write_trace_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_COLUMNS)
        for traj, step, state, action, g in rows:
            out.writerow((traj, step, repr(state), action, repr(g)))


@dataclass(frozen=True)
class MartingaleReport:
    checkpoints: tuple[int, ...]
    target: float
    stopped: tuple[McEstimate, ...]
    unstopped: tuple[McEstimate, ...]
    max_pairwise_gap: float
    flat: bool
    centered: bool
    decreases: tuple[tuple[int, int], ...]

    @property
    def submartingale_ok(self) -> bool:
        return not self.decreases

    @property
    def ok(self) -> bool:
        return self.flat and self.centered and self.submartingale_ok


def _z_paths(model, v, policy, x0, n, checkpoints, rng):
    horizon = checkpoints[-1]
    x = np.full(n, float(x0))
    acc = np.zeros(n)
    frozen = np.full(n, np.nan)
    stopped_at, free_at = [], []
    values = {}

    def vfun(xs):
        uniq, inv = np.unique(xs, return_inverse=True)
        for u in uniq.tolist():
            if u not in values:
                values[u] = v(u)
        return np.array([values[u] for u in uniq.tolist()])[inv]

    marks = set(checkpoints)
    for step in range(horizon + 1):
        z = acc + vfun(x)
        hit = np.isnan(frozen) & policy.stop_mask(x, step)
        frozen[hit] = z[hit]
        if step in marks:
            stopped_at.append(np.where(np.isnan(frozen), z, frozen))
            free_at.append(z)
        if step < horizon:
            acc += model.running_cost_batch(x)
            x = model.sample_batch(x, rng)
    return stopped_at, free_at


def martingale_check(model: MarkovModel, v: LogValueFn, x0: float, n_traj: int,
                     checkpoints: Sequence[int], seed: int) -> MartingaleReport:
    """Estimate ``E[z_v(tau_v ∧ n)]`` and ``E[z_v(n)]`` at the checkpoints.

    ``z_v(n) = exp(sum_{i<n} g(X_i) + v(X_n))``.  The stopped means are flat
    when every pair differs by at most three combined half-widths; the
    unstopped means fail only on a decrease with disjoint intervals.
    """
    checkpoints = tuple(int(k) for k in checkpoints)
    if n_traj < 2:
        raise InvalidParams("n_traj must be >= 2")
    if not checkpoints or any(k < 0 for k in checkpoints) or list(checkpoints) != sorted(set(checkpoints)):
        raise InvalidParams("checkpoints must be increasing non-negative steps")
    policy = hitting_policy(v)

    def work(size, rng, offset):
        return _z_paths(model, v, policy, x0, size, checkpoints, rng)

    sizes, parts = _batched(n_traj, seed, work)
    stopped, free = [], []
    for j in range(len(checkpoints)):
        for dest, which in ((stopped, 0), (free, 1)):
            costs = np.concatenate([p[which][j] for p in parts])
            lm, lo, hi, batch = log_mean_ci(costs, sizes)
            dest.append(McEstimate(lm, lo, hi, n_traj, 0, seed, batch))
    target = float(v(x0))
    gap, flat = 0.0, True
    for i in range(len(stopped)):
        for j in range(i + 1, len(stopped)):
            d = abs(stopped[i].log_mean - stopped[j].log_mean)
            gap = max(gap, d)
            if d > 3.0 * (stopped[i].half_width + stopped[j].half_width) + 1e-12:
                flat = False
    centered = all(abs(s.log_mean - target) <= 3.0 * s.half_width + 1e-12 for s in stopped)
    decreases = tuple((checkpoints[i], checkpoints[j])
                      for i in range(len(free)) for j in range(i + 1, len(free))
                      if free[j].ci_high < free[i].ci_low)
    return MartingaleReport(checkpoints, target, tuple(stopped), tuple(free), gap, flat,
                            centered, decreases)


def bounded_policy_floor(model: MarkovModel, x0: float, horizons: Sequence[int], n_traj: int,
                         seed: int, *, window_depth: int = 64) -> list[McEstimate]:
    """MC values of the optimal horizon-``T`` policies, one per horizon.

    The tables come from ``T`` from-above iterations; every horizon reuses
    ``seed`` so the estimates share random numbers.
    """
    horizons = [int(t) for t in horizons]
    if any(t < 0 for t in horizons) or any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise InvalidParams("horizons must be increasing and non-negative")
    if n_traj < 2:
        raise InvalidParams("n_traj must be >= 2")
    top = max(horizons) if horizons else 0
    table = []
    if top > 0:
        run = iterate_from_above(model, x0, tol=0.0, max_iter=top, window_depth=window_depth,
                                 n_iter=top)
        table = [run.iterate(i) for i in range(top + 1)]
    out = []
    for T in horizons:
        if T == 0:
            G = model.terminal_cost(x0)
            out.append(McEstimate(G, G, G, n_traj, 0, seed, ()))
            continue
        policy = finite_horizon_policy(table[:T + 1])
        out.append(evaluate_policy_mc(model, policy, x0, n_traj, T, seed))
    return out
