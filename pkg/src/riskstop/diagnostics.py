"""Uniform-integrability profiles and u/w gap reports.

The profile tracks ``ln E_x[1_{tau > T} Z_T]`` with
``Z_T = exp(sum_{i<T} g(X_i) + G(X_T))``.  When it vanishes along a sequence
of horizons the stopped family is uniformly integrable and the Bellman
equation has a single solution in the band ``0 <= v <= G``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .bellman import BellmanRun
from .closed_form import Ex3Params
from .exceptions import AnalyticUnavailable, InvalidParams, ModelMismatch
from .markov_model import MarkovModel
from .stopping_policy import StoppingPolicy, _batched, log_mean_ci

SLOPE_FLOOR = -1e-9


@dataclass(frozen=True)
class UiProfile:
    T_grid: tuple[int, ...]
    values: tuple[float, ...]
    mode: str
    verdict: str
    growth_rate: float | None
    tol: float
    ci_low: tuple[float, ...] = ()
    ci_high: tuple[float, ...] = ()

    def csv_rows(self):
        return list(zip(self.T_grid, self.values))


def _growth_rate(T_grid, values):
    half = len(T_grid) // 2
    pts = [(t, v) for t, v in zip(T_grid[half:], values[half:]) if math.isfinite(v)]
    if len(pts) < 3:
        return None
    t, v = np.array(pts, dtype=float).T
    return float(np.polyfit(t, v, 1)[0])


def _analytic_verdict(values, rate, tol):
    if any(v == math.inf for v in values):
        return "divergent"
    if values and values[-1] == -math.inf:
        return "vanishing"
    if rate is None:
        return "inconclusive"
    if rate >= SLOPE_FLOOR:
        return "non-vanishing"
    if values[-1] < math.log(tol):
        return "vanishing"
    return "inconclusive"


def _propagate(model: MarkovModel, policy: StoppingPolicy, x0: float, T_max: int):
    """Exact ``ln E[1_{tau>t} Z_t]`` for t = 0..T_max over surviving states."""
    tail_rows = model.tail_homogeneous
    tail_stop = policy.stops_on_tail()
    rep = model.tail_representative() if tail_rows else None
    out = []
    mass = {} if policy.stops(x0, 0) else {float(x0): 0.0}
    bucket = -math.inf
    for t in range(T_max + 1):
        terms = [m + model.terminal_cost(x) for x, m in mass.items()]
        value = float(logsumexp(terms)) if terms else -math.inf
        if bucket > -math.inf:
            value = math.inf
        out.append(value)
        if t == T_max:
            break
        nxt = defaultdict(list)
        new_bucket = []
        sources = list(mass.items())
        if bucket > -math.inf:
            sources.append((rep, bucket))
        for x, m in sources:
            row = model.row(x)
            base = m + model.running_cost(x)
            for y, p in row.atoms:
                if p > 0.0:
                    nxt[float(y)].append(base + math.log(p))
            if row.tail is not None:
                if not tail_rows or tail_stop is None:
                    raise AnalyticUnavailable("tail behaviour of the policy is not decidable")
                if not tail_stop:
                    new_bucket.append(base + math.log(row.tail.mass()))
        mass = {y: float(logsumexp(v)) for y, v in nxt.items() if not policy.stops(y, t + 1)}
        bucket = float(logsumexp(new_bucket)) if new_bucket else -math.inf
    return out


def _mc_values(model, policy, x0, T_grid, n_traj, seed):
    T_max = T_grid[-1]
    marks = {t: i for i, t in enumerate(T_grid)}

    def work(size, rng, offset):
        x = np.full(size, float(x0))
        acc = np.zeros(size)
        alive = ~policy.stop_mask(x, 0)
        cols = []
        for t in range(T_max + 1):
            if t in marks:
                col = np.full(size, -np.inf)
                col[alive] = acc[alive] + model.terminal_cost_batch(x[alive])
                cols.append(col)
            if t == T_max:
                break
            idx = np.flatnonzero(alive)
            acc[idx] += model.running_cost_batch(x[idx])
            if idx.size:
                x[idx] = model.sample_batch(x[idx], rng)
                alive[idx] = ~policy.stop_mask(x[idx], t + 1)
        return cols

    sizes, parts = _batched(n_traj, seed, work)
    vals, lows, highs = [], [], []
    for j in range(len(T_grid)):
        lm, lo, hi, _ = log_mean_ci(np.concatenate([p[j] for p in parts]), sizes)
        vals.append(lm)
        lows.append(lo)
        highs.append(hi)
    return vals, lows, highs


def ui_profile(model: MarkovModel, policy: StoppingPolicy, x0: float,
               T_grid: Sequence[int] = (1, 2, 4, 8, 16, 32, 64, 128), method: str = "analytic", *,
               tol: float = 1e-8, n_traj: int = 10_000, seed: int = 0) -> UiProfile:
    """Profile of ``ln E_x0[1_{tau>T} Z_T]`` over ``T_grid``.

    ``method`` is ``analytic``, ``monte-carlo`` or ``auto`` (analytic with a
    simulation fallback).  Simulation can only return ``non-vanishing`` or
    ``inconclusive``.
    """
    T_grid = tuple(int(t) for t in T_grid)
    if not T_grid or any(t < 0 for t in T_grid) or any(b <= a for a, b in zip(T_grid, T_grid[1:])):
        raise InvalidParams("T_grid must be increasing and non-negative")
    if method not in ("analytic", "monte-carlo", "auto"):
        raise InvalidParams(f"unknown method {method!r}")
    if method != "monte-carlo":
        try:
            full = _propagate(model, policy, x0, T_grid[-1])
        except AnalyticUnavailable:
            if method == "analytic":
                raise
        else:
            values = tuple(full[t] for t in T_grid)
            rate = _growth_rate(T_grid, values)
            return UiProfile(T_grid, values, "analytic", _analytic_verdict(values, rate, tol), rate, tol)
    vals, lows, highs = _mc_values(model, policy, x0, T_grid, n_traj, seed)
    rate = _growth_rate(T_grid, vals)
    half = len(T_grid) // 2
    floor = all(lo > -math.inf for lo in lows[half:])
    verdict = "non-vanishing" if rate is not None and rate >= SLOPE_FLOOR and floor else "inconclusive"
    return UiProfile(T_grid, tuple(vals), "monte-carlo", verdict, rate, tol, tuple(lows), tuple(highs))


def brute_force_ui(model: MarkovModel, policy: StoppingPolicy, x0: float, T: int) -> float:
    """Path-by-path enumeration of ``ln E[1_{tau>T} Z_T]`` on finite-atom rows."""
    terms = []

    def walk(x, t, logw):
        if policy.stops(x, t):
            return
        if t == T:
            terms.append(logw + model.terminal_cost(x))
            return
        row = model.row(x)
        if row.tail is not None:
            raise AnalyticUnavailable("enumeration needs finite rows")
        for y, p in row.atoms:
            if p > 0.0:
                walk(float(y), t + 1, logw + model.running_cost(x) + math.log(p))

    walk(float(x0), 0, 0.0)
    return float(logsumexp(terms)) if terms else -math.inf


@dataclass(frozen=True)
class GapReport:
    tol: float
    gaps: tuple[tuple[float, float, float, float], ...]
    inconclusive: tuple[float, ...]

    @property
    def states(self) -> list[float]:
        return [g[0] for g in self.gaps]

    @property
    def max_gap(self) -> float:
        return max((g[3] for g in self.gaps), default=0.0)

    @property
    def verdict(self) -> str:
        if self.gaps:
            return "non-unique"
        if self.inconclusive:
            return "inconclusive"
        return "unique"


def gap_report(u_run: BellmanRun, w_run: BellmanRun, eval_set: Iterable[float] | None = None,
               tol: float = 1e-6) -> GapReport:
    """States where ``w - u`` exceeds ``tol`` plus the runs' extrapolated slack."""
    if u_run.model != w_run.model:
        raise ModelMismatch("runs were computed on different models")
    if u_run.direction != "from-below" or w_run.direction != "from-above":
        raise InvalidParams("expected a from-below run and a from-above run")
    if eval_set is None:
        shared = set(w_run.window_states().tolist())
        eval_set = sorted(s for s in u_run.window_states().tolist() if s in shared)
    gaps, unsure = [], []
    for x in eval_set:
        x = float(x)
        u, w = u_run.value(x), w_run.value(x)
        slack = tol + u_run.slack(x) + w_run.slack(x)
        gap = w - u
        if gap > slack:
            gaps.append((x, u, w, gap))
        elif math.isinf(slack) and gap > tol:
            unsure.append(x)
    return GapReport(tol, tuple(gaps), tuple(unsure))


def regime_classifier(alpha: float, c: float) -> str:
    """``stop-now``, ``gap`` or ``wait`` for the reset chain, closed intervals on the right."""
    return Ex3Params(float(alpha), float(c)).regime
