"""Log-domain Bellman operator and monotone value iteration.

The operator maps a log value function ``v`` to

    v'(x) = min(G(x), g(x) + ln E_x[exp(v(X_1))]),

and iterating it from ``v = 0`` (resp. ``v = G``) gives non-decreasing
(resp. non-increasing) sequences whose limits are the minimal and maximal
solutions of the fixed-point equation in the band ``0 <= v <= G``.

Iterations run on the states reachable from a set of roots.  The support is
explored to depth ``max_iter + window_depth`` (doubled on demand), which
keeps every value inside the convergence window free of truncation error:
a state at depth ``d`` is exact for ``k <= D - d`` iterations when the
support has depth ``D``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import BadCandidate, InvalidParams, MaxIterExceeded
from .markov_model import MarkovModel, explore, log_mgf

# continuation within this distance of G counts as stopping
TIE = 1e-14
CONSECUTIVE = 3


@dataclass(frozen=True, eq=False)
class LogValueFn:
    """Value function in log domain.

    Lookup order: explicit ``values``, then ``func`` if given, then the
    closure ``min(G(y), level)``.  ``level = 0`` is the use-zero closure and
    ``level = inf`` is the use-G closure.
    """

    model: MarkovModel
    values: Mapping[float, float] = field(default_factory=dict)
    level: float = 0.0
    func: Callable[[float], float] | None = None
    base: float | None = None

    @classmethod
    def zero(cls, model, base=None):
        return cls(model, {}, 0.0, base=base)

    @classmethod
    def terminal(cls, model, base=None):
        return cls(model, {}, math.inf, base=base)

    @classmethod
    def capped(cls, model, level, base=None):
        return cls(model, {}, float(level), base=base)

    @classmethod
    def from_function(cls, model, func, level=0.0, base=None):
        return cls(model, {}, float(level), func=func, base=base)

    @property
    def closure(self) -> str:
        if self.level == 0.0:
            return "use-zero"
        if math.isinf(self.level):
            return "use-G"
        return "capped"

    @property
    def support(self) -> list[float]:
        return list(self.values)

    def __call__(self, y: float) -> float:
        y = float(y)
        v = self.values.get(y)
        if v is not None:
            return v
        if self.func is not None:
            return float(self.func(y))
        return min(self.model.terminal_cost(y), self.level)

    def on(self, states: Iterable[float]) -> np.ndarray:
        return np.array([self(x) for x in states], dtype=float)


def _cap(G: float, cont: float) -> float:
    return G if cont >= G - TIE else cont


def _next_level(model: MarkovModel, v: LogValueFn) -> float:
    if not model.tail_homogeneous:
        return v.level
    rep = model.tail_representative()
    return model.running_cost(rep) + log_mgf(model, rep, v)


def apply_bellman(model: MarkovModel, v: LogValueFn, eval_set: Iterable[float]) -> LogValueFn:
    """One application of the operator on ``eval_set``.

    The result keeps ``v``'s closure, except on models with a homogeneous tail
    where the closure level is advanced exactly.
    """
    out = {}
    for x in eval_set:
        x = float(x)
        G = model.terminal_cost(x)
        out[x] = _cap(G, model.running_cost(x) + log_mgf(model, x, v))
    return LogValueFn(model, out, _next_level(model, v), base=v.base)


def residual(model: MarkovModel, v, eval_set: Iterable[float]) -> float:
    """``sup |v - Bv|`` over ``eval_set``."""
    worst = 0.0
    for x in eval_set:
        x = float(x)
        bv = _cap(model.terminal_cost(x), model.running_cost(x) + log_mgf(model, x, v))
        vx = float(v(x))
        if vx == bv:
            continue
        worst = max(worst, abs(vx - bv))
    return worst


class _Compiled:
    """Support, atoms and costs flattened into arrays for fast iteration."""

    def __init__(self, model: MarkovModel, roots: Sequence[float], depth: int):
        states, depth_of, closed = explore(model, roots, depth)
        self.model = model
        self.closed = closed
        self.states = np.array(states, dtype=float)
        self.depth = np.array([depth_of[s] for s in states], dtype=int)
        self.index = {s: i for i, s in enumerate(states)}
        row_states = list(states)
        self.rep_row = None
        if model.tail_homogeneous:
            self.rep_row = len(row_states)
            row_states.append(model.tail_representative())

        ptr, dst, logp, out_G = [], [], [], []
        tails: dict = {}
        for r, x in enumerate(row_states):
            row = model.row(x)
            ptr.append(len(dst))
            atoms = [(y, p) for y, p in row.atoms if p > 0.0]
            if not atoms:
                raise InvalidParams("rows without atoms are not supported")
            for y, p in atoms:
                j = self.index.get(y, -1)
                dst.append(j)
                logp.append(math.log(p))
                out_G.append(model.terminal_cost(y) if j < 0 else 0.0)
            if row.tail is not None:
                tails.setdefault(row.tail, []).append(r)
        self.ptr = np.array(ptr, dtype=np.intp)
        self.dst = np.array(dst, dtype=np.intp)
        self.inside = self.dst >= 0
        self.dst_safe = np.where(self.inside, self.dst, 0)
        self.logp = np.array(logp)
        self.out_G = np.array(out_G)
        self.owner = np.repeat(np.arange(len(ptr)), np.diff(np.append(self.ptr, len(dst))))
        self.tails = [(t, np.array(rows, dtype=np.intp)) for t, rows in tails.items()]
        self.G = model.terminal_cost_batch(self.states)
        g = model.running_cost_batch(np.array(row_states, dtype=float))
        self.g_rows = g

    def step(self, vals: np.ndarray, level: float) -> tuple[np.ndarray, float]:
        atom_vals = np.where(self.inside, vals[self.dst_safe], np.minimum(self.out_G, level))
        terms = self.logp + atom_vals
        top = np.maximum.reduceat(terms, self.ptr)
        top_safe = np.where(np.isfinite(top), top, 0.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            s = np.add.reduceat(np.exp(terms - top_safe[self.owner]), self.ptr)
            lme = np.where(np.isposinf(top), np.inf, top_safe + np.log(s))
        cap = self.model.terminal_cap
        for tail, rows in self.tails:
            lme[rows] = np.logaddexp(lme[rows], tail.log_expect(min(level, cap)))
        cont = self.g_rows + lme
        n = len(self.states)
        new = np.where(cont[:n] >= self.G - TIE, self.G, cont[:n])
        new_level = float(cont[self.rep_row]) if self.rep_row is not None else level
        return new, new_level


def _abs_change(new: np.ndarray, old: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        d = np.abs(new - old)
    return np.where(new == old, 0.0, d)


@dataclass
class BellmanRun:
    """Trace of a monotone value iteration.

    ``residuals[k-1]`` is the sup-change between iterates ``k-1`` and ``k``
    over the evaluation window (states within depth ``min(k, window_depth)``
    of the roots), which is the fixed-point defect of iterate ``k-1`` there.
    """

    model: MarkovModel
    direction: str
    tol: float
    roots: tuple[float, ...]
    window_depth: int
    states: np.ndarray
    depth: np.ndarray
    values: list[np.ndarray]
    levels: list[float]
    residuals: list[float]
    monotone: list[bool]
    converged: bool
    support_depth: int
    restarts: int = 0
    _index: dict = field(default=None, repr=False)

    def __post_init__(self):
        if self._index is None:
            self._index = {float(s): i for i, s in enumerate(self.states)}

    @property
    def base(self) -> float:
        return self.roots[0]

    @property
    def iteration_count(self) -> int:
        return len(self.values) - 1

    def iterate(self, n: int) -> LogValueFn:
        if n < 0:
            n += len(self.values)
        vals = self.values[n]
        return LogValueFn(self.model, dict(zip(self.states.tolist(), vals.tolist())),
                          self.levels[n], base=self.base)

    @property
    def iterates(self) -> list[LogValueFn]:
        return [self.iterate(n) for n in range(len(self.values))]

    @property
    def final(self) -> LogValueFn:
        return self.iterate(-1)

    def value(self, x: float, n: int = -1) -> float:
        i = self._index.get(float(x))
        if i is None:
            return self.iterate(n)(x)
        return float(self.values[n][i])

    def window_states(self) -> np.ndarray:
        return self.states[self.depth <= self.window_depth]

    def slack(self, x: float) -> float:
        """Estimated distance from the last iterate to the limit at ``x``.

        Geometric extrapolation of the last two changes; ``inf`` when the
        changes are not contracting or ``x`` is outside the support.
        """
        i = self._index.get(float(x))
        if i is None or len(self.values) < 3:
            return math.inf
        d1 = float(_abs_change(self.values[-1][i:i + 1], self.values[-2][i:i + 1])[0])
        d2 = float(_abs_change(self.values[-2][i:i + 1], self.values[-3][i:i + 1])[0])
        if d1 == 0.0:
            return 0.0
        if d2 == 0.0 or d1 >= d2:
            return math.inf
        r = d1 / d2
        return d1 * r / (1.0 - r)

    def raise_for_status(self) -> "BellmanRun":
        if not self.converged:
            raise MaxIterExceeded(
                f"{self.direction} iteration did not reach tol={self.tol} "
                f"in {self.iteration_count} iterations")
        return self

    def csv_rows(self):
        """Yield ``(iteration, state, value, residual)`` over the window."""
        mask = self.depth <= self.window_depth
        states = self.states[mask]
        for k, vals in enumerate(self.values):
            cur = vals[mask]
            res = np.zeros_like(cur) if k == 0 else _abs_change(cur, self.values[k - 1][mask])
            for s, v, r in zip(states.tolist(), cur.tolist(), res.tolist()):
                yield k, s, v, r


def _initial(comp: _Compiled, direction: str) -> tuple[np.ndarray, float]:
    if direction == "from-below":
        return np.zeros(len(comp.states)), 0.0
    return comp.G.copy(), math.inf


def _run(model, roots, direction, tol, max_iter, window_depth, fixed):
    target = fixed if fixed is not None else max_iter
    depth = window_depth + min(max(target, 1), 32)
    restarts = 0
    while True:
        comp = _Compiled(model, roots, depth)
        exact_until = math.inf if comp.closed else depth - window_depth
        vals, level = _initial(comp, direction)
        values, levels, residuals, monotone = [vals], [level], [], []
        quiet = 0
        converged = False
        restart = False
        k = 0
        while k < target:
            if k + 1 > exact_until:
                restart = True
                break
            new, new_level = comp.step(vals, level)
            k += 1
            mask = comp.depth <= min(k, window_depth)
            change = _abs_change(new, vals)
            res = float(change[mask].max()) if mask.any() else 0.0
            if direction == "from-below":
                ok = bool(np.all(new >= vals - 1e-12 * (1.0 + np.abs(vals))))
            else:
                ok = bool(np.all(new <= vals + 1e-12 * (1.0 + np.abs(vals))))
            vals, level = new, new_level
            values.append(vals)
            levels.append(level)
            residuals.append(res)
            monotone.append(ok)
            quiet = quiet + 1 if res <= tol else 0
            if quiet >= CONSECUTIVE:
                converged = True
                if fixed is None:
                    break
        if restart:
            depth = window_depth + min(2 * (depth - window_depth), target)
            restarts += 1
            continue
        return BellmanRun(model, direction, tol, tuple(float(r) for r in roots), window_depth,
                          comp.states, comp.depth, values, levels, residuals, monotone,
                          converged, depth, restarts)


def _check_run_args(tol, max_iter, window_depth):
    if not tol >= 0.0:
        raise InvalidParams("tol must be non-negative")
    if max_iter < 1:
        raise InvalidParams("max_iter must be >= 1")
    if window_depth < 0:
        raise InvalidParams("window_depth must be >= 0")


def _roots(x0, eval_states):
    roots = [float(x0)]
    for s in eval_states or ():
        if float(s) not in roots:
            roots.append(float(s))
    return roots


def iterate_from_below(model: MarkovModel, x0: float, tol: float = 1e-8, max_iter: int = 500, *,
                       eval_states: Sequence[float] | None = None, window_depth: int = 64,
                       n_iter: int | None = None) -> BellmanRun:
    """Iterate the operator from ``v = 0``.

    ``eval_states`` adds further roots to the window.  ``n_iter`` runs exactly
    that many iterations instead of stopping at convergence.  A run that does
    not converge is returned with ``converged=False``; call
    :meth:`BellmanRun.raise_for_status` to turn that into an error.
    """
    _check_run_args(tol, max_iter, window_depth)
    return _run(model, _roots(x0, eval_states), "from-below", tol, max_iter, window_depth, n_iter)


def iterate_from_above(model: MarkovModel, x0: float, tol: float = 1e-8, max_iter: int = 500, *,
                       eval_states: Sequence[float] | None = None, window_depth: int = 64,
                       n_iter: int | None = None) -> BellmanRun:
    """Iterate the operator from ``v = G``; see :func:`iterate_from_below`."""
    _check_run_args(tol, max_iter, window_depth)
    return _run(model, _roots(x0, eval_states), "from-above", tol, max_iter, window_depth, n_iter)


def truncated_terminal_iteration(model: MarkovModel, x0: float, levels: Sequence[float],
                                 tol: float = 1e-8, max_iter: int = 500,
                                 window_depth: int = 64) -> list[tuple[float, float]]:
    """Minimal solution at ``x0`` for terminal costs ``G ∧ n``, one per level."""
    levels = [float(n) for n in levels]
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidParams("levels must be increasing")
    out = []
    for n in levels:
        run = iterate_from_below(model.with_terminal_cap(n), x0, tol, max_iter,
                                 window_depth=window_depth)
        run.raise_for_status()
        out.append((n, run.value(x0)))
    return out


@dataclass(frozen=True)
class SandwichReport:
    max_below_u: float
    max_above_w: float
    violations: tuple[tuple[float, str, float], ...]

    @property
    def holds(self) -> bool:
        return not self.violations


def verify_sandwich(u_run: BellmanRun, w_run: BellmanRun, candidate, eval_set: Iterable[float],
                    tol: float | None = None) -> SandwichReport:
    """Check ``u <= candidate <= w`` on ``eval_set``.

    From-below values only underestimate ``u`` and from-above values only
    overestimate ``w``, so ``tol`` absorbs floating-point noise only.
    """
    model = u_run.model
    if tol is None:
        tol = max(u_run.tol, w_run.tol, 1e-12)
    below = above = -math.inf
    found = []
    for x in eval_set:
        x = float(x)
        c = float(candidate(x))
        G = model.terminal_cost(x)
        if not (-1e-12 <= c <= G + 1e-12):
            raise BadCandidate(f"candidate value {c} at {x} outside [0, G(x)={G}]")
        b = u_run.value(x) - c
        a = c - w_run.value(x)
        below, above = max(below, b), max(above, a)
        if b > tol:
            found.append((x, "below-u", b))
        if a > tol:
            found.append((x, "above-w", a))
    return SandwichReport(below, above, tuple(found))
