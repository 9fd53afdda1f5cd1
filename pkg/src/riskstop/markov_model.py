"""Discrete-time Markov models with a running cost and a terminal cost.

A model exposes its transition kernel row by row.  Rows are finite lists of
atoms, optionally followed by an analytic power-law tail on the positive
integers.  States are real coordinates (floats); the built-in families use
non-negative reals (random-reset chain) or positive integers (i.i.d. Pareto).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp, zeta

from .exceptions import InvalidParams, TailUndecidable

PARETO_NORMALIZER = math.pi**2 / 6.0
MASS_TOL = 1e-12
_MAX_EXPLICIT_TAIL_TERMS = 10**7


def encode_state(x: float) -> str:
    return repr(float(x))


def decode_state(text: str) -> float:
    return float(text)


@dataclass(frozen=True)
class PowerLawTail:
    """Tail ``P[X = k] = k**-exponent / normalizer`` for integers ``k >= start``.

    ``terminal_slope`` records the terminal cost on the tail, ``G(k) = slope * k``;
    ``None`` means the tail has no known affine form and only the zero closure
    can be summed.
    """

    start: int
    exponent: float = 2.0
    normalizer: float = PARETO_NORMALIZER
    terminal_slope: float | None = 1.0

    def __post_init__(self):
        if self.start < 1 or self.exponent <= 1.0:
            raise InvalidParams("power-law tail needs start >= 1 and exponent > 1")

    def mass(self) -> float:
        return float(zeta(self.exponent, self.start)) / self.normalizer

    def log_expect(self, level: float) -> float:
        """``ln sum_{k >= start} P[k] exp(min(G(k), level))``, possibly ``+inf``."""
        if level <= 0.0:
            return math.log(self.mass())
        slope = self.terminal_slope
        if slope is None:
            raise TailUndecidable("terminal cost on the tail has no known affine form")
        if slope <= 0.0:
            return math.log(self.mass())
        if math.isinf(level):
            # exp(slope * k) beats any polynomial decay
            return math.inf
        last = math.floor(level / slope)
        if last < self.start:
            return level + math.log(self.mass())
        if last - self.start + 1 > _MAX_EXPLICIT_TAIL_TERMS:
            raise TailUndecidable(f"level {level} needs too many explicit tail terms")
        k = np.arange(self.start, last + 1, dtype=float)
        head = slope * k - self.exponent * np.log(k)
        rest = level + math.log(float(zeta(self.exponent, last + 1)))
        return float(logsumexp(np.append(head, rest))) - math.log(self.normalizer)


@dataclass(frozen=True)
class KernelRow:
    atoms: tuple[tuple[float, float], ...]
    tail: PowerLawTail | None = None

    def __post_init__(self):
        states = [y for y, _ in self.atoms]
        if len(set(states)) != len(states):
            raise InvalidParams("kernel row atoms must be distinct states")
        total = 0.0
        for _, p in self.atoms:
            if not 0.0 <= p <= 1.0:
                raise InvalidParams(f"atom probability {p} outside [0, 1]")
            total += p
        if self.tail is not None:
            total += self.tail.mass()
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidParams(f"kernel row mass {total!r} differs from 1")


@dataclass(frozen=True)
class CostSpec:
    running: Callable[[float], float]
    terminal: Callable[[float], float]
    c_lower: float
    g_upper: float


class MarkovModel:
    """Base class; concrete families are frozen dataclasses.

    Subclasses define ``row``, ``costs`` and a ``terminal_cap`` field.  When
    ``tail_homogeneous`` is true, every state outside the enumerable part of
    the state space shares the row of ``tail_representative()`` and its
    running cost, which lets value functions carry an exact closure there.
    """

    family = "custom"
    tail_homogeneous = False
    terminal_cap: float = math.inf

    @property
    def costs(self) -> CostSpec:
        raise NotImplementedError

    def row(self, x: float) -> KernelRow:
        raise NotImplementedError

    def running_cost(self, x: float) -> float:
        return float(self.costs.running(x))

    def terminal_cost(self, x: float) -> float:
        return min(float(self.costs.terminal(x)), self.terminal_cap)

    def running_cost_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.running_cost(x) for x in xs], dtype=float)

    def terminal_cost_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self.terminal_cost(x) for x in xs], dtype=float)

    def tail_representative(self) -> float:
        raise NotImplementedError(f"{type(self).__name__} has no homogeneous tail")

    def with_terminal_cap(self, level: float) -> "MarkovModel":
        """Same dynamics with terminal cost ``G ∧ level``."""
        return replace(self, terminal_cap=float(level))

    def sample_batch(self, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty(len(xs), dtype=float)
        u = rng.random(len(xs))
        for i, x in enumerate(xs):
            row = self.row(float(x))
            if row.tail is not None:
                raise NotImplementedError("generic sampler cannot draw from a tail")
            cum = np.cumsum([p for _, p in row.atoms])
            j = min(int(np.searchsorted(cum, u[i], side="right")), len(row.atoms) - 1)
            out[i] = row.atoms[j][0]
        return out

    def reachable(self, x: float, n: int) -> set[float]:
        """States reachable from ``x`` in at most ``n`` steps through atoms.

        Tail states are not enumerated; they are handled analytically.
        """
        states, _, _ = explore(self, [x], n)
        return set(states)

    def describe(self) -> dict:
        return {"family": self.family}


def explore(model: MarkovModel, roots: Iterable[float], depth: int):
    """Multi-source BFS over atoms.

    Returns ``(states, depth_of, closed)`` where ``closed`` is true when the
    enumeration saturated before reaching ``depth``.
    """
    depth_of: dict[float, int] = {}
    queue: deque[float] = deque()
    for r in roots:
        r = float(r)
        if r not in depth_of:
            depth_of[r] = 0
            queue.append(r)
    closed = True
    while queue:
        x = queue.popleft()
        d = depth_of[x]
        for y, p in model.row(x).atoms:
            if p <= 0.0 or y in depth_of:
                continue
            if d >= depth:
                closed = False
                continue
            depth_of[y] = d + 1
            queue.append(y)
    return list(depth_of), depth_of, closed


@dataclass(frozen=True)
class RandomResetChain(MarkovModel):
    """Chain on ``[0, inf)``: jump to 0 w.p. ``alpha``, else ``x -> x + 1``.

    Running cost is the constant ``c`` and terminal cost is ``G(x) = x``.
    """

    alpha: float
    c: float
    terminal_cap: float = math.inf
    family = "ex3"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidParams(f"alpha={self.alpha} outside [0, 1]")
        if not self.c > 0.0 or not math.isfinite(self.c):
            raise InvalidParams(f"c={self.c} must be positive and finite")

    @property
    def costs(self) -> CostSpec:
        c = self.c
        return CostSpec(lambda x: c, lambda x: float(x), c, c)

    def row(self, x: float) -> KernelRow:
        atoms = [(0.0, self.alpha), (float(x) + 1.0, 1.0 - self.alpha)]
        return KernelRow(tuple(a for a in atoms if a[1] > 0.0))

    def running_cost(self, x):
        return self.c

    def terminal_cost(self, x):
        return min(float(x), self.terminal_cap)

    def running_cost_batch(self, xs):
        return np.full(len(xs), self.c)

    def terminal_cost_batch(self, xs):
        return np.minimum(np.asarray(xs, dtype=float), self.terminal_cap)

    def sample_batch(self, xs, rng):
        xs = np.asarray(xs, dtype=float)
        return np.where(rng.random(len(xs)) < self.alpha, 0.0, xs + 1.0)

    def describe(self):
        return {"family": self.family, "alpha": self.alpha, "c": self.c,
                "terminal_cap": self.terminal_cap}


_PARETO_TABLE_SIZE = 1 << 20


@dataclass(frozen=True)
class ParetoChain(MarkovModel):
    """I.i.d. discrete Pareto draws ``P[X = k] = 1 / (C k^2)`` on ``k >= 1``.

    Running cost ``c``, terminal cost ``G(k) = k``.  Atoms ``1..cutoff`` are
    explicit; the rest of the support is a :class:`PowerLawTail`.
    """

    c: float
    cutoff: int = 64
    terminal_cap: float = math.inf
    family = "ex1"
    tail_homogeneous = True

    def __post_init__(self):
        if not self.c > 0.0 or not math.isfinite(self.c):
            raise InvalidParams(f"c={self.c} must be positive and finite")
        if self.cutoff < 1:
            raise InvalidParams("cutoff must be >= 1")

    @property
    def costs(self) -> CostSpec:
        c = self.c
        return CostSpec(lambda x: c, lambda x: float(x), c, c)

    @cached_property
    def _row(self) -> KernelRow:
        atoms = tuple((float(k), 1.0 / (PARETO_NORMALIZER * k * k))
                      for k in range(1, self.cutoff + 1))
        return KernelRow(atoms, PowerLawTail(self.cutoff + 1))

    def row(self, x):
        return self._row

    def tail_representative(self):
        return float(self.cutoff + 1)

    def running_cost(self, x):
        return self.c

    def terminal_cost(self, x):
        return min(float(x), self.terminal_cap)

    def running_cost_batch(self, xs):
        return np.full(len(xs), self.c)

    def terminal_cost_batch(self, xs):
        return np.minimum(np.asarray(xs, dtype=float), self.terminal_cap)

    def sample_batch(self, xs, rng):
        return sample_pareto(rng.random(len(xs)))

    def describe(self):
        return {"family": self.family, "c": self.c, "cutoff": self.cutoff,
                "terminal_cap": self.terminal_cap}


_pareto_cdf: np.ndarray | None = None


def _pareto_table() -> np.ndarray:
    global _pareto_cdf
    if _pareto_cdf is None:
        k = np.arange(1, _PARETO_TABLE_SIZE + 1, dtype=float)
        _pareto_cdf = np.cumsum(1.0 / (PARETO_NORMALIZER * k * k))
    return _pareto_cdf


def sample_pareto(u: np.ndarray) -> np.ndarray:
    """Inverse-CDF map of uniforms to discrete Pareto draws."""
    cdf = _pareto_table()
    k = np.searchsorted(cdf, u, side="left").astype(float) + 1.0
    far = k > _PARETO_TABLE_SIZE
    if far.any():
        # survival S(k) = zeta(2, k + 1) / C; solve S(k) <= 1 - u near 1 / (C (1 - u))
        s = 1.0 - u[far]
        guess = np.maximum(np.ceil(1.0 / (PARETO_NORMALIZER * s) - 0.5), _PARETO_TABLE_SIZE + 1.0)
        for _ in range(4):
            too_small = zeta(2.0, guess + 1.0) / PARETO_NORMALIZER > s
            guess = np.where(too_small, guess + 1.0, guess)
            prev_ok = zeta(2.0, guess) / PARETO_NORMALIZER <= s
            guess = np.where(prev_ok & (guess > _PARETO_TABLE_SIZE + 1.0), guess - 1.0, guess)
        k[far] = guess
    return k


def _as_cost(value, name: str) -> Callable[[float], float]:
    if callable(value):
        return value
    if isinstance(value, Mapping):
        table = {float(k): float(v) for k, v in value.items()}
        return lambda x: table[float(x)]
    if value == "identity":
        return lambda x: float(x)
    if isinstance(value, (int, float)):
        const = float(value)
        return lambda x: const
    raise InvalidParams(f"cannot interpret {name} cost {value!r}")


@dataclass(frozen=True, eq=False)
class FiniteChain(MarkovModel):
    """Chain on a finite state set given by explicit kernel rows.

    ``running`` and ``terminal`` are constants, per-state mappings, callables,
    or (terminal only) ``"identity"``.
    """

    rows: Mapping[float, Sequence[tuple[float, float]]]
    running: object = 1.0
    terminal: object = "identity"
    c_lower: float | None = None
    g_upper: float | None = None
    terminal_cap: float = math.inf
    _kernel: dict = field(default=None, init=False, repr=False, compare=False)
    family = "custom-atoms"

    def __post_init__(self):
        kernel = {}
        for x, atoms in self.rows.items():
            merged: dict[float, float] = {}
            for y, p in atoms:
                merged[float(y)] = merged.get(float(y), 0.0) + float(p)
            kernel[float(x)] = KernelRow(tuple((y, p) for y, p in merged.items() if p > 0.0))
        for x, row in kernel.items():
            for y, _ in row.atoms:
                if y not in kernel:
                    raise InvalidParams(f"state {y} reached from {x} has no kernel row")
        object.__setattr__(self, "rows", MappingProxyType(dict(self.rows)))
        object.__setattr__(self, "_kernel", kernel)

    def __eq__(self, other):
        if not isinstance(other, FiniteChain):
            return NotImplemented
        return (self._kernel == other._kernel and self.running == other.running
                and self.terminal == other.terminal and self.terminal_cap == other.terminal_cap)

    __hash__ = None

    @property
    def states(self) -> list[float]:
        return sorted(self._kernel)

    @cached_property
    def _costs(self) -> CostSpec:
        g = _as_cost(self.running, "running")
        G = _as_cost(self.terminal, "terminal")
        values = [float(g(x)) for x in self._kernel]
        lo = min(values) if self.c_lower is None else float(self.c_lower)
        hi = max(values) if self.g_upper is None else float(self.g_upper)
        return CostSpec(g, G, lo, hi)

    @property
    def costs(self):
        return self._costs

    def row(self, x):
        try:
            return self._kernel[float(x)]
        except KeyError:
            raise InvalidParams(f"state {x} is not in the model") from None

    def sample_batch(self, xs, rng):
        xs = np.asarray(xs, dtype=float)
        u = rng.random(len(xs))
        out = np.empty(len(xs), dtype=float)
        for s in np.unique(xs):
            idx = xs == s
            atoms = self._kernel[float(s)].atoms
            targets = np.array([y for y, _ in atoms])
            cum = np.cumsum([p for _, p in atoms])
            j = np.minimum(np.searchsorted(cum, u[idx], side="right"), len(atoms) - 1)
            out[idx] = targets[j]
        return out

    def describe(self):
        return {"family": self.family, "n_states": len(self._kernel),
                "terminal_cap": self.terminal_cap}


@dataclass(frozen=True)
class Violation:
    state: float | None
    kind: str
    value: float


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self):
        return len(self.violations)

    def __iter__(self):
        return iter(self.violations)


def validate_costs(model: MarkovModel, probe_states: Sequence[float]) -> ValidationReport:
    """Check ``c_lower <= g <= g_upper``, ``c_lower > 0`` and ``G >= 0`` on probes.

    Violations are returned, never raised.
    """
    if len(probe_states) == 0:
        raise InvalidParams("probe_states must be non-empty")
    costs = model.costs
    found = []
    if not costs.c_lower > 0.0:
        found.append(Violation(None, "c_lower not positive", costs.c_lower))
    for x in probe_states:
        g = float(costs.running(x))
        G = float(costs.terminal(x))
        if g < costs.c_lower or g <= 0.0:
            found.append(Violation(float(x), "g below c_lower", g))
        if g > costs.g_upper:
            found.append(Violation(float(x), "g above g_upper", g))
        if G < 0.0:
            found.append(Violation(float(x), "G negative", G))
    return ValidationReport(tuple(found))


def log_mgf(model: MarkovModel, x: float, v) -> float:
    """``ln E_x[exp(v(X_1))]`` in extended reals.

    ``v`` is a callable; when the row has a tail it must also carry a closure
    ``level`` (see :class:`riskstop.bellman.LogValueFn`) giving
    ``v(y) = min(G(y), level)`` on tail states.
    """
    row = model.row(x)
    probs = [p for _, p in row.atoms if p > 0.0]
    vals = [float(v(y)) for y, p in row.atoms if p > 0.0]
    tail_term = None
    if row.tail is not None:
        level = getattr(v, "level", None)
        if level is None:
            raise TailUndecidable("value function has no closure on the kernel tail")
        tail_term = row.tail.log_expect(min(level, model.terminal_cap))
    top = max(vals + ([tail_term] if tail_term is not None else []))
    if math.isinf(top):
        return top
    # shift by the largest value so that a constant v returns exactly itself
    parts = [p * math.exp(val - top) for p, val in zip(probs, vals)]
    if tail_term is not None:
        parts.append(math.exp(tail_term - top))
    return top + math.log(math.fsum(parts))


def sample_next(model: MarkovModel, x: float, rng: np.random.Generator) -> float:
    return float(model.sample_batch(np.array([float(x)]), rng)[0])
