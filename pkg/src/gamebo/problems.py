"""Analytic benchmark problems.

``ripple`` is a synthetic stand-in for a switching-ripple-suppressor design
study: it keeps the variable/objective structure (``n_r + 4`` inputs,
``n_r + 1`` objectives, the natural territory split) but its formulas are
invented, smooth and cheap. ``correlation`` controls how strongly the first
``n_r`` objectives move together.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .equilibria import TerritoryPartition
from .errors import ValidationError


@dataclass
class ProblemSpec:
    name: str
    dim: int
    m: int
    lower: np.ndarray
    upper: np.ndarray
    function: Callable = field(repr=False)
    analytic: bool = True
    n_r: int | None = None
    partition: TerritoryPartition | None = None
    variables: tuple = ()

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.size != self.dim or self.upper.size != self.dim:
            raise ValidationError("bounds must have one entry per input")
        if np.any(self.upper <= self.lower):
            raise ValidationError("upper bounds must exceed lower bounds")
        if self.partition is not None and self.partition.dim != self.dim:
            raise ValidationError("default partition does not match the input dimension")

    def to_box(self, unit):
        return self.lower + np.asarray(unit, dtype=float) * (self.upper - self.lower)

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def __call__(self, x):
        return eval_analytic(self, x)


def eval_analytic(problem: ProblemSpec, x) -> np.ndarray:
    """Objective vector of ``problem`` at ``x`` (box units)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size != problem.dim:
        raise ValidationError(f"{problem.name}: expected {problem.dim} inputs, got {x.size}")
    slack = 1e-12 * (problem.upper - problem.lower)
    if np.any(x < problem.lower - slack) or np.any(x > problem.upper + slack) or not np.all(np.isfinite(x)):
        raise ValidationError(f"{problem.name}: input outside the box")
    y = np.asarray(problem.function(x), dtype=float).ravel()
    if y.size != problem.m:
        raise ValidationError(f"{problem.name}: function returned {y.size} objectives, expected {problem.m}")
    return y


# --------------------------------------------------------------- bi-objective


def front_shape(t):
    """Decreasing curve with a concave and a convex segment, 1 at t=0 and 0 at t=1."""
    t = np.asarray(t, dtype=float)
    return 1.0 - t + 0.12 * np.sin(2.0 * np.pi * t) * (1.0 - 0.5 * t)


def _biobjective(x):
    s = 2.0 * (x[1] - 0.5) ** 2
    return np.array([x[0] + s, 3.0 * (front_shape(x[0]) + s)])


def biobjective() -> ProblemSpec:
    """Two inputs, two objectives; the Pareto set is ``x_2 = 1/2`` and the
    front is ``(t, 3 h(t))`` for ``t`` in [0, 1] with ``h = front_shape``."""
    return ProblemSpec("biobjective", 2, 2, np.zeros(2), np.ones(2), _biobjective,
                       variables=("x1", "x2"))


# ----------------------------------------------------------- quadratic game

_QG_COUPLING = 0.1


def _quadratic_game(x):
    c = _QG_COUPLING * x[0] * x[1]
    return np.array([(x[0] - 0.3) ** 2 + c, (x[1] - 0.7) ** 2 + c])


def quadratic_game_equilibrium() -> np.ndarray:
    """Closed-form equilibrium: both first-order conditions hold."""
    a = np.array([[2.0, _QG_COUPLING], [_QG_COUPLING, 2.0]])
    return np.linalg.solve(a, [0.6, 1.4])


def quadratic_game() -> ProblemSpec:
    """Player 1 owns ``x_1`` and minimizes ``(x_1-0.3)^2 + 0.1 x_1 x_2``;
    player 2 owns ``x_2`` and minimizes ``(x_2-0.7)^2 + 0.1 x_1 x_2``."""
    return ProblemSpec("quadratic_game", 2, 2, np.zeros(2), np.ones(2), _quadratic_game,
                       partition=TerritoryPartition(((0,), (1,))), variables=("x1", "x2"))


# ------------------------------------------------------- symmetric instance


def _symmetric(x):
    return np.array([x[0] ** 2 + 0.5 * (x[1] - 1.0) ** 2, x[1] ** 2 + 0.5 * (x[0] - 1.0) ** 2])


def symmetric() -> ProblemSpec:
    """Swapping the inputs swaps the objectives."""
    return ProblemSpec("symmetric", 2, 2, np.zeros(2), np.ones(2), _symmetric,
                       partition=TerritoryPartition(((0,), (1,))), variables=("x1", "x2"))


# ------------------------------------------------------------- ripple-like

_C_BOUNDS = (1.0, 10.0)
_L_BOUNDS = (0.1, 2.0)


def ripple(n_r: int = 4, correlation: float = 0.8) -> ProblemSpec:
    """Synthetic family with inputs ``C_1..C_{n_r}, C_f, L_1, L_2, L_3``.

    Objectives ``f_1..f_{n_r}`` are attenuation-like and prefer large
    inductances; ``f_{n_r+1}`` is a cost that prefers small ones. The default
    partition gives ``(C_1, C_f)`` to player 1, ``C_j`` to player ``j`` and the
    three inductances to the cost player.
    """
    n_r = int(n_r)
    if n_r < 2:
        raise ValidationError("the ripple family needs n_r >= 2")
    if not 0.0 <= correlation <= 1.0:
        raise ValidationError("correlation must lie in [0, 1]")
    dim, m = n_r + 4, n_r + 1
    lower = np.array([_C_BOUNDS[0]] * (n_r + 1) + [_L_BOUNDS[0]] * 3)
    upper = np.array([_C_BOUNDS[1]] * (n_r + 1) + [_L_BOUNDS[1]] * 3)
    targets = 0.2 + 0.6 * np.arange(n_r) / (n_r - 1)
    rho = float(correlation)

    def function(x):
        t = (x - lower) / (upper - lower)
        c, cf, ind = t[:n_r], t[n_r], t[n_r + 1:]
        level = ind.mean()
        shared = (1.0 - level) ** 2 + 0.25 * (cf - 0.6) ** 2
        own = (c - targets + 0.3 * (cf - 0.5)) ** 2 + 0.1 * (c - level) ** 2
        attenuation = 10.0 * (rho * shared + (1.0 - rho) * own)
        cost = 5.0 * (0.8 * (level - 0.1) ** 2 + 0.2 * ((ind - level) ** 2).mean() + 0.1 * level * c.mean())
        return np.append(attenuation, cost)

    blocks = [(0, n_r)] + [(j,) for j in range(1, n_r)] + [(n_r + 1, n_r + 2, n_r + 3)]
    names = tuple(f"C{j + 1}" for j in range(n_r)) + ("Cf", "L1", "L2", "L3")
    return ProblemSpec(f"ripple{n_r}", dim, m, lower, upper, function, n_r=n_r,
                       partition=TerritoryPartition(tuple(blocks)), variables=names)


REGISTRY = {
    "biobjective": biobjective,
    "quadratic_game": quadratic_game,
    "symmetric": symmetric,
    "ripple": ripple,
}


def get_problem(name: str, **params) -> ProblemSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValidationError(f"unknown problem {name!r}; available: {sorted(REGISTRY)}") from None
    return factory(**params)
