"""Game solutions: discrete Nash equilibria, the relaxed fixed-point iteration,
Kalai-Smorodinsky (efficient maxmin) selection and its Nash-anchored variant."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import AnchorError, ValidationError
from .pareto import AnchorPoints, ObjectiveSet, benefit_ratios, nondominated_mask, utopia

PRODUCT_CAP = 10_000_000
LINE_TOLERANCE = 1e-2
KINDS = ("nash", "ks", "efficient-maxmin", "nks")


@dataclass(frozen=True)
class TerritoryPartition:
    """Disjoint assignment of input dimensions (0-based) to players."""

    blocks: tuple

    def __post_init__(self):
        blocks = tuple(tuple(int(i) for i in b) for b in self.blocks)
        if not blocks or any(len(b) == 0 for b in blocks):
            raise ValidationError("every player needs at least one variable")
        flat = [i for b in blocks for i in b]
        if len(set(flat)) != len(flat):
            raise ValidationError("partition blocks overlap; coupled strategy sets are not supported")
        if sorted(flat) != list(range(len(flat))):
            raise ValidationError(f"partition must cover dimensions 0..{len(flat) - 1} exactly")
        object.__setattr__(self, "blocks", blocks)

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return sum(len(b) for b in self.blocks)

    @classmethod
    def single(cls, dim: int) -> "TerritoryPartition":
        return cls((tuple(range(dim)),))


@dataclass(frozen=True)
class StrategyGrid:
    """Finite strategy list for each player; the game is played on their product.

    Cells are enumerated in C order (player 0 varies slowest).
    """

    partition: TerritoryPartition
    per_player: tuple

    def __post_init__(self):
        grids = tuple(np.atleast_2d(np.asarray(g, dtype=float)) for g in self.per_player)
        if len(grids) != self.partition.m:
            raise ValidationError("one strategy list per player is required")
        for i, (g, b) in enumerate(zip(grids, self.partition.blocks)):
            if g.shape[1] != len(b):
                raise ValidationError(f"player {i}: strategies have dimension {g.shape[1]}, block has {len(b)}")
            if len(g) < 1:
                raise ValidationError(f"player {i} has no strategies")
        object.__setattr__(self, "per_player", grids)

    @property
    def shape(self) -> tuple:
        return tuple(len(g) for g in self.per_player)

    @property
    def product_size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))

    @property
    def m(self) -> int:
        return self.partition.m

    @property
    def dim(self) -> int:
        return self.partition.dim

    def designs(self, flat_indices=None) -> np.ndarray:
        """Design vectors of the given flat cell indices (all cells by default)."""
        if flat_indices is None:
            flat_indices = np.arange(self.product_size)
        flat_indices = np.asarray(flat_indices, dtype=np.int64).ravel()
        cells = np.unravel_index(flat_indices, self.shape)
        out = np.empty((flat_indices.size, self.dim))
        for g, b, idx in zip(self.per_player, self.partition.blocks, cells):
            out[:, list(b)] = g[idx]
        return out

    def design(self, cell) -> np.ndarray:
        return self.designs([np.ravel_multi_index(tuple(cell), self.shape)])[0]

    def cell_of(self, design, atol: float = 1e-12):
        """Cell index tuple of ``design`` or ``None`` when it is off the grid."""
        x = np.asarray(design, dtype=float).ravel()
        if x.size != self.dim:
            raise ValidationError("design has the wrong dimension")
        cell = []
        for g, b in zip(self.per_player, self.partition.blocks):
            hits = np.flatnonzero(np.all(np.abs(g - x[list(b)]) <= atol, axis=1))
            if hits.size == 0:
                return None
            cell.append(int(hits[0]))
        return tuple(cell)

    def subgrid(self, selections) -> "StrategyGrid":
        """Grid restricted to the listed strategy indices of each player."""
        return StrategyGrid(self.partition, tuple(g[np.asarray(s, dtype=int)]
                                                  for g, s in zip(self.per_player, selections)))


@dataclass
class EquilibriumResult:
    design: np.ndarray
    objectives: np.ndarray
    kind: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown solution kind {self.kind!r}")
        self.design = np.asarray(self.design, dtype=float)
        self.objectives = np.asarray(self.objectives, dtype=float)


def _values_tensor(values, grid: StrategyGrid, cap: int = PRODUCT_CAP):
    if grid.product_size > cap:
        raise ValidationError(f"strategy product of {grid.product_size} cells exceeds the cap {cap}")
    v = np.asarray(values, dtype=float)
    if v.size != grid.product_size * grid.m:
        raise ValidationError(
            f"need objective values for all {grid.product_size} combinations and {grid.m} players")
    v = v.reshape(grid.shape + (grid.m,))
    if not np.all(np.isfinite(v)):
        raise ValidationError("objective values must be finite")
    return v


def evaluate_grid(mean_fns, grid: StrategyGrid, chunk: int = 200_000):
    """Tensor of shape ``grid.shape + (m,)`` with ``mean_fns[i]`` at every cell."""
    out = np.empty((grid.product_size, grid.m))
    for start in range(0, grid.product_size, chunk):
        x = grid.designs(np.arange(start, min(start + chunk, grid.product_size)))
        for i, f in enumerate(mean_fns):
            out[start:start + len(x), i] = np.asarray(f(x), dtype=float).ravel()
    return out.reshape(grid.shape + (grid.m,))


def deviation_gaps(tensor):
    """Largest unilateral improvement available to any player at each cell.

    ``tensor`` has shape ``(k_1, ..., k_m, m)`` (or a leading batch axis when
    ``tensor.ndim == m + 2``); the result drops the trailing axis.
    """
    m = tensor.shape[-1]
    offset = tensor.ndim - 1 - m
    gap = np.zeros(tensor.shape[:-1])
    for i in range(m):
        fi = tensor[..., i]
        gap = np.maximum(gap, fi - fi.min(axis=offset + i, keepdims=True))
    return gap


def nash_mask(tensor):
    """Cells where no player has a strictly improving unilateral deviation."""
    m = tensor.shape[-1]
    offset = tensor.ndim - 1 - m
    mask = np.ones(tensor.shape[:-1], dtype=bool)
    for i in range(m):
        fi = tensor[..., i]
        mask &= fi <= fi.min(axis=offset + i, keepdims=True)
    return mask


def _result_at(grid, tensor, flat, kind, **diag):
    cell = np.unravel_index(flat, grid.shape)
    cell = tuple(int(c) for c in cell)
    return EquilibriumResult(grid.design(cell), tensor[cell], kind,
                             dict(cell=cell, flat_index=int(flat), **diag))


def nash_discrete(values, grid: StrategyGrid, cap: int = PRODUCT_CAP) -> list:
    """All pure-strategy Nash equilibria of the game tabulated on ``grid``.

    ``values`` holds ``f_i`` for every cell, shaped ``grid.shape + (m,)`` or
    flat ``(product_size, m)``. Results come in increasing flat-index order;
    the list is empty when no pure equilibrium exists.
    """
    tensor = _values_tensor(values, grid, cap)
    flats = np.flatnonzero(nash_mask(tensor).ravel())
    return [_result_at(grid, tensor, f, "nash", gap=0.0) for f in flats]


def verify_nash(candidate, values, grid: StrategyGrid):
    """``(is_equilibrium, worst_gap)`` for a design lying on ``grid``.

    ``worst_gap`` is the largest improvement any player obtains by a
    unilateral switch to another grid strategy (0 at an equilibrium).
    """
    tensor = _values_tensor(values, grid)
    cell = grid.cell_of(candidate)
    if cell is None:
        raise ValidationError("candidate is not on the strategy grid")
    gap = float(deviation_gaps(tensor)[cell])
    return gap <= 0.0, gap


def _grid_center(g):
    med = np.median(g, axis=0)
    return int(np.argmin(((g - med) ** 2).sum(axis=1)))


def nash_fixed_point(mean_fns: Sequence[Callable], grid: StrategyGrid, alpha: float = 0.5,
                     n_max: int = 100, tol: float = 1e-6, x0=None) -> EquilibriumResult:
    """Relaxed best-response iteration ``x <- alpha z + (1 - alpha) x``.

    Each player's best response ``z_i`` minimizes ``mean_fns[i]`` over its grid
    strategies with the other blocks held at the current iterate, so the
    iterate itself moves continuously between grid points. The start is the
    grid strategy closest to each player's coordinate-wise median. Stops when
    the Euclidean step is at most ``tol``; reaching ``n_max`` is reported in
    the diagnostics, not raised.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must lie in (0, 1)")
    if len(mean_fns) != grid.m:
        raise ValidationError("one mean function per player is required")
    blocks = [list(b) for b in grid.partition.blocks]
    if x0 is None:
        x = grid.design(tuple(_grid_center(g) for g in grid.per_player))
    else:
        x = np.asarray(x0, dtype=float).copy()
    residuals = []
    converged = False
    z = x.copy()
    for _ in range(int(n_max)):
        z = x.copy()
        for i, (f, g, b) in enumerate(zip(mean_fns, grid.per_player, blocks)):
            trial = np.repeat(x[None, :], len(g), axis=0)
            trial[:, b] = g
            z[b] = g[int(np.argmin(np.asarray(f(trial), dtype=float).ravel()))]
        x_new = alpha * z + (1.0 - alpha) * x
        residuals.append(float(np.linalg.norm(x_new - x)))
        x = x_new
        if residuals[-1] <= tol:
            converged = True
            break
    objectives = np.array([float(np.asarray(f(x[None, :])).ravel()[0]) for f in mean_fns])
    return EquilibriumResult(x, objectives, "nash", dict(
        iterations=len(residuals), residual=residuals[-1] if residuals else 0.0,
        residual_history=residuals, converged=converged, best_response=z, alpha=alpha))


def ks_select(candidates, anchors: AnchorPoints) -> EquilibriumResult:
    """Nondominated candidate maximizing the smallest benefit ratio.

    Ties go to the lowest index among nondominated maximizers. The kind is
    ``"ks"`` when the (d, u) line is met within ``LINE_TOLERANCE`` (spread of
    the ratios), otherwise ``"efficient-maxmin"``.
    """
    s = candidates if isinstance(candidates, ObjectiveSet) else ObjectiveSet(candidates)
    if s.m != anchors.utopia.size:
        raise ValidationError("candidate objective count does not match the anchors")
    v = s.values
    ratios = benefit_ratios(v, anchors)
    worst = ratios.min(axis=1)
    ties = np.flatnonzero(worst == worst.max())
    # any point dominating a maximizer is itself a maximizer, so filtering the
    # tied set is equivalent to filtering the whole candidate set first
    if ties.size > 1:
        ties = ties[nondominated_mask(v[ties])]
    idx = int(ties[0])
    r = ratios[idx]
    spread = float(r.max() - r.min())
    on_line = spread <= LINE_TOLERANCE
    design = s.designs[idx] if s.designs is not None else np.array([])
    return EquilibriumResult(design, v[idx], "ks" if on_line else "efficient-maxmin", dict(
        index=idx, min_ratio=float(r.min()), ratios=r, ratio_spread=spread, on_line=on_line,
        utopia=anchors.utopia, disagreement=anchors.disagreement, anchor_kind=anchors.kind))


def pick_equilibrium(equilibria, reference_values):
    """Equilibrium with the smallest sum of range-normalized objectives."""
    lo = reference_values.min(axis=0)
    span = np.where(np.ptp(reference_values, axis=0) > 0, np.ptp(reference_values, axis=0), 1.0)
    scores = [((e.objectives - lo) / span).sum() for e in equilibria]
    return equilibria[int(np.argmin(scores))]


def nks_solve(mean_fns, grid: StrategyGrid, candidates=None, alpha: float = 0.5, n_max: int = 100,
              tol: float = 1e-6, cap: int = PRODUCT_CAP, values=None) -> EquilibriumResult:
    """Kalai-Smorodinsky selection with a Nash equilibrium as disagreement point.

    The Nash point comes from exhaustive enumeration when the grid product is
    at most ``cap`` (several equilibria: smallest normalized objective sum),
    otherwise from :func:`nash_fixed_point`. Utopia is taken over
    ``candidates``, which default to every grid cell.
    """
    tensor = None
    if values is not None:
        tensor = _values_tensor(values, grid, cap)
    elif grid.product_size <= cap:
        tensor = evaluate_grid(mean_fns, grid)
    nash = None
    if tensor is not None:
        found = nash_discrete(tensor, grid, cap)
        if found:
            nash = pick_equilibrium(found, tensor.reshape(-1, grid.m))
            nash.diagnostics["n_equilibria"] = len(found)
    if nash is None:
        if mean_fns is None:
            raise ValidationError("no pure Nash equilibrium on the grid and no mean functions to iterate")
        nash = nash_fixed_point(mean_fns, grid, alpha, n_max, tol)
    if candidates is None:
        if tensor is None:
            raise ValidationError("candidates are required when the grid is not enumerated")
        candidates = ObjectiveSet(tensor.reshape(-1, grid.m), grid.designs())
    elif not isinstance(candidates, ObjectiveSet):
        candidates = ObjectiveSet(candidates)
    u = utopia(candidates)
    try:
        anchors = AnchorPoints(u, nash.objectives, kind="nash")
    except AnchorError as exc:
        raise AnchorError(
            f"Nash point {nash.objectives.tolist()} is not strictly worse than utopia {u.tolist()} "
            f"at objectives {list(exc.coordinates)}", exc.coordinates) from None
    ks = ks_select(candidates, anchors)
    ks.kind = "nks"
    ks.diagnostics["nash"] = nash
    return ks
