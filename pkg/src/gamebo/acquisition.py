"""Uncertainty of the targeted solution and the sequential-design criteria built on it.

The solution map (Nash, KS or Nash-KS) is applied to every posterior draw of
an ensemble; the spread of the resulting objective vectors, measured by the
determinant of their covariance, is the quantity the SUR criterion reduces.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .equilibria import (StrategyGrid, deviation_gaps, ks_select, nash_discrete, nash_mask,
                         pick_equilibrium)
from .errors import AnchorError, ValidationError
from .gp import PosteriorEnsemble, draw_joint, kriging_weights, locate
from .pareto import AnchorPoints, ObjectiveSet, nadir, nondominated_mask, pseudo_nadir

SOLUTION_KINDS = ("nash", "ks", "nks")
DEFAULT_DRAWS = 30
DEFAULT_KEEP = 1000
DEFAULT_EVAL = 200
DEFAULT_HYPOTHETICAL = 10


@dataclass(frozen=True)
class SolutionFunctional:
    """Which solution the draws are mapped to, and on what candidate structure.

    ``grid`` is required for ``nash`` and ``nks``: draws are then laid out over
    its cells in C order. ``anchor`` picks the KS disagreement point
    (``nadir``, ``pseudo-nadir`` or ``preference`` with ``preference``
    mapping objective index to ``c_i``); ``nks`` always uses the Nash point.
    """

    kind: str
    anchor: str = "nadir"
    preference: dict | None = None
    grid: StrategyGrid | None = None

    def __post_init__(self):
        if self.kind not in SOLUTION_KINDS:
            raise ValidationError(f"unknown solution kind {self.kind!r}")
        if self.kind == "nks":
            object.__setattr__(self, "anchor", "nash")
        elif self.kind == "ks" and self.anchor not in ("nadir", "pseudo-nadir", "preference"):
            raise ValidationError(f"anchor {self.anchor!r} is not valid for KS")
        if self.kind in ("nash", "nks") and self.grid is None:
            raise ValidationError(f"{self.kind} needs a territory partition and strategy grid")
        if self.anchor == "preference" and not self.preference:
            raise ValidationError("preference anchor needs c_i values")

    def with_grid(self, grid: StrategyGrid) -> "SolutionFunctional":
        return replace(self, grid=grid)


@dataclass
class UncertaintyRecord:
    gamma: float
    psi_samples: np.ndarray
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


# ---------------------------------------------------------------- solution map


def _ks_one(values, anchor, preference):
    """Scalar KS on one realization; degenerate anchor coordinates are ignored."""
    s = ObjectiveSet(values)
    try:
        anchors = AnchorPoints.from_set(s, anchor, preference)
    except AnchorError as exc:
        keep = np.setdiff1d(np.arange(s.m), exc.coordinates)
        if keep.size == 0:
            return int(np.flatnonzero(nondominated_mask(values))[0])
        u = values.min(axis=0)[keep]
        d = _disagreement(values, anchor, preference)[keep]
        worst = ((d - values[:, keep]) / (d - u)).min(axis=1)
        ties = np.flatnonzero(worst == worst.max())
        return int(ties[nondominated_mask(values[ties])][0])
    return ks_select(s, anchors).diagnostics["index"]


def _disagreement(values, anchor, preference):
    if anchor == "pseudo-nadir":
        return pseudo_nadir(values)
    d = nadir(values).copy()
    if anchor == "preference":
        for i, c in dict(preference).items():
            d[int(i)] = float(c)
    return d


def _ks_batch(draws, anchor, preference):
    """Efficient-maxmin index for each draw of ``draws`` (B, N, m)."""
    return _ks_batch_t(np.ascontiguousarray(np.swapaxes(draws, 1, 2)), anchor, preference)


def _ks_batch_t(dt, anchor, preference):
    """Same as :func:`_ks_batch` on the transposed layout (B, m, N).

    Reductions then run along the contiguous last axis.
    """
    B, m, N = dt.shape
    rows_b = np.arange(B)
    arg = dt.argmin(axis=2)  # (B, m)
    u = np.take_along_axis(dt, arg[:, :, None], axis=2)[:, :, 0]
    # a tie exists iff the first and the last minimizer differ
    tied_min = (arg != N - 1 - dt[:, :, ::-1].argmin(axis=2)).any(axis=1)
    use_table = anchor == "pseudo-nadir" or (anchor in ("nadir", "preference") and m == 2)
    if use_table:
        # for two objectives the nadir equals the pay-off-table maximum
        d = np.stack([dt[rows_b, :, arg[:, j]] for j in range(m)], axis=1).max(axis=1)  # (B, m)
        if anchor == "preference":
            for i, c in dict(preference).items():
                d[:, int(i)] = float(c)
    else:
        d = np.stack([_disagreement(v.T, anchor, preference) for v in dt])
    span = d - u
    degenerate = (span <= 0).any(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = 1.0 / span
        worst = (d[:, 0, None] - dt[:, 0, :]) * scale[:, 0, None]
        for j in range(1, m):
            np.minimum(worst, (d[:, j, None] - dt[:, j, :]) * scale[:, j, None], out=worst)
    idx = worst.argmax(axis=1)
    best = worst[rows_b, idx]
    ties = idx != N - 1 - worst[:, ::-1].argmax(axis=1)
    redo = np.flatnonzero(degenerate | ties | (tied_min if use_table else False) | ~np.isfinite(best))
    for b in redo:
        idx[b] = _ks_one(np.ascontiguousarray(dt[b].T), anchor, preference)
    return idx


def _nash_batch(tensor, pick="first"):
    """Nash cell (flat index) per draw; ``tensor`` is (B, k_1, ..., k_m, m)."""
    B = tensor.shape[0]
    m = tensor.shape[-1]
    mask = nash_mask(tensor).reshape(B, -1)
    flat_vals = tensor.reshape(B, -1, m)
    has = mask.any(axis=1)
    if pick == "first":
        idx = mask.argmax(axis=1)
    else:
        lo = flat_vals.min(axis=1, keepdims=True)
        span = np.ptp(flat_vals, axis=1, keepdims=True)
        span = np.where(span > 0, span, 1.0)
        score = ((flat_vals - lo) / span).sum(axis=2)
        score = np.where(mask, score, np.inf)
        idx = score.argmin(axis=1)
    if not has.all():
        # no pure equilibrium on this realization: least unilateral regret
        gaps = deviation_gaps(tensor).reshape(B, -1)
        idx = np.where(has, idx, gaps.argmin(axis=1))
    return idx


def _nks_batch(tensor):
    B = tensor.shape[0]
    m = tensor.shape[-1]
    flat_vals = tensor.reshape(B, -1, m)
    nash = _nash_batch(tensor, pick="sum")
    d = flat_vals[np.arange(B), nash]
    u = flat_vals.min(axis=1)
    span = d - u
    ok = (span > 0).all(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        worst = ((d[:, None, :] - flat_vals) / span[:, None, :]).min(axis=2)
    idx = worst.argmax(axis=1)
    best = worst[np.arange(B), idx]
    ties = (worst == best[:, None]).sum(axis=1) > 1
    for b in np.flatnonzero(ties & ok):
        anchors = AnchorPoints(u[b], d[b], "nash")
        idx[b] = ks_select(ObjectiveSet(flat_vals[b]), anchors).diagnostics["index"]
    # Nash point already at utopia in some objective: keep the Nash cell
    return np.where(ok, idx, nash)


def psi_batch(draws, functional: SolutionFunctional):
    """Solution index and objective vector for each realization in ``draws`` (B, N, m)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[None]
    B, N, m = draws.shape
    if functional.kind == "ks":
        idx = _ks_batch(draws, functional.anchor, functional.preference)
    else:
        grid = functional.grid
        if N != grid.product_size or m != grid.m:
            raise ValidationError("draws do not cover the functional's strategy grid")
        tensor = draws.reshape((B,) + grid.shape + (m,))
        idx = _nash_batch(tensor) if functional.kind == "nash" else _nks_batch(tensor)
    return draws[np.arange(B), idx], idx


def psi_on_draw(draw, functional: SolutionFunctional):
    """``(objective_vector, candidate_index)`` of the solution realized by one draw.

    Nash: the first pure equilibrium in flat order, or the cell with the
    smallest worst unilateral gain when none exists. KS: efficient maxmin with
    anchors estimated on the draw. NKS: Nash (smallest normalized sum among
    several) as disagreement point, then KS; if that Nash point already
    attains the utopia value of some objective, the Nash cell is returned.
    """
    vals, idx = psi_batch(np.asarray(draw, dtype=float)[None], functional)
    return vals[0], int(idx[0])


def psi_reference(draw, functional: SolutionFunctional):
    """Solution index computed with the scalar module operations only."""
    draw = np.asarray(draw, dtype=float)
    if functional.kind == "ks":
        anchors = AnchorPoints.from_set(draw, functional.anchor, functional.preference)
        return ks_select(ObjectiveSet(draw), anchors).diagnostics["index"]
    grid = functional.grid
    found = nash_discrete(draw, grid)
    if functional.kind == "nash":
        if found:
            return found[0].diagnostics["flat_index"]
        return int(np.argmin(deviation_gaps(draw.reshape(grid.shape + (grid.m,))).ravel()))
    if found:
        nash = pick_equilibrium(found, draw)
        flat, d = nash.diagnostics["flat_index"], nash.objectives
    else:
        flat = int(np.argmin(deviation_gaps(draw.reshape(grid.shape + (grid.m,))).ravel()))
        d = draw[flat]
    try:
        anchors = AnchorPoints(draw.min(axis=0), d, "nash")
    except AnchorError:
        return flat
    return ks_select(ObjectiveSet(draw), anchors).diagnostics["index"]


# ------------------------------------------------------------------ uncertainty


def covariance_determinant(samples):
    """Determinant of the sample covariance of ``samples`` (..., M, m).

    Uses a symmetric eigendecomposition; negative round-off eigenvalues are
    clamped to zero.
    """
    s = np.asarray(samples, dtype=float)
    centered = s - s.mean(axis=-2, keepdims=True)
    cov = np.einsum("...ki,...kj->...ij", centered, centered) / (s.shape[-2] - 1)
    eig = np.clip(np.linalg.eigvalsh(cov), 0.0, None)
    return eig.prod(axis=-1)


def gamma(ensemble: PosteriorEnsemble, functional: SolutionFunctional) -> UncertaintyRecord:
    """Determinant of the covariance of the solution over the ensemble draws."""
    if ensemble.n_draws < ensemble.m + 1:
        raise ValidationError(f"need at least m + 1 = {ensemble.m + 1} draws, got {ensemble.n_draws}")
    vals, idx = psi_batch(ensemble.draws, functional)
    return UncertaintyRecord(float(covariance_determinant(vals)), vals, idx)


def _hypothetical_values(ensemble, models, index, Q, mode):
    """Hypothetical observations at candidate ``index`` and their weights."""
    if mode == "sample":
        Q = ensemble.n_draws if Q is None else min(int(Q), ensemble.n_draws)
        if Q < 1:
            raise ValidationError("Q must be positive")
        return ensemble.draws[:Q, index, :], np.full(Q, 1.0 / Q)
    if mode == "quadrature":
        Q = 3 if Q is None else int(Q)
        if Q ** ensemble.m > 4096:
            raise ValidationError("tensor Gauss-Hermite grid too large; lower Q")
        nodes, weights = np.polynomial.hermite.hermgauss(Q)
        x = ensemble.candidates[index][None, :]
        mu = np.array([mdl.predict(x)[0][0] for mdl in models])
        sd = np.sqrt([mdl.predict(x)[1][0] for mdl in models])
        grids = np.meshgrid(*([np.arange(Q)] * ensemble.m), indexing="ij")
        combo = np.stack([g.ravel() for g in grids], axis=1)
        values = mu + np.sqrt(2.0) * sd * nodes[combo]
        w = np.prod(weights[combo], axis=1) / np.pi ** (ensemble.m / 2)
        return values, w
    raise ValidationError(f"unknown expectation mode {mode!r}")


def sur_values(ensemble: PosteriorEnsemble, models, functional: SolutionFunctional, indices,
               Q: int | None = DEFAULT_HYPOTHETICAL, mode: str = "sample"):
    """Expected posterior uncertainty ``J`` at several candidates of the ensemble.

    For every hypothetical outcome ``y_q`` at a candidate, all draws are
    conditioned on ``y_q`` by the kriging update and the determinant of the
    solution covariance is recomputed; ``J`` is the weighted mean over ``q``.
    In ``"sample"`` mode the outcomes are the first ``Q`` draws' own values at
    the candidate (common random numbers, equal weights; ``Q`` is capped at
    the number of draws); ``"quadrature"``
    uses a tensor Gauss-Hermite rule with ``Q`` nodes per objective.

    Returns ``(J, standard_error)`` arrays; the standard error is the Monte
    Carlo error over ``q`` (zero in quadrature mode).
    """
    models = list(models)
    indices = np.atleast_1d(np.asarray(indices, dtype=int))
    if ensemble.n_draws < ensemble.m + 1:
        raise ValidationError(f"need at least m + 1 = {ensemble.m + 1} draws")
    weights = kriging_weights(ensemble, models, indices)  # (k, N, m)
    J = np.empty(len(indices))
    se = np.zeros(len(indices))
    Z = ensemble.draws
    Zt = np.ascontiguousarray(np.swapaxes(Z, 1, 2)) if functional.kind == "ks" else None
    buf = None
    for k, e in enumerate(indices):
        w = weights[k]
        if not np.any(w):
            g = covariance_determinant(psi_batch(Z, functional)[0])
            J[k] = g
            continue
        values, qw = _hypothetical_values(ensemble, models, e, Q, mode)
        shift = values[:, None, :] - Z[None, :, e, :]  # (Q, M, m)
        if functional.kind == "ks":
            cond = buf[:len(values)] if buf is not None and len(buf) >= len(values) else None
            cond = np.multiply(shift[:, :, :, None], w.T[None, None], out=cond)  # (Q, M, m, N)
            cond += Zt[None]
            buf = cond
            cond = cond.reshape((-1,) + Zt.shape[1:])
            idx = _ks_batch_t(cond, functional.anchor, functional.preference)
            psi = cond[np.arange(len(cond)), :, idx]
        else:
            cond = Z[None] + shift[:, :, None, :] * w[None, None]  # (Q, M, N, m)
            psi, _ = psi_batch(cond.reshape((-1,) + Z.shape[1:]), functional)
        g = covariance_determinant(psi.reshape(len(values), Z.shape[0], -1))
        J[k] = float(qw @ g)
        if mode == "sample" and len(g) > 1:
            se[k] = float(g.std(ddof=1) / np.sqrt(len(g)))
    return J, se


def sur_criterion(x, ensemble: PosteriorEnsemble, models, functional: SolutionFunctional,
                  Q: int | None = DEFAULT_HYPOTHETICAL, mode: str = "sample") -> float:
    """Expected determinant of the solution covariance after observing at ``x``.

    ``x`` must be one of the ensemble's candidates.
    """
    e = locate(ensemble.candidates, x)
    if e is None:
        raise ValidationError("x must be one of the ensemble candidates")
    return float(sur_values(ensemble, models, functional, [e], Q, mode)[0][0])


# ------------------------------------------------------------------- filtering


class CandidateSelection(NamedTuple):
    simulation: np.ndarray
    evaluation: np.ndarray
    subgrid: StrategyGrid | None = None


def solution_frequency(ensemble, functional: SolutionFunctional):
    """Fraction of draws in which each candidate is the realized solution."""
    counts = np.zeros(ensemble.n_candidates)
    if isinstance(ensemble, PosteriorEnsemble):
        _, idx = psi_batch(ensemble.draws, functional)
        np.add.at(counts, idx, 1.0)
    else:
        for draw in ensemble.iter_draws():
            _, idx = psi_batch(draw[None], functional)
            counts[idx[0]] += 1.0
    return counts / ensemble.n_draws


def _rank(freq, var):
    # primary: frequency (desc), secondary: variance (desc), then index
    return np.lexsort((np.arange(len(freq)), -var, -freq))


def _balanced_sizes(limits, n_keep):
    sizes = [1] * len(limits)
    while True:
        prod = int(np.prod(sizes))
        growable = [i for i, (s, lim) in enumerate(zip(sizes, limits))
                    if s < lim and prod // s * (s + 1) <= n_keep]
        if not growable:
            return sizes
        i = min(growable, key=lambda j: (sizes[j], j))
        sizes[i] += 1


def filter_candidates(ensemble, functional: SolutionFunctional, n_keep: int = DEFAULT_KEEP,
                      n_eval: int = DEFAULT_EVAL) -> CandidateSelection:
    """Pick the simulation set and the criterion-evaluation set from a screening ensemble.

    Candidates are ranked by how often they realize the solution across draws,
    then by their summed normalized predictive variance. For KS the top
    ``n_keep`` form the simulation set. For Nash-type solutions the
    simulation set must stay a product grid: each player's strategies are
    ranked by the same keys (frequency of appearing in the realized solution,
    mean variance over the strategy's slice) and per-player counts grow evenly
    while the product stays within ``n_keep``. The evaluation set is the top
    ``n_eval`` simulation candidates. Simulation indices are sorted; the
    evaluation indices come in rank order.
    """
    pool = ensemble.n_candidates
    if not 1 <= n_eval <= n_keep:
        raise ValidationError("need 1 <= n_eval <= n_keep")
    if n_keep > pool:
        raise ValidationError(f"n_keep={n_keep} exceeds the {pool} available candidates")
    freq = solution_frequency(ensemble, functional)
    var = ensemble.normalized_variance_sum()
    if functional.kind == "ks":
        order = _rank(freq, var)
        sim = np.sort(order[:n_keep])
        return CandidateSelection(sim, order[:n_eval], None)
    grid = functional.grid
    if pool != grid.product_size:
        raise ValidationError("screening ensemble must cover the whole strategy grid")
    f_t = freq.reshape(grid.shape)
    v_t = var.reshape(grid.shape)
    selections = []
    for i in range(grid.m):
        axes = tuple(a for a in range(grid.m) if a != i)
        selections.append(_rank(f_t.sum(axis=axes), v_t.mean(axis=axes)))
    sizes = _balanced_sizes(grid.shape, n_keep)
    chosen = [np.sort(sel[:k]) for sel, k in zip(selections, sizes)]
    mesh = np.meshgrid(*chosen, indexing="ij")
    sim = np.ravel_multi_index(tuple(g.ravel() for g in mesh), grid.shape)  # C order of the subgrid
    sub = grid.subgrid(chosen)
    order = _rank(freq[sim], var[sim])
    n_eval = min(n_eval, len(sim))
    return CandidateSelection(sim, sim[order[:n_eval]], sub)


# -------------------------------------------------------------------- Thompson


def thompson_step(models, functional: SolutionFunctional, candidates: StrategyGrid | None = None, seed=None):
    """Design realizing the Nash equilibrium of a single joint posterior draw."""
    if functional.kind != "nash":
        raise ValidationError("Thompson sampling only targets Nash equilibria")
    grid = functional.grid if candidates is None else candidates
    ens = draw_joint(models, grid.designs(), 1, seed)
    _, idx = psi_batch(ens.draws, functional.with_grid(grid))
    return grid.designs([idx[0]])[0]
