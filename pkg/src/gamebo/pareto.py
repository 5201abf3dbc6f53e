"""Pareto dominance, reference points and objective transforms (minimization)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import AnchorError, ValidationError

ANCHOR_KINDS = ("nadir", "pseudo-nadir", "nash", "preference")


@dataclass(frozen=True)
class ObjectiveSet:
    """Evaluated points: ``values[k]`` is the objective vector of ``designs[k]``.

    ``designs`` may be ``None`` when only objective vectors matter.
    """

    values: np.ndarray
    designs: np.ndarray | None = None

    def __post_init__(self):
        v = np.atleast_2d(np.asarray(self.values, dtype=float))
        if v.size == 0 or len(v) == 0:
            raise ValidationError("objective set is empty")
        if not np.all(np.isfinite(v)):
            raise ValidationError("objective vectors must be finite")
        object.__setattr__(self, "values", v)
        if self.designs is not None:
            d = np.atleast_2d(np.asarray(self.designs, dtype=float))
            if len(d) != len(v):
                raise ValidationError("designs and values have different lengths")
            object.__setattr__(self, "designs", d)

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def __len__(self):
        return len(self.values)

    def subset(self, index) -> "ObjectiveSet":
        return ObjectiveSet(self.values[index], None if self.designs is None else self.designs[index])


def _as_set(points) -> ObjectiveSet:
    return points if isinstance(points, ObjectiveSet) else ObjectiveSet(points)


@dataclass(frozen=True)
class AnchorPoints:
    """Utopia ``u`` and disagreement ``d`` with ``u_i < d_i`` in every coordinate."""

    utopia: np.ndarray
    disagreement: np.ndarray
    kind: str = "nadir"

    def __post_init__(self):
        u = np.asarray(self.utopia, dtype=float).ravel()
        d = np.asarray(self.disagreement, dtype=float).ravel()
        if u.shape != d.shape:
            raise ValidationError("utopia and disagreement have different lengths")
        if self.kind not in ANCHOR_KINDS:
            raise ValidationError(f"unknown anchor kind {self.kind!r}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(d))):
            raise ValidationError("anchor points must be finite")
        bad = np.flatnonzero(~(u < d))
        if bad.size:
            raise AnchorError(
                f"utopia must be strictly below the disagreement point; violated at objectives {bad.tolist()}",
                coordinates=bad.tolist(),
            )
        object.__setattr__(self, "utopia", u)
        object.__setattr__(self, "disagreement", d)

    @classmethod
    def from_set(cls, points, kind="nadir", preference=None):
        """Anchors estimated from evaluated points.

        ``kind`` selects the disagreement point: ``"nadir"``, ``"pseudo-nadir"``
        or ``"preference"``. For preferences, ``preference`` maps objective
        index to its acceptance limit ``c_i``; those coordinates replace the
        nadir's, the others keep the nadir value.
        """
        s = _as_set(points)
        u = utopia(s)
        if kind == "nadir":
            d = nadir(s)
        elif kind == "pseudo-nadir":
            d = pseudo_nadir(s)
        elif kind == "preference":
            if not preference:
                raise ValidationError("preference anchors need at least one c_i value")
            d = nadir(s).copy()
            for i, c in dict(preference).items():
                if not 0 <= int(i) < s.m:
                    raise ValidationError(f"preference index {i} out of range")
                d[int(i)] = float(c)
        else:
            raise ValidationError(f"anchor kind {kind!r} cannot be estimated from a point set")
        return cls(u, d, kind)


def dominates(a, b) -> bool:
    """True when ``a`` is no worse than ``b`` everywhere and strictly better somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValidationError("objective vectors have different lengths")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValidationError("objective vectors must be finite")
    return bool(np.all(a <= b) and np.any(a < b))


def nondominated_mask(values) -> np.ndarray:
    """Boolean mask of the nondominated rows of ``values``.

    Exact duplicates never dominate each other, so all copies survive.
    """
    v = np.atleast_2d(np.asarray(values, dtype=float))
    n, m = v.shape
    if n == 0:
        return np.zeros(0, dtype=bool)
    if m == 1:
        return v[:, 0] == v[:, 0].min()
    order = np.lexsort(v.T[::-1])
    keep = np.zeros(n, dtype=bool)
    if m == 2:
        # Sorted by (f1, f2): a point survives iff its f2 beats every point
        # with strictly smaller f1, or ties the best one in both coordinates.
        f1, f2 = v[order, 0], v[order, 1]
        best_f2 = np.inf
        i = 0
        while i < n:
            j = i
            while j < n and f1[j] == f1[i]:
                j += 1
            # within a block of equal f1 only the minimal f2 values survive
            block_min = f2[i]
            if block_min < best_f2:
                keep[order[i:j]] = f2[i:j] == block_min
                best_f2 = block_min
            i = j
        return keep
    alive = np.ones(n, dtype=bool)
    sv = v[order]
    for pos in range(n):
        if not alive[pos]:
            continue
        # the lexicographically first survivor is never dominated by later points
        keep[order[pos]] = True
        rest = np.arange(pos + 1, n)
        rest = rest[alive[rest]]
        if rest.size == 0:
            continue
        cand = sv[rest]
        dom = np.all(sv[pos] <= cand, axis=1) & np.any(sv[pos] < cand, axis=1)
        alive[rest[dom]] = False
    return keep


def pareto_filter(points) -> ObjectiveSet:
    """Nondominated members of ``points`` in their original order."""
    s = _as_set(points)
    return s.subset(np.flatnonzero(nondominated_mask(s.values)))


def utopia(points) -> np.ndarray:
    """Componentwise minimum (empirical ideal point)."""
    return _as_set(points).values.min(axis=0)


def nadir(points) -> np.ndarray:
    """Componentwise maximum over the nondominated members."""
    s = _as_set(points)
    return s.values[nondominated_mask(s.values)].max(axis=0)


def single_objective_minimizers(values) -> np.ndarray:
    """Index of one minimizer per objective (rows of the pay-off table).

    Among tied minimizers of objective ``j``, dominated ones are skipped and the
    lowest index of the remainder is taken, so the pay-off table only holds
    Pareto-optimal rows.
    """
    v = np.atleast_2d(values)
    out = np.empty(v.shape[1], dtype=int)
    for j in range(v.shape[1]):
        ties = np.flatnonzero(v[:, j] == v[:, j].min())
        if ties.size > 1:
            ties = ties[nondominated_mask(v[ties])]
        out[j] = ties[0]
    return out


def pseudo_nadir(points) -> np.ndarray:
    """Worst value of each objective over the single-objective minimizers."""
    s = _as_set(points)
    return s.values[single_objective_minimizers(s.values)].max(axis=0)


def benefit_ratios(y, anchors: AnchorPoints) -> np.ndarray:
    """``(d_i - y_i) / (d_i - u_i)``: 0 at the disagreement point, 1 at utopia.

    Works on a single vector or row-wise on a matrix.
    """
    y = np.asarray(y, dtype=float)
    d, u = anchors.disagreement, anchors.utopia
    if y.shape[-1] != d.size:
        raise ValidationError("objective vector length does not match the anchors")
    return (d - y) / (d - u)


def rank_transform(points) -> ObjectiveSet:
    """Replace each objective by its average rank scaled to [0, 1].

    A constant column maps to 0.5.
    """
    s = _as_set(points)
    n = len(s)
    out = np.empty_like(s.values)
    for j in range(s.m):
        ranks = rankdata(s.values[:, j], method="average") - 1.0
        out[:, j] = ranks / (n - 1) if n > 1 else 0.5
        if np.ptp(s.values[:, j]) == 0:
            out[:, j] = 0.5
    return ObjectiveSet(out, s.designs)


def dominance_tally(values):
    """``(n_dominated, n_nondominated)`` for a set of objective vectors."""
    mask = nondominated_mask(values)
    return int((~mask).sum()), int(mask.sum())
