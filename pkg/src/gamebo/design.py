"""Space-filling designs and the candidate sets the games are played on."""
from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist

from .equilibria import PRODUCT_CAP, StrategyGrid, TerritoryPartition
from .errors import ConfigError, ValidationError


def lhs_design(n: int, dim: int, seed=None, restarts: int = 10) -> np.ndarray:
    """Latin hypercube of ``n`` points in the unit box.

    Every column has exactly one point in each stratum ``[j/n, (j+1)/n)``.
    Out of ``restarts`` random designs the one with the largest minimum
    pairwise distance is kept.
    """
    if n < 1 or dim < 1:
        raise ValidationError("lhs_design needs n >= 1 and dim >= 1")
    rng = np.random.default_rng(seed)
    best, best_score = None, -np.inf
    for _ in range(max(1, restarts)):
        perms = np.argsort(rng.random((dim, n)), axis=1).T
        x = (perms + rng.random((n, dim))) / n
        score = pdist(x).min() if n > 1 else 0.0
        if score > best_score:
            best, best_score = x, score
            if n == 1:
                break
    return best


def make_grid(partition: TerritoryPartition, sizes, seed=None, cap: int = PRODUCT_CAP) -> StrategyGrid:
    """Per-player Latin hypercube strategy lists over each block of the unit box."""
    sizes = [int(s) for s in sizes]
    if len(sizes) != partition.m:
        raise ConfigError(f"need one grid size per player ({partition.m}), got {len(sizes)}")
    if any(s < 1 for s in sizes):
        raise ConfigError("grid sizes must be positive")
    product = int(np.prod(sizes, dtype=np.int64))
    if product > cap:
        raise ConfigError(
            f"strategy product {product} exceeds the cap {cap}; use smaller grids "
            "(SUR filters the product down to n_keep simulation points anyway)")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = root.spawn(partition.m)
    per_player = tuple(lhs_design(s, len(b), seed=ss)
                       for s, b, ss in zip(sizes, partition.blocks, streams))
    return StrategyGrid(partition, per_player)


def build_candidates(config, dim: int | None = None, partition: TerritoryPartition | None = None):
    """Candidate structure for a run: a :class:`StrategyGrid` for Nash-type
    solutions, a global Latin hypercube matrix for KS."""
    seed = np.random.SeedSequence([config.seed, 1])
    if config.kind in ("nash", "nks"):
        part = partition if partition is not None else config.territory()
        if part is None:
            raise ConfigError(f"{config.kind} runs need a territory partition")
        if config.grid_sizes is None:
            raise ConfigError(f"{config.kind} runs need per-player grid_sizes")
        return make_grid(part, config.grid_sizes, seed=seed, cap=config.product_cap)
    if dim is None:
        raise ConfigError("the input dimension is required for a global candidate set")
    return lhs_design(config.n_candidates, dim, seed=seed, restarts=1)
