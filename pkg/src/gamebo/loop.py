"""Sequential design loop: initial design, refits, acquisition, evaluation, logging."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import gp
from .acquisition import (DEFAULT_DRAWS, DEFAULT_EVAL, DEFAULT_HYPOTHETICAL, DEFAULT_KEEP, SOLUTION_KINDS,
                          SolutionFunctional, filter_candidates, gamma, sur_values, thompson_step)
from .blackbox import ExternalBlackBox
from .design import build_candidates, lhs_design
from .equilibria import (PRODUCT_CAP, EquilibriumResult, StrategyGrid, TerritoryPartition, evaluate_grid,
                         ks_select, nash_discrete, nash_fixed_point, nks_solve, pick_equilibrium)
from .errors import AnchorError, BlackBoxError, ConfigError, GameBOError
from .pareto import AnchorPoints, ObjectiveSet, dominance_tally
from .problems import ProblemSpec, get_problem

ACQUISITIONS = ("sur", "thompson")


@dataclass
class RunConfig:
    """Everything that determines a run. Unit-box coordinates are used internally."""

    problem: str = "biobjective"
    problem_params: dict = field(default_factory=dict)
    command: object = None  # external black box; the problem then only supplies box and sizes
    timeout: float = 60.0
    kind: str = "ks"
    anchor: str = "nadir"
    preference: dict | None = None
    partition: list | None = None
    grid_sizes: list | None = None
    n_candidates: int = 2000
    n_init: int = 20
    n_iter: int = 30
    acquisition: str = "sur"
    n_draws: int = DEFAULT_DRAWS
    n_keep: int = DEFAULT_KEEP
    n_eval: int = DEFAULT_EVAL
    n_hypothetical: int = DEFAULT_HYPOTHETICAL
    expectation: str = "sample"
    seed: int = 0
    alpha: float = 0.5
    tol: float = 1e-6
    n_max: int = 100
    kernel: str = "matern-5/2"
    estimate_nugget: bool = False
    n_starts: int = 5
    refit_stride: int = 1
    product_cap: int = PRODUCT_CAP
    output_dir: str | None = None

    @classmethod
    def from_mapping(cls, data) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        cfg = cls(**dict(data))
        cfg.check()
        return cfg

    def to_mapping(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "RunConfig":
        cfg = dataclasses.replace(self, **changes)
        cfg.check()
        return cfg

    def check(self):
        """Checks that need no problem information."""
        if self.kind not in SOLUTION_KINDS:
            raise ConfigError(f"kind must be one of {SOLUTION_KINDS}, got {self.kind!r}")
        if self.acquisition not in ACQUISITIONS:
            raise ConfigError(f"acquisition must be one of {ACQUISITIONS}")
        if self.acquisition == "thompson" and self.kind != "nash":
            raise ConfigError("Thompson sampling is only available for nash runs")
        if self.expectation not in ("sample", "quadrature"):
            raise ConfigError("expectation must be 'sample' or 'quadrature'")
        if self.kind == "ks" and self.anchor not in ("nadir", "pseudo-nadir", "preference"):
            raise ConfigError(f"anchor {self.anchor!r} is not valid for ks")
        if self.anchor == "preference" and not self.preference:
            raise ConfigError("preference anchor needs a preference mapping")
        for name in ("n_init", "n_draws", "n_keep", "n_eval", "n_hypothetical", "n_max", "n_starts",
                     "refit_stride", "n_candidates", "product_cap"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_iter < 0:
            raise ConfigError("n_iter must be non-negative")
        if self.n_eval > self.n_keep:
            raise ConfigError("n_eval cannot exceed n_keep")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.grid_sizes is not None and any(int(s) < 2 for s in self.grid_sizes):
            raise ConfigError("grid sizes must be at least 2 per player")

    def territory(self, default: TerritoryPartition | None = None) -> TerritoryPartition | None:
        if self.partition is None:
            return default
        try:
            return TerritoryPartition(tuple(tuple(int(i) for i in b) for b in self.partition))
        except GameBOError as exc:
            raise ConfigError(f"invalid partition: {exc}") from exc

    def validate_for(self, problem: ProblemSpec):
        if self.n_init < problem.dim + 2:
            raise ConfigError(f"n_init must be at least dim + 2 = {problem.dim + 2}")
        if self.n_draws < problem.m + 1:
            raise ConfigError(f"n_draws must be at least m + 1 = {problem.m + 1}")
        if self.kind in ("nash", "nks"):
            part = self.territory(problem.partition)
            if part is None:
                raise ConfigError(f"{self.kind} runs need a territory partition")
            if part.dim != problem.dim or part.m != problem.m:
                raise ConfigError("partition must cover every input and give one block per objective")
            if self.grid_sizes is None or len(self.grid_sizes) != part.m:
                raise ConfigError("grid_sizes needs one entry per player")


def load_config(path) -> RunConfig:
    """Read a YAML mapping of :class:`RunConfig` fields."""
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    return RunConfig.from_mapping(data)


# ---------------------------------------------------------------------- log


@dataclass
class EvaluationRecord:
    iteration: int  # 0 for the initial design
    design: np.ndarray  # box units
    objectives: np.ndarray
    gamma: float = math.nan
    acquisition: float = math.nan
    wall_time: float = 0.0


@dataclass
class RunLog:
    dim: int
    m: int
    records: list = field(default_factory=list)
    result: EquilibriumResult | None = None
    tally: tuple = (0, 0)
    utopia_history: list = field(default_factory=list)

    def append(self, record: EvaluationRecord):
        self.records.append(record)
        Y = self.objectives()
        self.tally = dominance_tally(Y)
        self.utopia_history.append(Y.min(axis=0))

    def __len__(self):
        return len(self.records)

    def designs(self) -> np.ndarray:
        return np.array([r.design for r in self.records]).reshape(-1, self.dim)

    def objectives(self) -> np.ndarray:
        return np.array([r.objectives for r in self.records]).reshape(-1, self.m)

    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records], dtype=int)

    def header(self):
        return (["iteration"] + [f"x_{i + 1}" for i in range(self.dim)]
                + [f"f_{j + 1}" for j in range(self.m)] + ["gamma", "acquisition", "wall_time"])

    def rows(self, with_time: bool = True):
        for r in self.records:
            row = [str(r.iteration)] + [_num(v) for v in r.design] + [_num(v) for v in r.objectives]
            row += [_num(r.gamma), _num(r.acquisition)]
            row.append(_num(r.wall_time) if with_time else "")
            yield row

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            w.writerows(self.rows())

    def summary(self) -> dict:
        out = {"n_evaluations": len(self), "dim": self.dim, "m": self.m,
               "tally": {"dominated": self.tally[0], "nondominated": self.tally[1]}}
        if self.result is not None:
            out["result"] = result_to_dict(self.result)
        return out

    def write(self, output_dir, config: RunConfig | None = None):
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.write_csv(out / "log.csv")
        summary = self.summary()
        if config is not None:
            summary["config"] = config.to_mapping()
        (out / "result.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def _num(v) -> str:
    return format(float(v), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, EquilibriumResult):
        return result_to_dict(obj)
    return obj


def result_to_dict(result: EquilibriumResult) -> dict:
    keep = ("evaluated", "observed", "index", "cell", "flat_index", "min_ratio", "ratio_spread", "on_line",
            "utopia", "disagreement", "anchor_kind", "iterations", "residual", "converged",
            "n_equilibria", "degenerate_anchor", "unit_design")
    diag = {k: v for k, v in result.diagnostics.items() if k in keep}
    if "nash" in result.diagnostics:
        n = result.diagnostics["nash"]
        diag["nash"] = {"design": n.design, "objectives": n.objectives}
    return _jsonable({"kind": result.kind, "design": result.design, "objectives": result.objectives,
                      "diagnostics": diag})


def read_log(path):
    """``(iterations, designs, objectives)`` from a ``log.csv`` file.

    Only the ``x_*`` and ``f_*`` columns are required; a missing
    ``iteration`` column reads as all zeros (initial design).
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ConfigError(f"{path} is empty")
    head = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(head) if h.startswith("x_")]
    fcols = [i for i, h in enumerate(head) if h.startswith("f_")]
    if not fcols:
        raise ConfigError(f"{path} has no f_* objective columns")
    try:
        body = np.array([[float(r[i]) for i in xcols + fcols] for r in rows[1:]], dtype=float)
        body = body.reshape(-1, len(xcols) + len(fcols))
        iterations = (np.array([int(r[head.index("iteration")]) for r in rows[1:]], dtype=int)
                      if "iteration" in head else np.zeros(len(body), dtype=int))
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: unreadable row: {exc}") from exc
    return iterations, body[:, :len(xcols)], body[:, len(xcols):]


# ------------------------------------------------------------------ helpers


def fit_models(X, Y, config: RunConfig, previous=None, refit: bool = True):
    """One GP per objective; seeds depend only on ``(seed, n, j)``."""
    models = []
    n = len(X)
    for j in range(Y.shape[1]):
        if refit or previous is None:
            ss = np.random.SeedSequence([int(config.seed), n, j])
            models.append(gp.fit(X, Y[:, j], config.kernel, seed=ss, n_starts=config.n_starts,
                                 estimate_nugget=config.estimate_nugget))
        else:
            models.append(gp.GpSurrogate(X, Y[:, j], previous[j].kernel))
    return models


def _mean_fns(models):
    return [lambda q, mdl=mdl: mdl.predict(q)[0] for mdl in models]


def _functional(config: RunConfig, grid: StrategyGrid | None) -> SolutionFunctional:
    return SolutionFunctional(config.kind, config.anchor if config.kind == "ks" else "nadir",
                              config.preference, grid)


def final_solution(models, config: RunConfig, candidates, evaluated=None) -> EquilibriumResult:
    """The configured solution computed on posterior means over all candidates.

    ``candidates`` is the run's strategy grid (nash, nks) or candidate matrix
    (ks), in unit-box coordinates. ``evaluated`` is an optional
    ``(designs, objectives)`` pair in the same coordinates; the diagnostics
    then say whether the returned design was evaluated and what was observed.
    """
    models = list(models)
    fns = _mean_fns(models)
    if config.kind == "ks":
        cands = np.atleast_2d(np.asarray(candidates, dtype=float))
        means = np.column_stack([f(cands) for f in fns])
        s = ObjectiveSet(means, cands)
        result = ks_select(s, AnchorPoints.from_set(s, config.anchor, config.preference))
    else:
        grid = candidates
        if not isinstance(grid, StrategyGrid):
            raise ConfigError(f"{config.kind} needs a strategy grid")
        if config.kind == "nash":
            result = None
            if grid.product_size <= config.product_cap:
                tensor = evaluate_grid(fns, grid)
                found = nash_discrete(tensor, grid, config.product_cap)
                if found:
                    result = pick_equilibrium(found, tensor.reshape(-1, grid.m))
                    result.diagnostics["n_equilibria"] = len(found)
            if result is None:
                result = nash_fixed_point(fns, grid, config.alpha, config.n_max, config.tol)
        else:
            try:
                result = nks_solve(fns, grid, alpha=config.alpha, n_max=config.n_max, tol=config.tol,
                                   cap=config.product_cap)
            except AnchorError as exc:
                # the Nash point already attains utopia somewhere: it is the answer
                if grid.product_size <= config.product_cap:
                    tensor = evaluate_grid(fns, grid)
                    found = nash_discrete(tensor, grid, config.product_cap)
                    nash = pick_equilibrium(found, tensor.reshape(-1, grid.m)) if found else None
                else:
                    nash = None
                if nash is None:
                    nash = nash_fixed_point(fns, grid, config.alpha, config.n_max, config.tol)
                result = EquilibriumResult(nash.design, nash.objectives, "nks",
                                           dict(nash.diagnostics, nash=nash, degenerate_anchor=list(exc.coordinates)))
    if evaluated is not None:
        X, Y = evaluated
        hit = gp.locate(np.asarray(X, dtype=float), result.design, atol=1e-12)
        result.diagnostics["evaluated"] = hit is not None
        result.diagnostics["observed"] = None if hit is None else np.asarray(Y)[hit]
    return result


def _evaluate(evaluator, x, m):
    """Call the black box, retrying once; a second failure propagates."""
    last = None
    for _attempt in range(2):
        try:
            y = np.asarray(evaluator(x), dtype=float).ravel()
        except BlackBoxError as exc:
            last = exc
            continue
        if y.size != m or not np.all(np.isfinite(y)):
            last = BlackBoxError(f"black box returned {y.tolist()!r}, expected {m} finite values",
                                 raw=repr(y.tolist()))
            continue
        return y
    raise last


# --------------------------------------------------------------------- loop


def run(config: RunConfig, problem: ProblemSpec | None = None, evaluator=None):
    """Execute a full run; returns ``(EquilibriumResult, RunLog)``.

    ``problem`` supplies the box, sizes and default partition (built from the
    config when omitted). ``evaluator`` maps a box-unit design to its
    objective vector; it defaults to an external child process when
    ``config.command`` is set and to the analytic problem otherwise. The
    result design is in box units; ``diagnostics["unit_design"]`` keeps the
    unit-box version.
    """
    config.check()
    if problem is None:
        problem = get_problem(config.problem, **dict(config.problem_params or {}))
    config.validate_for(problem)
    owned = None
    if evaluator is None:
        if config.command:
            evaluator = owned = ExternalBlackBox(config.command, m=problem.m, timeout=config.timeout)
        else:
            evaluator = problem
    try:
        return _run(config, problem, evaluator)
    finally:
        if owned is not None:
            owned.close()


def _run(config, problem, evaluator):
    dim, m = problem.dim, problem.m
    part = config.territory(problem.partition)
    candidates = build_candidates(config, dim, part)
    grid = candidates if isinstance(candidates, StrategyGrid) else None
    pool = grid.designs() if grid is not None else candidates
    functional = _functional(config, grid)
    log = RunLog(dim, m)

    def evaluate(u, rec):
        t0 = time.perf_counter()
        try:
            y = _evaluate(evaluator, problem.to_box(u), m)
        except BlackBoxError as exc:
            exc.partial_log = log
            if config.output_dir:
                log.write(config.output_dir, config)
            raise
        rec.wall_time += time.perf_counter() - t0
        rec.objectives = y
        log.append(rec)
        return y

    X0 = lhs_design(config.n_init, dim, seed=np.random.SeedSequence([int(config.seed), 0]))
    X, Y = [], []
    for u in X0:
        rec = EvaluationRecord(0, problem.to_box(u), None)
        Y.append(evaluate(u, rec))
        X.append(u)
    X, Y = np.array(X), np.array(Y)
    evaluated_pool = set()
    models = None

    for it in range(1, config.n_iter + 1):
        t0 = time.perf_counter()
        refit = models is None or (it - 1) % config.refit_stride == 0
        models = fit_models(X, Y, config, models, refit)
        u_next, g, acq = _propose(config, models, functional, grid, pool, evaluated_pool, X, it)
        rec = EvaluationRecord(it, problem.to_box(u_next), None, g, acq, time.perf_counter() - t0)
        y = evaluate(u_next, rec)
        hit = gp.locate(pool, u_next)
        if hit is not None:
            evaluated_pool.add(hit)
        X, Y = np.vstack([X, u_next]), np.vstack([Y, y])

    models = fit_models(X, Y, config)
    result = final_solution(models, config, candidates, (X, Y))
    result.diagnostics["unit_design"] = result.design
    result.design = problem.to_box(result.design)
    if "nash" in result.diagnostics:
        nash = result.diagnostics["nash"]
        nash.design = problem.to_box(nash.design)
    log.result = result
    if config.output_dir:
        log.write(config.output_dir, config)
    return result, log


def _propose(config, models, functional, grid, pool, evaluated_pool, X, it):
    """Next unit-box design, current gamma and the acquisition value."""
    ss = np.random.SeedSequence([int(config.seed), 2, it])
    screen_seed, sim_seed, ts_seed = ss.spawn(3)
    n_pool = len(pool)
    n_want = min(config.n_eval + len(evaluated_pool), config.n_keep, n_pool)
    if n_pool <= config.n_keep:
        ens = gp.sample_joint(models, pool, config.n_draws, sim_seed)
        sel = filter_candidates(ens, functional, n_pool, n_want)
    else:
        screen = gp.MarginalEnsemble(models, pool, config.n_draws, screen_seed)
        sel = filter_candidates(screen, functional, config.n_keep, n_want)
        ens = gp.sample_joint(models, pool[sel.simulation], config.n_draws, sim_seed)
    f_sim = functional if sel.subgrid is None else functional.with_grid(sel.subgrid)
    g = gamma(ens, f_sim).gamma
    evaluation = [e for e in sel.evaluation if e not in evaluated_pool][:config.n_eval]
    if not evaluation:
        evaluation = [e for e in sel.simulation if e not in evaluated_pool][:config.n_eval]
    if not evaluation:
        raise ConfigError("every candidate has been evaluated; enlarge the candidate set")
    evaluation = np.array(evaluation)
    if config.acquisition == "thompson":
        u = thompson_step(models, f_sim, sel.subgrid, seed=ts_seed)
        if gp.locate(X, u) is None:
            return u, g, math.nan
        # already evaluated: take the most uncertain unevaluated candidate instead
        pos = np.searchsorted(sel.simulation, evaluation)
        score = ens.normalized_variance_sum()[pos]
        return pool[evaluation[int(np.argmax(score))]], g, math.nan
    pos = np.searchsorted(sel.simulation, evaluation)
    J, _ = sur_values(ens, models, f_sim, pos, config.n_hypothetical, config.expectation)
    best = int(np.argmin(J))
    return pool[evaluation[best]], g, float(J[best])


# ----------------------------------------------------------- fixed datasets


def grid_from_dataset(X, partition: TerritoryPartition):
    """Strategy grid and flat cell index of each row, for data laid out on a product grid."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != partition.dim:
        raise ConfigError("dataset dimension does not match the partition")
    per_player, codes = [], []
    for b in partition.blocks:
        block = X[:, list(b)]
        _, first, inverse = np.unique(block, axis=0, return_index=True, return_inverse=True)
        order = np.argsort(first)  # keep first-appearance order
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        per_player.append(block[np.sort(first)])
        codes.append(rank[inverse.ravel()])
    grid = StrategyGrid(partition, tuple(per_player))
    flat = np.ravel_multi_index(tuple(codes), grid.shape)
    if len(np.unique(flat)) != len(X) or len(X) != grid.product_size:
        raise ConfigError(f"dataset of {len(X)} points is not a full product grid "
                          f"({grid.product_size} cells over the partition)")
    return grid, flat


def solve_dataset(X, Y, kind: str = "ks", anchor: str = "nadir", preference=None, utopia=None,
                  disagreement=None, partition: TerritoryPartition | None = None) -> EquilibriumResult:
    """Solution of the game defined by already evaluated points (no surrogate).

    KS anchors are estimated from the data unless both ``utopia`` and
    ``disagreement`` are given. Nash and NKS need the designs to form a full
    product grid over ``partition``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if kind == "ks":
        s = ObjectiveSet(Y, X)
        if utopia is not None and disagreement is not None:
            anchors = AnchorPoints(utopia, disagreement, "preference")
        else:
            anchors = AnchorPoints.from_set(s, anchor, preference)
        return ks_select(s, anchors)
    if kind not in ("nash", "nks"):
        raise ConfigError(f"unknown solution kind {kind!r}")
    if partition is None:
        raise ConfigError(f"{kind} needs a partition")
    grid, flat = grid_from_dataset(X, partition)
    values = np.empty((grid.product_size, grid.m))
    values[flat] = Y
    if kind == "nash":
        found = nash_discrete(values, grid)
        if not found:
            raise ConfigError("the dataset has no pure Nash equilibrium")
        return pick_equilibrium(found, values)
    return nks_solve(None, grid, values=values)
