"""Bayesian optimization toward game-theoretic solutions of multi-objective problems.

Gaussian-process surrogates, Nash / Kalai-Smorodinsky / Nash-KS solution
maps, stepwise uncertainty reduction and Thompson sampling acquisition, and
a small benchmark harness with a command-line front end.
"""
from .acquisition import SolutionFunctional, filter_candidates, gamma, sur_criterion, sur_values, thompson_step
from .blackbox import external_blackbox
from .design import build_candidates, lhs_design, make_grid
from .equilibria import (EquilibriumResult, StrategyGrid, TerritoryPartition, ks_select, nash_discrete,
                         nash_fixed_point, nks_solve, verify_nash)
from .errors import (AnchorError, BlackBoxError, ConfigError, FactorizationError, GameBOError,
                     ValidationError)
from .gp import GpSurrogate, KernelSpec, fit, predict, sample_joint, update_ensemble
from .loop import RunConfig, RunLog, final_solution, load_config, run, solve_dataset
from .pareto import AnchorPoints, ObjectiveSet, nadir, pareto_filter, pseudo_nadir, utopia
from .problems import ProblemSpec, eval_analytic, get_problem

__version__ = "0.1.0"
