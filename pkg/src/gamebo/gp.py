"""Gaussian-process surrogates, joint posterior ensembles and their fast update.

One independent GP is fitted per objective. The prior mean is a constant
(generalized least squares estimate), the prior variance is profiled out of
the likelihood, and only the lengthscales (and optionally a relative nugget)
are searched numerically.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize

from .errors import FactorizationError, ValidationError

FAMILIES = ("squared-exponential", "matern-5/2")
_ALIASES = {
    "se": "squared-exponential",
    "sqexp": "squared-exponential",
    "rbf": "squared-exponential",
    "squared-exponential": "squared-exponential",
    "matern52": "matern-5/2",
    "matern-5/2": "matern-5/2",
}

LENGTHSCALE_BOUNDS = (1e-2, 10.0)
NUGGET_BOUNDS = (1e-8, 1e-1)  # relative to the process variance
DEFAULT_RELATIVE_NUGGET = 1e-8
JITTER_START = 1e-10
JITTER_MAX = 1e-4
MAX_SIMULATION_SIZE = 10_000
_SQRT5 = np.sqrt(5.0)


def canonical_family(name: str) -> str:
    try:
        return _ALIASES[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown kernel family {name!r}; expected one of {FAMILIES}") from None


@dataclass(frozen=True)
class KernelSpec:
    """Stationary anisotropic covariance with a white nugget term.

    The nugget is added whenever two points have identical coordinates, so
    ``k(x, x) = variance + nugget``.
    """

    family: str
    lengthscales: np.ndarray
    variance: float
    nugget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "family", canonical_family(self.family))
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValidationError("lengthscales must be positive and finite")
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise ValidationError("variance must be positive")
        if not np.isfinite(self.nugget) or self.nugget < 0:
            raise ValidationError("nugget must be non-negative")
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "nugget", float(self.nugget))

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def correlation_from_sq(self, d2):
        """Correlation as a function of squared scaled distance."""
        if self.family == "squared-exponential":
            return np.exp(-0.5 * d2)
        r = np.sqrt(d2)
        return (1.0 + _SQRT5 * r + (5.0 / 3.0) * d2) * np.exp(-_SQRT5 * r)

    def scaled_sq_dist(self, a, b):
        a = np.asarray(a, dtype=float) / self.lengthscales
        b = np.asarray(b, dtype=float) / self.lengthscales
        d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        np.maximum(d2, 0.0, out=d2)
        return d2

    def __call__(self, a, b=None):
        """Covariance matrix between the rows of ``a`` and ``b``."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = a if b is None else np.atleast_2d(np.asarray(b, dtype=float))
        d2 = self.scaled_sq_dist(a, b)
        same = _identical(a, b)
        d2[same] = 0.0
        k = self.variance * self.correlation_from_sq(d2)
        if self.nugget > 0:
            k[same] += self.nugget
        return k

    def diag(self, a):
        return np.full(len(a), self.variance + self.nugget)


def _identical(a, b):
    """Boolean matrix marking pairs of rows with identical coordinates."""
    if a is b:
        codes = np.unique(a, axis=0, return_inverse=True)[1].ravel()
        return codes[:, None] == codes[None, :]
    codes = np.unique(np.vstack([a, b]), axis=0, return_inverse=True)[1].ravel()
    return codes[:len(a), None] == codes[None, len(a):]


def cholesky_with_jitter(matrix, scale):
    """Lower Cholesky factor, escalating diagonal jitter from 1e-10 to 1e-4 times ``scale``.

    Returns ``(factor, jitter)``.
    """
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    eye = np.eye(len(matrix))
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            return linalg.cholesky(matrix + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"covariance matrix of size {len(matrix)} not positive definite "
        f"even with jitter {JITTER_MAX * scale:.3g}"
    )


class GpSurrogate:
    """GP regression model for one objective with cached factorization.

    Instances are immutable once built; :meth:`condition` returns a new model.
    """

    def __init__(self, inputs, outputs, kernel: KernelSpec, mean: float | None = None):
        x = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(outputs, dtype=float).ravel()
        if len(x) < 1 or len(x) != len(y):
            raise ValidationError("need at least one training point and matching outputs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValidationError("training data must be finite")
        if x.shape[1] != kernel.dim:
            raise ValidationError(f"inputs have dimension {x.shape[1]}, kernel expects {kernel.dim}")
        self.inputs = x
        self.outputs = y
        self.kernel = kernel
        gram = kernel(x)
        self.factor, self.jitter = cholesky_with_jitter(gram, kernel.variance)
        if mean is None:
            mean = _gls_mean(self.factor, y)
        self.mean = float(mean)
        self.alpha = linalg.cho_solve((self.factor, True), y - self.mean, check_finite=False)
        for arr in (self.inputs, self.outputs, self.factor, self.alpha):
            arr.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def n(self) -> int:
        return len(self.inputs)

    def _check_queries(self, queries):
        q = np.atleast_2d(np.asarray(queries, dtype=float))
        if q.shape[1] != self.dim:
            raise ValidationError(f"queries have dimension {q.shape[1]}, model expects {self.dim}")
        if not np.all(np.isfinite(q)):
            raise ValidationError("queries must be finite")
        return q

    def whitened_cross(self, queries):
        """``L^{-1} k(X, queries)``; the building block of posterior covariances."""
        k = self.kernel(self.inputs, queries)
        return linalg.solve_triangular(self.factor, k, lower=True, check_finite=False)

    def predict(self, queries, chunk: int = 20_000):
        """Posterior mean and variance at each query row."""
        q = self._check_queries(queries)
        means = np.empty(len(q))
        variances = np.empty(len(q))
        for start in range(0, len(q), chunk):
            block = q[start:start + chunk]
            k = self.kernel(block, self.inputs)
            means[start:start + chunk] = self.mean + k @ self.alpha
            v = linalg.solve_triangular(self.factor, k.T, lower=True, check_finite=False)
            variances[start:start + chunk] = self.kernel.diag(block) - np.einsum("ij,ij->j", v, v)
        np.maximum(variances, 0.0, out=variances)
        return means, variances

    def posterior_cov(self, a, b=None):
        a = self._check_queries(a)
        va = self.whitened_cross(a)
        if b is None:
            return self.kernel(a) - va.T @ va
        b = self._check_queries(b)
        return self.kernel(a, b) - va.T @ self.whitened_cross(b)

    def condition(self, new_inputs, new_outputs) -> "GpSurrogate":
        """Model with extra observations, same hyperparameters and prior mean."""
        x = np.vstack([self.inputs, np.atleast_2d(new_inputs)])
        y = np.concatenate([self.outputs, np.atleast_1d(np.asarray(new_outputs, dtype=float))])
        return GpSurrogate(x, y, self.kernel, mean=self.mean)

    def log_marginal_likelihood(self, kernel: KernelSpec | None = None, mean: float | None = None) -> float:
        """Gaussian log marginal likelihood of the training outputs."""
        kernel = self.kernel if kernel is None else kernel
        mean = self.mean if mean is None else mean
        gram = kernel(self.inputs)
        try:
            factor, _ = cholesky_with_jitter(gram, kernel.variance)
        except FactorizationError:
            return -np.inf
        r = self.outputs - mean
        a = linalg.solve_triangular(factor, r, lower=True, check_finite=False)
        return float(-0.5 * a @ a - np.log(np.diag(factor)).sum() - 0.5 * self.n * np.log(2 * np.pi))

    def __repr__(self):
        return (f"GpSurrogate(n={self.n}, dim={self.dim}, family={self.kernel.family!r}, "
                f"variance={self.kernel.variance:.4g}, mean={self.mean:.4g})")


def _gls_mean(factor, y):
    ones = np.ones(len(y))
    w = linalg.cho_solve((factor, True), ones, check_finite=False)
    return float(w @ y / (w @ ones))


def _profile_objective(theta, x, y, family, diffs_sq, same, estimate_nugget):
    """Negative concentrated log-likelihood and its gradient in log-parameters."""
    dim = x.shape[1]
    ls = np.exp(theta[:dim])
    tau = np.exp(theta[dim]) if estimate_nugget else DEFAULT_RELATIVE_NUGGET
    n = len(y)
    scaled = diffs_sq / ls**2  # (n, n, dim)
    d2 = scaled.sum(axis=2)
    if family == "squared-exponential":
        corr = np.exp(-0.5 * d2)
        deriv = corr
    else:
        r = np.sqrt(d2)
        e = np.exp(-_SQRT5 * r)
        corr = (1.0 + _SQRT5 * r + (5.0 / 3.0) * d2) * e
        deriv = (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
    gram = corr + tau * same
    try:
        factor = linalg.cholesky(gram, lower=True, check_finite=False)
    except linalg.LinAlgError:
        try:
            factor, _ = cholesky_with_jitter(gram, 1.0)
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
    ones = np.ones(n)
    w = linalg.cho_solve((factor, True), ones, check_finite=False)
    beta = w @ y / (w @ ones)
    resid = y - beta
    a = linalg.cho_solve((factor, True), resid, check_finite=False)
    sigma2 = max(resid @ a / n, 1e-300)
    loglik = -0.5 * n * np.log(sigma2) - np.log(np.diag(factor)).sum() - 0.5 * n * (1 + np.log(2 * np.pi))
    inv = linalg.cho_solve((factor, True), np.eye(n), check_finite=False)
    weight = np.outer(a, a) / sigma2 - inv
    grad = np.empty_like(theta)
    grad[:dim] = 0.5 * np.einsum("ij,ijd->d", weight * deriv, scaled)
    if estimate_nugget:
        grad[dim] = 0.5 * tau * np.sum(weight * same)
    return -loglik, -grad


def fit(inputs, outputs, kernel_family: str = "matern-5/2", seed=0, n_starts: int = 5,
        estimate_nugget: bool = False) -> GpSurrogate:
    """Fit a GP by maximizing the log marginal likelihood from random restarts.

    Parameters
    ----------
    inputs : (n, dim) array in the unit box
    outputs : (n,) array
    kernel_family : "matern-5/2" (default) or "squared-exponential"
    seed : seed for the restart locations
    n_starts : number of random starting points for L-BFGS-B
    estimate_nugget : also fit a relative nugget instead of the fixed 1e-8
    """
    family = canonical_family(kernel_family)
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(outputs, dtype=float).ravel()
    if len(x) != len(y):
        raise ValidationError("inputs and outputs have different lengths")
    if not np.all(np.isfinite(y)):
        raise ValidationError("outputs must be finite")
    if not np.all(np.isfinite(x)):
        raise ValidationError("inputs must be finite")
    if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
        raise ValidationError("inputs must lie in the unit box; rescale before fitting")
    if len(np.unique(x, axis=0)) < 2:
        raise ValidationError("need at least two distinct inputs")
    dim = x.shape[1]

    if np.ptp(y) == 0.0:
        # Constant data: the likelihood has no interior optimum.
        kernel = KernelSpec(family, np.full(dim, 0.5), 1.0, DEFAULT_RELATIVE_NUGGET)
        return GpSurrogate(x, y, kernel, mean=y[0])

    diffs_sq = (x[:, None, :] - x[None, :, :]) ** 2
    same = _identical(x, x)
    lo, hi = np.log(LENGTHSCALE_BOUNDS)
    bounds = [(lo, hi)] * dim
    if estimate_nugget:
        bounds.append(tuple(np.log(NUGGET_BOUNDS)))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_starts):
        start = np.array([rng.uniform(b0, b1) for b0, b1 in bounds])
        res = optimize.minimize(
            _profile_objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
            args=(x, y, family, diffs_sq, same, estimate_nugget),
        )
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    ls = np.exp(theta[:dim])
    tau = np.exp(theta[dim]) if estimate_nugget else DEFAULT_RELATIVE_NUGGET
    # Recover the profiled mean and variance at the optimum.
    probe = KernelSpec(family, ls, 1.0, tau)
    factor, _ = cholesky_with_jitter(probe(x), 1.0)
    beta = _gls_mean(factor, y)
    a = linalg.solve_triangular(factor, y - beta, lower=True, check_finite=False)
    sigma2 = max(a @ a / len(y), 1e-300)
    kernel = KernelSpec(family, ls, sigma2, tau * sigma2)
    return GpSurrogate(x, y, kernel, mean=beta)


def predict(model: GpSurrogate, queries):
    """Posterior ``(means, variances)`` of ``model`` at ``queries``."""
    return model.predict(queries)


@dataclass
class PosteriorEnsemble:
    """``M`` joint posterior draws of ``m`` objectives over ``N`` candidates.

    ``draws`` has shape ``(M, N, m)``. ``variances`` holds the predictive
    variances at the candidates and ``prior_variances`` the kernel variance of
    each model, used for normalized variance scores.
    """

    candidates: np.ndarray
    draws: np.ndarray
    seed: object = None
    variances: np.ndarray | None = None
    prior_variances: np.ndarray | None = None
    joint: bool = True
    whitened: list | None = field(default=None, repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def n_candidates(self) -> int:
        return self.draws.shape[1]

    @property
    def m(self) -> int:
        return self.draws.shape[2]

    def iter_draws(self):
        yield from self.draws

    def normalized_variance_sum(self):
        if self.variances is None:
            return self.draws.var(axis=0).sum(axis=1)
        return (self.variances / self.prior_variances).sum(axis=1)


def _seed_streams(seed, count):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(count)]


def _check_models(models, candidates):
    models = list(models)
    if not models:
        raise ValidationError("need at least one model")
    c = np.atleast_2d(np.asarray(candidates, dtype=float))
    for mdl in models:
        if mdl.dim != c.shape[1]:
            raise ValidationError("candidate dimension does not match the models")
    return models, c


def draw_joint(models, candidates, M: int, seed=None) -> PosteriorEnsemble:
    """Exact joint posterior draws; unguarded version of :func:`sample_joint`."""
    models, c = _check_models(models, candidates)
    if len(c) > MAX_SIMULATION_SIZE:
        raise ValidationError(
            f"{len(c)} simulation points exceed the limit of {MAX_SIMULATION_SIZE}; filter candidates first")
    unique, inverse = np.unique(c, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    rngs = _seed_streams(seed, len(models))
    draws = np.empty((M, len(c), len(models)))
    variances = np.empty((len(c), len(models)))
    whitened = []
    for j, (mdl, rng) in enumerate(zip(models, rngs)):
        mean, _ = mdl.predict(unique)
        v = mdl.whitened_cross(unique)
        cov = mdl.kernel(unique) - v.T @ v
        var_u = np.maximum(np.diag(cov), 0.0)
        try:
            factor, _ = cholesky_with_jitter(cov, mdl.kernel.variance)
        except FactorizationError as exc:
            raise FactorizationError(f"objective {j}: conditional covariance over "
                                     f"{len(unique)} candidates: {exc}") from exc
        eps = rng.standard_normal((M, len(unique)))
        sample = mean[None, :] + eps @ factor.T
        draws[:, :, j] = sample[:, inverse]
        variances[:, j] = var_u[inverse]
        whitened.append(v[:, inverse])
    return PosteriorEnsemble(
        candidates=c, draws=draws, seed=seed, variances=variances,
        prior_variances=np.array([mdl.kernel.variance for mdl in models]),
        joint=True, whitened=whitened,
    )


def sample_joint(models, candidates, M: int, seed=None) -> PosteriorEnsemble:
    """Draw ``M`` joint posterior realizations of every model over ``candidates``.

    Each objective uses its own random stream spawned from ``seed``, so the
    draws of objective ``j`` depend only on model ``j``. Candidates with
    identical coordinates receive identical values in every draw.
    """
    if M < 2:
        raise ValidationError("need at least two draws")
    return draw_joint(models, candidates, M, seed)


class MarginalEnsemble:
    """Independent per-candidate posterior draws generated lazily.

    Used to screen candidate pools far larger than a joint simulation can
    handle; only means and variances are stored.
    """

    joint = False

    def __init__(self, models, candidates, M: int, seed=None):
        models, c = _check_models(models, candidates)
        self.candidates = c
        self.seed = seed
        self.n_draws = int(M)
        self.m = len(models)
        self.means = np.empty((len(c), self.m))
        self.variances = np.empty((len(c), self.m))
        for j, mdl in enumerate(models):
            self.means[:, j], self.variances[:, j] = mdl.predict(c)
        self.prior_variances = np.array([mdl.kernel.variance for mdl in models])
        self._sd = np.sqrt(self.variances)

    @property
    def n_candidates(self) -> int:
        return len(self.candidates)

    def iter_draws(self):
        for rng in _seed_streams(self.seed, self.n_draws):
            yield self.means + self._sd * rng.standard_normal(self.means.shape)

    def normalized_variance_sum(self):
        return (self.variances / self.prior_variances).sum(axis=1)


def locate(candidates, point, atol: float = 1e-12):
    """Index of the first candidate row equal to ``point`` (within ``atol``), else ``None``."""
    point = np.asarray(point, dtype=float).ravel()
    hits = np.flatnonzero(np.all(np.abs(candidates - point) <= atol, axis=1))
    return int(hits[0]) if hits.size else None


def kriging_weights(ensemble: PosteriorEnsemble, models, indices, tol: float = 1e-10):
    """Kriging-update weights for hypothetical observations at candidate ``indices``.

    Returns an array ``(len(indices), N, m)``: the posterior covariance of each
    candidate with the new point divided by the posterior variance at the new
    point. Weights are zero where that variance is below ``tol`` times the
    prior variance or below ten times the nugget plus jitter (the value is
    already known).
    """
    indices = np.atleast_1d(indices)
    cands = ensemble.candidates
    weights = np.zeros((len(indices), ensemble.n_candidates, len(models)))
    for j, mdl in enumerate(models):
        if ensemble.whitened is not None:
            v_all = ensemble.whitened[j]
        else:
            v_all = mdl.whitened_cross(cands)
        v_new = v_all[:, indices]
        cov = mdl.kernel(cands[indices], cands) - v_new.T @ v_all  # (k, N)
        var_new = cov[np.arange(len(indices)), indices]
        # the nugget only regularizes noise-free data: variance at that level means "known"
        known = max(tol * mdl.kernel.variance, 10.0 * (mdl.kernel.nugget + mdl.jitter))
        ok = var_new > known
        weights[ok, :, j] = cov[ok] / var_new[ok, None]
    return weights


def update_ensemble(ensemble: PosteriorEnsemble, models, new_input, new_values_per_draw) -> PosteriorEnsemble:
    """Condition every draw on a hypothetical observation at ``new_input``.

    Draw ``k`` is conditioned on ``new_values_per_draw[k]`` (one value per
    objective) with the kriging-update identity
    ``Z'(c) = Z(c) + w(c) (y - Z(x_new))``; no refactorization is needed.
    ``new_input`` must be one of the ensemble's candidates.
    """
    models = list(models)
    if len(models) != ensemble.m:
        raise ValidationError("number of models does not match the ensemble")
    idx = locate(ensemble.candidates, new_input)
    if idx is None:
        raise ValidationError("new_input must coincide with a candidate of the ensemble")
    values = np.asarray(new_values_per_draw, dtype=float)
    if values.shape != (ensemble.n_draws, ensemble.m):
        raise ValidationError(f"expected hypothetical values of shape {(ensemble.n_draws, ensemble.m)}")
    w = kriging_weights(ensemble, models, [idx])[0]  # (N, m)
    shift = values - ensemble.draws[:, idx, :]  # (M, m)
    draws = ensemble.draws + shift[:, None, :] * w[None, :, :]
    return replace(ensemble, draws=draws)
