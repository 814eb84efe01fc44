"""Gibbs sampler for the latent factor Gaussian process model.

The model for trial ``i`` and window ``t`` is::

    Y[i, t, :] = F[i, t, :] @ B + eps,        eps ~ N(0, sigma2 * I_q)
    F[i, :, j] ~ GP(0, k(.; theta_j))          independently over i and j
    B[:, c] | sigma2 ~ N(0, sigma2 * v0 * I_r) (normal-inverse-gamma)
    sigma2 ~ IG(a0, b0),  theta_j ~ Gamma(shape, rate)

A factor added with :func:`add_factor_horseshoe` instead carries the
loadings prior ``N(0, lambda_c^2 rho^2)`` with half-Cauchy ``lambda_c``.

Each sweep updates the factors one at a time (ascending ``j``), then the
loadings and noise jointly, then the length scales by random-walk
Metropolis on ``log theta``.
"""

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import CovarianceProcess, LogCovSeries
from .errors import (
    ConfigError,
    EmptyChain,
    LfgpError,
    NumericalBreakdown,
    SamplerError,
    SingularDesign,
)
from .horseshoe import (
    inv_gamma,
    log_half_cauchy,
    sample_horseshoe_loadings,
    sample_local_scales,
)
from .kernels import (
    KernelSpec,
    LengthScalePrior,
    gram_matrix,
    kernel_from_distance,
    log_prior_density,
)
from .kron import kron_solve_mat
from .spd import matrix_exp, unvec_upper

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MCMCSettings:
    n_draws: int = 2000
    n_burn: int = 500
    thin: int = 10
    seed: int = 0
    proposal_sd: float = 0.2
    adapt: bool = True

    def __post_init__(self):
        if self.n_draws < 1 or self.thin < 1:
            raise ConfigError("n_draws and thin must be >= 1")
        if not 0 <= self.n_burn < self.n_draws:
            raise ConfigError("need 0 <= n_burn < n_draws")
        if self.proposal_sd < 0:
            raise ConfigError("proposal_sd must be nonnegative")

    @property
    def n_kept(self):
        return -(-(self.n_draws - self.n_burn) // self.thin)


@dataclass(frozen=True)
class ModelConfig:
    r: int = 2
    kernel: KernelSpec = KernelSpec()
    ls_prior: LengthScalePrior = LengthScalePrior()
    loading_prior_var: float = 10.0
    noise_prior: tuple = (1.0, 0.1)
    horseshoe_global_scale: float = 0.1
    mcmc: MCMCSettings = MCMCSettings()

    def __post_init__(self):
        if self.r < 1:
            raise ConfigError("need at least one factor")
        if not self.loading_prior_var > 0:
            raise ConfigError("loading_prior_var must be positive")
        a0, b0 = self.noise_prior
        if not (a0 > 0 and b0 > 0):
            raise ConfigError("noise prior shape and rate must be positive")
        if not self.horseshoe_global_scale > 0:
            raise ConfigError("horseshoe global scale must be positive")

    def with_mcmc(self, **kw):
        return replace(self, mcmc=replace(self.mcmc, **kw))


@dataclass
class ModelState:
    F: np.ndarray  # (n, T_w, r)
    B: np.ndarray  # (r, q)
    sigma2: float
    theta: np.ndarray  # (r,)
    lam: np.ndarray | None = None  # (q,) local scales of a horseshoe factor
    nu: np.ndarray | None = None

    def copy(self):
        return ModelState(
            self.F.copy(),
            self.B.copy(),
            float(self.sigma2),
            self.theta.copy(),
            None if self.lam is None else self.lam.copy(),
            None if self.nu is None else self.nu.copy(),
        )


@dataclass
class ChainDraws:
    """Thinned post-burn-in draws stored as stacked arrays.

    ``F`` has shape ``(d, n, T_w, r)``, ``B`` ``(d, r, q)``, ``sigma2`` ``(d,)``,
    ``theta`` ``(d, r)`` and ``lam`` ``(d, q)`` when a horseshoe factor is present.
    """

    F: np.ndarray
    B: np.ndarray
    sigma2: np.ndarray
    theta: np.ndarray
    log_posts: np.ndarray
    accept_rate_theta: np.ndarray
    time_index: np.ndarray
    lam: np.ndarray | None = None
    horseshoe_factors: tuple = ()
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.F.shape[0]

    @property
    def n(self):
        return self.F.shape[1]

    @property
    def T_w(self):
        return self.F.shape[2]

    @property
    def r(self):
        return self.F.shape[3]

    @property
    def q(self):
        return self.B.shape[2]

    def state(self, k):
        return ModelState(
            self.F[k],
            self.B[k],
            float(self.sigma2[k]),
            self.theta[k],
            None if self.lam is None else self.lam[k],
        )

    @property
    def states(self):
        return [self.state(k) for k in range(len(self))]


# ---------------------------------------------------------------------------
# kernel eigendecompositions


class KernelCache:
    """Eigendecompositions of the Gram matrix per length scale."""

    def __init__(self, kernel, grid):
        self.kernel = kernel
        self.grid = np.asarray(grid, dtype=float)
        self._cache = {}

    def eig(self, theta):
        key = float(theta)
        hit = self._cache.get(key)
        if hit is None:
            K = gram_matrix(self.kernel.with_length_scale(key), self.grid)
            w, Q = np.linalg.eigh(K)
            if w[0] < -1e-10:
                raise NumericalBreakdown(
                    f"Gram matrix lost positive semidefiniteness (theta={key:g})",
                    min_eigenvalue=float(w[0]),
                )
            w = np.maximum(w, 0.0)
            hit = (w, Q, K)
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[key] = hit
        return hit


def _gp_logpdf(paths, w, Q):
    """Sum over rows of ``paths`` (..., m) of ``log N(path; 0, Q diag(w) Q^T)``."""
    z = paths @ Q
    m = w.size
    n_paths = z.size // m
    quad = np.sum(z * z / w)
    return -0.5 * (n_paths * (m * _LOG_2PI + np.sum(np.log(w))) + quad)


# ---------------------------------------------------------------------------
# factor update


def factor_conditional(R, b, sigma2, eig_k):
    """Mean and covariance of one factor path given its residual.

    ``R`` is the ``(T_w, q)`` residual of one trial with the other factors
    removed.  The mean is ``(b^T kron K)(sigma2 (A kron K + I))^{-1} vec(R^T)``
    with ``A = b b^T / sigma2``; the covariance follows from the same solve
    applied to the columns of ``b kron K``.
    """
    w, Q, K = eig_k
    b = np.asarray(b, dtype=float)
    eig_a = np.linalg.eigh(np.outer(b, b) / sigma2)
    eig_s = (w, Q)
    sol = kron_solve_mat(eig_a, eig_s, R.T)
    mean = K @ (sol.T @ b) / sigma2
    # column t of (b kron K) as a (q, T_w) matrix is outer(b, K[:, t])
    cols = b[None, :, None] * K[:, None, :]
    sols = kron_solve_mat(eig_a, eig_s, cols)
    cross = np.einsum("c,tcs->ts", b, sols) @ K / sigma2
    cov = K - cross
    return mean, 0.5 * (cov + cov.T)


def sample_factors(Y, state, rng, cache, pred=None, factors=None):
    """Draw every factor path from its full conditional, in ascending order.

    Uses the sample-then-correct construction: a joint prior draw of
    (factor, data) is shifted by the conditional-mean map applied to the
    data discrepancy, which gives an exact conditional draw through the same
    Kronecker solve as the conditional mean.  Updates ``state.F`` in place
    and returns the refreshed prediction ``F @ B``.  ``factors`` restricts
    the update to a subset of factor indices.
    """
    values = Y.values
    n, T_w, q = values.shape
    F, B, sigma2 = state.F, state.B, state.sigma2
    if pred is None:
        pred = F @ B
    sd = math.sqrt(sigma2)
    for j in range(B.shape[0]) if factors is None else factors:
        b = B[j]
        w, Q, K = cache[j].eig(state.theta[j])
        f_old = F[:, :, j].copy()
        resid = values - pred + f_old[:, :, None] * b[None, None, :]
        f0 = (rng.standard_normal((n, T_w)) * np.sqrt(w)) @ Q.T
        y0 = f0[:, :, None] * b + sd * rng.standard_normal((n, T_w, q))
        A = np.outer(b, b) / sigma2
        eig_a = np.linalg.eigh(A)
        denom_min = 1.0 + eig_a[0].min() * w.max()
        if denom_min <= 0:
            raise NumericalBreakdown(
                "conditional covariance lost positive definiteness", min_eigenvalue=float(denom_min)
            )
        sol = kron_solve_mat(eig_a, (w, Q), np.swapaxes(resid - y0, 1, 2))
        f_new = f0 + (np.einsum("c,ict->it", b, sol) @ K) / sigma2
        F[:, :, j] = f_new
        pred += (f_new - f_old)[:, :, None] * b[None, None, :]
    return pred


# ---------------------------------------------------------------------------
# loadings and noise


def loading_noise_posterior(Y, F, cfg):
    """Normal-inverse-gamma posterior of ``(B, sigma2)`` given the factors.

    Returns ``(mean, V, a_n, b_n)`` with ``B[:, c] | sigma2 ~ N(mean[:, c],
    sigma2 V)`` and ``sigma2 ~ IG(a_n, b_n)``.
    """
    values = Y.values if isinstance(Y, LogCovSeries) else np.asarray(Y)
    q = values.shape[-1]
    X = F.reshape(-1, F.shape[-1])
    Z = values.reshape(-1, q)
    N, r = X.shape
    prec = X.T @ X + np.eye(r) / cfg.loading_prior_var
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise SingularDesign("loading posterior precision is singular") from exc
    V = np.linalg.inv(prec)
    V = 0.5 * (V + V.T)
    mean = V @ (X.T @ Z)
    a0, b0 = cfg.noise_prior
    a_n = a0 + 0.5 * N * q
    fit = np.sum((chol.T @ mean) ** 2)
    b_n = b0 + 0.5 * (np.sum(Z * Z) - fit)
    return mean, V, a_n, max(b_n, 1e-300)


def sample_loadings_noise(Y, F, cfg, rng):
    mean, V, a_n, b_n = loading_noise_posterior(Y, F, cfg)
    sigma2 = float(inv_gamma(rng, a_n, b_n))
    L = np.linalg.cholesky(V)
    B = mean + math.sqrt(sigma2) * (L @ rng.standard_normal(mean.shape))
    return B, sigma2


def _sample_horseshoe_block(Y, state, cfg, rng):
    """Loadings, noise and local scales of a one-factor horseshoe model."""
    values = Y.values
    f = state.F[:, :, 0].reshape(-1)
    Z = values.reshape(-1, values.shape[-1])
    rho = cfg.horseshoe_global_scale
    b = sample_horseshoe_loadings(f @ Z, f @ f, state.sigma2, state.lam**2, rho, rng)
    resid = Z - np.outer(f, b)
    a0, b0 = cfg.noise_prior
    sigma2 = float(inv_gamma(rng, a0 + 0.5 * Z.size, b0 + 0.5 * np.sum(resid * resid)))
    lam2, nu = sample_local_scales(b, state.lam**2, state.nu, rho, rng)
    return b[None, :], sigma2, np.sqrt(lam2), nu


# ---------------------------------------------------------------------------
# length scales


def lengthscale_log_target(paths, theta, prior, cache):
    """Log density of ``log theta`` given the factor paths (Jacobian included)."""
    w, Q, _ = cache.eig(theta)
    return _gp_logpdf(paths, w, Q) + log_prior_density(prior, theta) + math.log(theta)


def sample_lengthscale(paths, theta, prior, cache, proposal_sd, rng):
    """One random-walk Metropolis step on ``log theta``.

    Returns ``(theta, accepted)``.  A zero proposal scale proposes the current
    value, which is always accepted.
    """
    prop = theta * math.exp(proposal_sd * rng.standard_normal())
    if prop == theta:
        return theta, True
    cur = lengthscale_log_target(paths, theta, prior, cache)
    new = lengthscale_log_target(paths, prop, prior, cache)
    if math.log(rng.uniform()) < new - cur:
        return prop, True
    return theta, False


# ---------------------------------------------------------------------------
# log posterior, init, prior sampling


def log_posterior(Y, state, cfg, caches, pred=None, horseshoe=False):
    values = Y.values
    if pred is None:
        pred = state.F @ state.B
    resid = values - pred
    s2 = state.sigma2
    lp = -0.5 * (resid.size * (_LOG_2PI + math.log(s2)) + np.sum(resid * resid) / s2)
    for j in range(state.B.shape[0]):
        w, Q, _ = caches[j].eig(state.theta[j])
        lp += _gp_logpdf(state.F[:, :, j], w, Q)
        lp += log_prior_density(cfg.ls_prior, state.theta[j])
    a0, b0 = cfg.noise_prior
    lp += a0 * math.log(b0) - math.lgamma(a0) - (a0 + 1.0) * math.log(s2) - b0 / s2
    if horseshoe:
        var = (state.lam * cfg.horseshoe_global_scale) ** 2
        lp += -0.5 * np.sum(_LOG_2PI + np.log(var) + state.B[0] ** 2 / var)
        lp += log_half_cauchy(state.lam)
    else:
        var = s2 * cfg.loading_prior_var
        lp += -0.5 * (state.B.size * (_LOG_2PI + math.log(var)) + np.sum(state.B**2) / var)
    return float(lp)


def initial_state(Y, cfg, r=None):
    """Warm start from the leading singular directions of the stacked data."""
    r = cfg.r if r is None else r
    values = Y.values
    n, T_w, q = values.shape
    Z = values.reshape(-1, q)
    N = Z.shape[0]
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    k = min(r, s.size)
    F = np.zeros((N, r))
    B = np.zeros((r, q))
    F[:, :k] = U[:, :k] * math.sqrt(N)
    B[:k] = s[:k, None] * Vt[:k] / math.sqrt(N)
    # fix the sign so that each loading row has a positive sum
    sign = np.where(B.sum(axis=1) < 0, -1.0, 1.0)
    F *= sign
    B *= sign[:, None]
    resid = Z - F @ B
    sigma2 = max(float(np.mean(resid * resid)), 1e-6 * max(float(np.mean(Z * Z)), 1e-12), 1e-10)
    theta = np.full(r, cfg.ls_prior.mode if cfg.ls_prior.shape > 1 else cfg.kernel.length_scale)
    return ModelState(F.reshape(n, T_w, r), B, sigma2, theta)


def sample_prior(cfg, n, grid, q, rng, B=None, sigma2=None, theta=None):
    """Forward draw of ``(state, Y values)`` from the prior.

    Any of ``B``, ``sigma2`` or ``theta`` may be held fixed.
    """
    r = cfg.r
    a0, b0 = cfg.noise_prior
    if sigma2 is None:
        sigma2 = float(inv_gamma(rng, a0, b0))
    if B is None:
        B = math.sqrt(sigma2 * cfg.loading_prior_var) * rng.standard_normal((r, q))
    if theta is None:
        theta = rng.gamma(cfg.ls_prior.shape, 1.0 / cfg.ls_prior.rate, size=r)
    grid = np.asarray(grid, dtype=float)
    F = np.empty((n, grid.size, r))
    for j in range(r):
        K = gram_matrix(cfg.kernel.with_length_scale(theta[j]), grid)
        L = np.linalg.cholesky(K)
        F[:, :, j] = rng.standard_normal((n, grid.size)) @ L.T
    values = F @ B + math.sqrt(sigma2) * rng.standard_normal((n, grid.size, q))
    return ModelState(F, np.asarray(B, float), float(sigma2), np.asarray(theta, float)), values


def prior_predictive_cov(B, noise_cov, theta, lag, j, jp, family="squared_exponential"):
    """Model covariance ``Cov(Y_j(s), Y_jp(s + lag))`` for fixed parameters.

    ``noise_cov`` is either the scalar noise variance (isotropic noise) or a
    full ``(q, q)`` noise covariance.
    """
    B = np.asarray(B, dtype=float)
    theta = np.asarray(theta, dtype=float)
    kern = np.array([float(kernel_from_distance(family, lag, th)) for th in theta])
    val = float(np.sum(B[:, j] * B[:, jp] * kern))
    if lag != 0:
        return val
    if np.ndim(noise_cov) == 0:
        return val + (float(noise_cov) if j == jp else 0.0)
    return val + float(np.asarray(noise_cov)[j, jp])


# ---------------------------------------------------------------------------
# driver


def _adapt(sd, rate):
    if rate < 0.2:
        return sd * 0.7
    if rate > 0.5:
        return sd * 1.3
    return sd


def gibbs_sweep(Y, state, cfg, rng, caches, proposal_sd, pred=None, horseshoe=False):
    """One full sweep, updating ``state`` in place.

    Returns the prediction ``F @ B`` for the new state and the per-factor
    length-scale acceptance flags.
    """
    pred = sample_factors(Y, state, rng, caches, pred)
    if horseshoe:
        state.B, state.sigma2, state.lam, state.nu = _sample_horseshoe_block(Y, state, cfg, rng)
    else:
        state.B, state.sigma2 = sample_loadings_noise(Y, state.F, cfg, rng)
    pred = state.F @ state.B
    r = state.B.shape[0]
    ok = np.zeros(r)
    for j in range(r):
        state.theta[j], ok[j] = sample_lengthscale(
            state.F[:, :, j], state.theta[j], cfg.ls_prior, caches[j], proposal_sd[j], rng
        )
    return pred, ok


def gibbs_run(Y, cfg, init=None, horseshoe=False, progress=None):
    """Run the sampler and return the thinned post-burn-in draws.

    Deterministic for a given ``cfg.mcmc.seed``.  With ``horseshoe=True`` the
    model must have a single factor whose loadings get the horseshoe prior.
    """
    mc = cfg.mcmc
    if not np.all(np.isfinite(Y.values)):
        raise SamplerError("log-covariance series contains non-finite values", 0)
    if horseshoe and cfg.r != 1:
        raise ConfigError("the horseshoe sampler fits exactly one factor")
    rng = np.random.default_rng(mc.seed)
    state = (init or initial_state(Y, cfg)).copy()
    r = state.B.shape[0]
    if horseshoe and state.lam is None:
        state.lam = np.ones(Y.q)
        state.nu = np.ones(Y.q)
    caches = [KernelCache(cfg.kernel, Y.time_index) for _ in range(r)]
    sd = np.full(r, mc.proposal_sd)
    accepts = np.zeros(r)
    window_acc = np.zeros(r)
    window = 0
    n_post = 0

    d = mc.n_kept
    F_out = np.empty((d, Y.n, Y.T_w, r))
    B_out = np.empty((d, r, Y.q))
    s2_out = np.empty(d)
    th_out = np.empty((d, r))
    lam_out = np.empty((d, Y.q)) if horseshoe else None
    lp_out = np.empty(d)
    k = 0
    pred = None
    for it in range(mc.n_draws):
        try:
            pred, ok = gibbs_sweep(Y, state, cfg, rng, caches, sd, pred, horseshoe)
        except SamplerError:
            raise
        except LfgpError as exc:
            raise SamplerError(str(exc), it) from exc
        except np.linalg.LinAlgError as exc:
            raise SamplerError(f"linear algebra failure: {exc}", it) from exc
        window_acc += ok
        if it >= mc.n_burn:
            accepts += ok
        window += 1
        if it < mc.n_burn:
            if mc.adapt and window == 50:
                sd = np.array([_adapt(s, a / window) for s, a in zip(sd, window_acc)])
                window_acc[:] = 0
                window = 0
        else:
            n_post += 1
            if (it - mc.n_burn) % mc.thin == 0:
                F_out[k] = state.F
                B_out[k] = state.B
                s2_out[k] = state.sigma2
                th_out[k] = state.theta
                if horseshoe:
                    lam_out[k] = state.lam
                lp_out[k] = log_posterior(Y, state, cfg, caches, pred, horseshoe)
                if not math.isfinite(lp_out[k]):
                    raise SamplerError("log posterior is not finite", it)
                k += 1
        if progress is not None:
            progress(it)
    return ChainDraws(
        F=F_out,
        B=B_out,
        sigma2=s2_out,
        theta=th_out,
        log_posts=lp_out,
        accept_rate_theta=accepts / max(n_post, 1),
        time_index=np.array(Y.time_index),
        lam=lam_out,
        horseshoe_factors=(0,) if horseshoe else (),
        seed=mc.seed,
        meta={"proposal_sd": sd.tolist()},
    )


# ---------------------------------------------------------------------------
# summaries


def posterior_logcov_draws(draws, trial):
    """Per-draw reconstructed log-covariance ``F B`` of one trial, ``(d, T_w, q)``."""
    return np.einsum("dtr,drq->dtq", draws.F[:, trial], draws.B)


def posterior_median_logcov(draws):
    """Elementwise posterior median of ``F B``, shape ``(n, T_w, q)``."""
    if len(draws) == 0:
        raise EmptyChain("no draws")
    return np.stack([np.median(posterior_logcov_draws(draws, i), axis=0) for i in range(draws.n)])


def reconstruct_covariance(draws):
    """Posterior-median covariance process of every trial."""
    med = posterior_median_logcov(draws)
    return [CovarianceProcess(matrix_exp(unvec_upper(m)), draws.time_index) for m in med]


def variance_explained(Y, draws):
    """``1 - ||Y - median(F B)||^2 / ||Y||^2``."""
    med = posterior_median_logcov(draws)
    return 1.0 - float(np.sum((Y.values - med) ** 2) / np.sum(Y.values**2))


def add_factor_horseshoe(Y, draws, cfg, seed=None):
    """Fit one extra factor with horseshoe loadings to the residuals of a fit.

    The residual ``Y - median(F B)`` is modeled by a single GP factor whose
    loadings have the horseshoe prior.  The returned chain stacks the new
    factor after the existing ones, draw by draw; ``sigma2`` and
    ``log_posts`` come from the residual fit.
    """
    if len(draws) == 0:
        raise EmptyChain("no draws to extend")
    resid = Y.values - posterior_median_logcov(draws)
    R = LogCovSeries(resid, Y.time_index, list(Y.labels))
    mc = cfg.mcmc if seed is None else replace(cfg.mcmc, seed=seed)
    one = replace(cfg, r=1, mcmc=mc)
    if one.mcmc.n_kept != len(draws):
        raise ConfigError(
            f"residual chain would keep {one.mcmc.n_kept} draws, existing chain has {len(draws)}"
        )
    new = gibbs_run(R, one, horseshoe=True)
    r_old = draws.r
    return ChainDraws(
        F=np.concatenate([draws.F, new.F], axis=3),
        B=np.concatenate([draws.B, new.B], axis=1),
        sigma2=new.sigma2,
        theta=np.concatenate([draws.theta, new.theta], axis=1),
        log_posts=new.log_posts,
        accept_rate_theta=np.concatenate([draws.accept_rate_theta, new.accept_rate_theta]),
        time_index=draws.time_index,
        lam=new.lam,
        horseshoe_factors=tuple(draws.horseshoe_factors) + (r_old,),
        seed=mc.seed,
        meta=dict(draws.meta, residual_fit=new.meta),
    )
