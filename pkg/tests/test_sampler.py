import math

import numpy as np
import pytest
from scipy import stats

from lfgp.data import LogCovSeries
from lfgp.errors import ConfigError, EmptyChain, SamplerError
from lfgp.kernels import KernelSpec, LengthScalePrior, gram_matrix
from lfgp.sampler import (
    KernelCache,
    MCMCSettings,
    ModelConfig,
    ModelState,
    factor_conditional,
    gibbs_run,
    gibbs_sweep,
    lengthscale_log_target,
    loading_noise_posterior,
    posterior_median_logcov,
    prior_predictive_cov,
    reconstruct_covariance,
    sample_factors,
    sample_lengthscale,
    sample_loadings_noise,
    sample_prior,
)
from lfgp.spd import matrix_exp, unvec_upper

from oracles import (
    dense_factor_conditional,
    dense_lengthscale_log_target,
    dense_loading_posterior,
    dense_sigma2_log_posterior,
    grid_moments,
)


def micro(rng, n=2, T=8, q=3, r=2, sigma2=0.3):
    cfg = ModelConfig(r=r, ls_prior=LengthScalePrior.from_mode(3.0), loading_prior_var=2.0, noise_prior=(3.0, 1.0))
    grid = np.arange(T, dtype=float)
    state, values = sample_prior(
        cfg, n, grid, q, rng, B=rng.standard_normal((r, q)), sigma2=sigma2, theta=np.array([2.0, 3.5])[:r]
    )
    return cfg, LogCovSeries(values, grid), state


# ---------------------------------------------------------------- factors


def test_factor_conditional_matches_dense(rng):
    cfg, Y, state = micro(rng, n=2, T=10, q=3, r=1)
    K = gram_matrix(cfg.kernel.with_length_scale(state.theta[0]), Y.time_index)
    mean_d, cov_d = dense_factor_conditional(Y.values, state.F, state.B, state.sigma2, K, 0)
    eig = KernelCache(cfg.kernel, Y.time_index).eig(state.theta[0])
    for i in range(2):
        mean, cov = factor_conditional(Y.values[i], state.B[0], state.sigma2, eig)
        np.testing.assert_allclose(mean, mean_d[i], atol=1e-6)
        np.testing.assert_allclose(cov, cov_d[i * 10 : (i + 1) * 10, i * 10 : (i + 1) * 10], atol=1e-6)
    # distinct trials are conditionally independent
    np.testing.assert_allclose(cov_d[:10, 10:], 0.0, atol=1e-12)


def test_zero_loading_gives_prior(rng):
    eig = KernelCache(KernelSpec("squared_exponential", 2.0), np.arange(6.0)).eig(2.0)
    mean, cov = factor_conditional(rng.standard_normal((6, 3)), np.zeros(3), 0.5, eig)
    np.testing.assert_allclose(mean, 0.0, atol=1e-15)
    np.testing.assert_allclose(cov, eig[2], atol=1e-14)


def test_noiseless_interpolation(rng):
    y = rng.standard_normal((7, 1))
    eig = KernelCache(KernelSpec("squared_exponential", 1.5), np.arange(7.0)).eig(1.5)
    mean, cov = factor_conditional(y, np.ones(1), 1e-10, eig)
    np.testing.assert_allclose(mean, y[:, 0], atol=1e-6)
    assert np.abs(cov).max() < 1e-6


def test_sample_factors_moments(rng):
    cfg, Y, state = micro(rng)
    caches = [KernelCache(cfg.kernel, Y.time_index) for _ in range(2)]
    eig = caches[1].eig(state.theta[1])
    others = state.F[:, :, :1] @ state.B[:1]
    mean, cov = factor_conditional(Y.values[0] - others[0], state.B[1], state.sigma2, eig)
    draws = []
    for _ in range(6000):
        s = state.copy()
        sample_factors(Y, s, rng, caches, factors=[1])
        draws.append(s.F[0, :, 1])
        np.testing.assert_array_equal(s.F[:, :, 0], state.F[:, :, 0])
    draws = np.array(draws)
    se = np.sqrt(np.diag(cov) / len(draws))
    assert np.max(np.abs(draws.mean(0) - mean) / se) < 4.5
    emp = np.cov(draws.T)
    assert np.max(np.abs(emp - cov)) < 6 * np.sqrt(2 / len(draws)) * np.max(np.diag(cov))


# ---------------------------------------------------------------- loadings


def test_loading_posterior_null_design(rng):
    cfg = ModelConfig(r=2, loading_prior_var=3.0, noise_prior=(2.0, 0.5))
    values = rng.standard_normal((2, 5, 3))
    mean, V, a_n, b_n = loading_noise_posterior(values, np.zeros((2, 5, 2)), cfg)
    np.testing.assert_allclose(mean, 0.0)
    np.testing.assert_allclose(V, 3.0 * np.eye(2))
    assert a_n == 2.0 + 2 * 5 * 3 / 2
    assert b_n == pytest.approx(0.5 + np.sum(values**2) / 2, rel=1e-14)


def test_loading_posterior_matches_dense(rng):
    cfg, Y, state = micro(rng)
    v0 = cfg.loading_prior_var
    mean, V, a_n, b_n = loading_noise_posterior(Y, state.F, cfg)
    s2 = 0.7
    mean_d, cov_d = dense_loading_posterior(Y.values, state.F, v0, s2)
    np.testing.assert_allclose(mean, mean_d, atol=1e-10)
    r, q = mean.shape
    for c in range(q):
        np.testing.assert_allclose(s2 * V, cov_d[c * r : (c + 1) * r, c * r : (c + 1) * r], atol=1e-10)
    grid = np.linspace(0.05, 3.0, 25)
    dense = dense_sigma2_log_posterior(Y.values, state.F, v0, *cfg.noise_prior, grid)
    ours = stats.invgamma(a_n, scale=b_n).logpdf(grid)
    np.testing.assert_allclose(dense - dense[0], ours - ours[0], atol=1e-8)


def test_noiseless_loadings_recover_ols(rng):
    F = rng.standard_normal((20, 100, 2))
    B_true = rng.standard_normal((2, 4))
    cfg = ModelConfig(r=2, noise_prior=(1.0, 1e-8))
    B, s2 = sample_loadings_noise(F @ B_true, F, cfg, rng)
    assert np.max(np.abs(B - B_true) / np.abs(B_true)) < 0.01
    assert s2 < 1e-3


# ---------------------------------------------------------------- length scales


def test_lengthscale_target_matches_dense(rng):
    cfg, Y, state = micro(rng)
    cache = KernelCache(cfg.kernel, Y.time_index)
    for th in (0.7, 2.0, 5.5):
        ours = lengthscale_log_target(state.F[:, :, 0], th, cfg.ls_prior, cache)
        dense = dense_lengthscale_log_target(state.F[:, :, 0], th, cfg.kernel, Y.time_index, cfg.ls_prior)
        assert ours == pytest.approx(dense, rel=1e-8)


def test_zero_proposal_always_accepts(rng):
    cache = KernelCache(KernelSpec(), np.arange(5.0))
    paths = rng.standard_normal((2, 5))
    for _ in range(20):
        th, ok = sample_lengthscale(paths, 2.5, LengthScalePrior(), cache, 0.0, rng)
        assert ok and th == 2.5


def test_flat_likelihood_recovers_prior():
    rng = np.random.default_rng(5)
    prior = LengthScalePrior(shape=3.0, rate=0.5)
    cache = KernelCache(KernelSpec(), np.array([0.0]))
    paths = np.array([[0.3]])
    th, out = prior.mode, []
    for it in range(40000):
        th, _ = sample_lengthscale(paths, th, prior, cache, 1.0, rng)
        if it % 40 == 0:
            out.append(th)
    res = stats.kstest(out, stats.gamma(3.0, scale=2.0).cdf)
    assert res.pvalue > 0.01


def test_lengthscale_recovery():
    rng = np.random.default_rng(9)
    grid = np.arange(200.0)
    K = gram_matrix(KernelSpec("squared_exponential", 10.0), grid)
    paths = rng.standard_normal((3, 200)) @ np.linalg.cholesky(K).T
    prior = LengthScalePrior(shape=2.0, rate=0.05)
    cache = KernelCache(KernelSpec(), grid)
    th, out = 40.0, []
    for _ in range(2000):
        th, _ = sample_lengthscale(paths, th, prior, cache, 0.1, rng)
        out.append(th)
    assert 5.0 <= np.median(out[500:]) <= 20.0


# ---------------------------------------------------------------- prior covariance


def test_prior_predictive_cov_formulas():
    B = np.array([[1.0, 2.0], [0.5, -1.0]])
    theta = np.array([2.0, 5.0])
    assert prior_predictive_cov(B, 0.3, theta, 0, 1, 1) == pytest.approx(4.0 + 1.0 + 0.3)
    assert prior_predictive_cov(B, 0.3, theta, 0, 0, 1) == pytest.approx(2.0 - 0.5)
    assert prior_predictive_cov(B, 0.3, theta, 10_000, 0, 0) == pytest.approx(0.0, abs=1e-300)
    full = np.array([[0.3, 0.1], [0.1, 0.2]])
    assert prior_predictive_cov(B, full, theta, 0, 0, 1) == pytest.approx(1.5 + 0.1)


def test_prior_predictive_cov_monte_carlo():
    rng = np.random.default_rng(17)
    cfg = ModelConfig(r=2)
    B = np.array([[1.0, -0.5, 0.3], [0.2, 0.8, 1.1]])
    theta = np.array([2.0, 4.0])
    _, vals = sample_prior(cfg, 10_000, np.arange(8.0), 3, rng, B=B, sigma2=0.25, theta=theta)
    for lag in range(6):
        for j, jp in [(0, 0), (0, 2), (1, 2)]:
            prod = vals[:, 1, j] * vals[:, 1 + lag, jp]
            est, se = prod.mean(), prod.std() / math.sqrt(prod.size)
            assert abs(est - prior_predictive_cov(B, 0.25, theta, lag, j, jp)) <= 3 * se


# ---------------------------------------------------------------- driver


def test_single_draw_chain(rng):
    cfg, Y, _ = micro(rng)
    d = gibbs_run(Y, cfg.with_mcmc(n_draws=1, n_burn=0, thin=10))
    assert len(d) == 1
    assert d.F.shape == (1, 2, 8, 2)


def test_chain_length_and_determinism(rng):
    cfg, Y, _ = micro(rng)
    cfg = cfg.with_mcmc(n_draws=120, n_burn=20, thin=5, seed=42)
    a, b = gibbs_run(Y, cfg), gibbs_run(Y, cfg)
    assert len(a) == 20
    for name in ("F", "B", "sigma2", "theta", "log_posts", "accept_rate_theta"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert np.all(np.isfinite(a.log_posts))
    c = gibbs_run(Y, cfg.with_mcmc(seed=43))
    assert not np.array_equal(a.B, c.B)


def test_nonfinite_input_rejected(rng):
    cfg, Y, _ = micro(rng)
    Y.values[0, 0, 0] = np.nan
    with pytest.raises(SamplerError):
        gibbs_run(Y, cfg.with_mcmc(n_draws=5, n_burn=0))


def test_config_validation():
    with pytest.raises(ConfigError):
        MCMCSettings(n_draws=10, n_burn=10)
    with pytest.raises(ConfigError):
        ModelConfig(r=0)


def test_two_factor_recovery():
    rng = np.random.default_rng(3)
    cfg = ModelConfig(r=2, ls_prior=LengthScalePrior.from_mode(10.0), mcmc=MCMCSettings(2000, 500, 10, seed=1))
    grid = np.arange(50.0)
    truth_state, vals = sample_prior(
        cfg, 10, grid, 15, rng, B=rng.standard_normal((2, 15)), sigma2=0.05, theta=np.array([8.0, 12.0])
    )
    draws = gibbs_run(LogCovSeries(vals, grid), cfg)
    mse = np.mean((posterior_median_logcov(draws) - truth_state.F @ truth_state.B) ** 2)
    assert mse <= 0.10


def test_reconstruction(rng):
    cfg, Y, _ = micro(rng)
    d = gibbs_run(Y, cfg.with_mcmc(n_draws=1, n_burn=0))
    covs = reconstruct_covariance(d)
    expected = matrix_exp(unvec_upper(d.F[0, 1] @ d.B[0]))
    np.testing.assert_allclose(covs[1].matrices, expected, rtol=1e-12)
    assert all(np.all(np.linalg.eigvalsh(c.matrices) > 0) for c in covs)
    d2 = gibbs_run(Y, cfg.with_mcmc(n_draws=30, n_burn=0, thin=10))
    d2.F[:] = d2.F[0]
    d2.B[:] = d2.B[0]
    np.testing.assert_allclose(
        reconstruct_covariance(d2)[0].matrices, matrix_exp(unvec_upper(d2.F[0, 0] @ d2.B[0])), rtol=1e-12
    )
    d2.F = d2.F[:0]
    with pytest.raises(EmptyChain):
        reconstruct_covariance(d2)


def _batch_se(x, n_batches=50):
    b = np.array_split(np.asarray(x), n_batches)
    means = np.array([v.mean() for v in b])
    return means.std(ddof=1) / math.sqrt(n_batches)


def test_geweke_joint_distribution():
    """Marginal-conditional vs successive-conditional simulation agree."""
    rng = np.random.default_rng(2024)
    cfg = ModelConfig(
        r=2, ls_prior=LengthScalePrior(shape=8.0, rate=4.0), loading_prior_var=1.0, noise_prior=(6.0, 5.0)
    )
    grid = np.arange(8.0)
    n, q = 2, 3

    def stats_of(state):
        return np.concatenate([[state.sigma2], state.theta, state.B.ravel() ** 2, [np.sum(state.B**2)]])

    forward = np.array([stats_of(sample_prior(cfg, n, grid, q, rng)[0]) for _ in range(6000)])

    state, vals = sample_prior(cfg, n, grid, q, rng)
    caches = [KernelCache(cfg.kernel, grid) for _ in range(2)]
    sd = np.full(2, 0.5)
    chain = []
    for _ in range(12000):
        Y = LogCovSeries(vals, grid)
        gibbs_sweep(Y, state, cfg, rng, caches, sd)
        vals = state.F @ state.B + math.sqrt(state.sigma2) * rng.standard_normal(vals.shape)
        chain.append(stats_of(state))
    chain = np.array(chain)
    for k in range(forward.shape[1]):
        se = math.sqrt(forward[:, k].var() / len(forward) + _batch_se(chain[:, k]) ** 2)
        assert abs(forward[:, k].mean() - chain[:, k].mean()) <= 4 * se, k
