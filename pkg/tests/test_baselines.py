import math

import numpy as np
import pytest
from scipy import stats

from lfgp.baselines import (
    hmm_elbow,
    hmm_fit,
    hmm_reconstruct,
    hmm_state_proportions,
    sw_pca_fit,
    sw_pca_reconstruct,
    viterbi,
)
from lfgp.baselines.hmm import HmmModel, aic, path_logprob
from lfgp.data import LogCovSeries
from lfgp.errors import DimMismatch, KTooLarge
from lfgp.spd import matrix_exp, unvec_upper


def series(values):
    values = np.asarray(values, dtype=float)
    return LogCovSeries(values, np.arange(values.shape[1], dtype=float))


# ------------------------------------------------------------------ SW-PCA


def test_pca_constant_series_reconstructs_mean(rng):
    v = rng.standard_normal(6)
    Y = series(np.tile(v, (2, 30, 1)))
    for k in (0, 2, 6):
        est = sw_pca_reconstruct(Y, sw_pca_fit(Y, k))
        np.testing.assert_allclose(est[0].matrices, np.broadcast_to(matrix_exp(unvec_upper(v)), (30, 3, 3)), atol=1e-12)


def test_pca_components_orthonormal(rng):
    Y = series(rng.standard_normal((3, 40, 10)))
    basis = sw_pca_fit(Y, 4)
    np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(4), atol=1e-10)


def test_pca_planted_subspace(rng):
    q, k = 10, 3
    dirs, _ = np.linalg.qr(rng.standard_normal((q, k)))
    scores = rng.standard_normal((2, 200, k)) * [3.0, 2.0, 1.0]
    Y = series(scores @ dirs.T + 1e-4 * rng.standard_normal((2, 200, q)))
    basis = sw_pca_fit(Y, k)
    Z = Y.values.reshape(-1, q)
    err = np.sum((Z - (Z - basis.mean) @ basis.components.T @ basis.components - basis.mean) ** 2) / Z.shape[0]
    assert err <= 1e-3 * basis.total_variance


def test_pca_explained_variance_monotone(rng):
    Y = series(rng.standard_normal((2, 50, 6)))
    frac = [sw_pca_fit(Y, k).explained_fraction for k in range(7)]
    assert all(a <= b + 1e-15 for a, b in zip(frac, frac[1:]))
    assert frac[-1] == pytest.approx(1.0)


def test_pca_full_basis_is_identity(rng):
    Y = series(rng.uniform(-1, 1, (2, 20, 6)))
    est = sw_pca_reconstruct(Y, sw_pca_fit(Y, 6))
    np.testing.assert_allclose(est[1].matrices, matrix_exp(unvec_upper(Y.values[1])), rtol=1e-10)


def test_pca_zero_components_is_constant(rng):
    Y = series(rng.uniform(-1, 1, (2, 20, 3)))
    est = sw_pca_reconstruct(Y, sw_pca_fit(Y, 0))
    mean = Y.values.reshape(-1, 3).mean(0)
    np.testing.assert_allclose(est[0].matrices, np.broadcast_to(matrix_exp(unvec_upper(mean)), (20, 2, 2)))


def test_pca_errors(rng):
    Y = series(rng.standard_normal((1, 10, 3)))
    with pytest.raises(KTooLarge):
        sw_pca_fit(Y, 4)
    with pytest.raises(DimMismatch):
        sw_pca_reconstruct(series(rng.standard_normal((1, 10, 6))), sw_pca_fit(Y, 1))


def test_pca_reconstruction_error_decreases_in_k(rng):
    Y = series(rng.standard_normal((2, 40, 6)))
    Z = Y.values.reshape(-1, 6)
    errs = []
    for k in range(7):
        b = sw_pca_fit(Y, k)
        errs.append(np.sum((Z - b.mean - (Z - b.mean) @ b.components.T @ b.components) ** 2))
    assert all(a >= b - 1e-9 for a, b in zip(errs, errs[1:]))


# --------------------------------------------------------------------- HMM


def planted_hmm(rng, T=600, gap=10.0, switch=0.02, d=2, n_seq=3):
    A = np.array([[1 - switch, switch], [switch, 1 - switch]])
    means = np.array([np.zeros(d), np.full(d, gap)])
    seqs, paths = [], []
    for _ in range(n_seq):
        s = np.empty(T, dtype=int)
        s[0] = rng.integers(2)
        for t in range(1, T):
            s[t] = rng.choice(2, p=A[s[t - 1]])
        seqs.append(means[s] + rng.standard_normal((T, d)))
        paths.append(s)
    return seqs, paths, means, A


def test_hmm_single_state_is_gaussian_mle(rng):
    X = rng.standard_normal((300, 3)) @ np.array([[1, 0.3, 0], [0, 1, 0.2], [0, 0, 0.5]])
    model = hmm_fit([X], 1, rng)
    mu = X.mean(0)
    C = np.cov(X.T, bias=True)
    np.testing.assert_allclose(model.means[0], mu, atol=1e-12)
    # the fitted covariance carries the tiny diagonal load; the likelihood is
    # then within that perturbation of the exact Gaussian MLE value
    direct = stats.multivariate_normal(mu, C).logpdf(X).sum()
    assert model.loglik == pytest.approx(direct, abs=1e-3)
    fitted = stats.multivariate_normal(model.means[0], model.covs[0]).logpdf(X).sum()
    assert model.loglik == pytest.approx(fitted, rel=1e-10)


def test_hmm_planted_two_states(rng):
    seqs, paths, means, A = planted_hmm(rng)
    model = hmm_fit(seqs, 2, rng)
    order = np.argsort(model.means[:, 0])
    np.testing.assert_allclose(model.means[order][1], means[1], rtol=0.05)
    assert np.all(np.abs(model.means[order][0]) < 0.05 * 10.0)
    switch_hat = model.trans[order][:, order][0, 1]
    assert 0.02 / 1.5 <= switch_hat <= 0.02 * 1.5
    # decoding recovers the planted path up to label order
    path, _ = viterbi(seqs[0], model)
    mapped = np.argsort(order)[path]
    assert np.mean(mapped == paths[0]) > 0.99


def test_hmm_em_monotone(rng):
    seqs, *_ = planted_hmm(rng, gap=1.0, T=300)
    model = hmm_fit(seqs, 3, rng, n_restarts=2)
    obj = np.array([h[1] for h in model.history])
    assert np.all(np.diff(obj) >= -1e-9 * np.abs(obj[1:]))


def test_viterbi_beats_random_paths(rng):
    seqs, *_ = planted_hmm(rng, gap=1.5, T=80, n_seq=1)
    model = hmm_fit(seqs, 2, rng)
    path, lp = viterbi(seqs[0], model)
    assert path_logprob(seqs[0], path, model) == pytest.approx(lp)
    for _ in range(1000):
        rand = rng.integers(model.S, size=len(path))
        assert path_logprob(seqs[0], rand, model) <= lp + 1e-9


def test_viterbi_against_brute_force(rng):
    model = HmmModel(
        np.array([0.6, 0.4]),
        np.array([[0.7, 0.3], [0.2, 0.8]]),
        np.array([[0.0], [1.0]]),
        np.array([[[1.0]], [[0.5]]]),
    )
    x = rng.standard_normal((6, 1))
    best = max(
        path_logprob(x, np.array(p), model) for p in np.ndindex(*(2,) * 6)
    )
    assert viterbi(x, model)[1] == pytest.approx(best)


def test_state_proportions(rng):
    seqs, *_ = planted_hmm(rng, T=200, n_seq=4)
    model = hmm_fit(seqs, 2, rng)
    props = hmm_state_proportions(model, seqs, ["a", "b", "a", "b"])
    for v in props.values():
        assert abs(v.sum() - 1.0) <= 1e-12
    one = hmm_fit(seqs, 1, rng)
    assert hmm_state_proportions(one, seqs[:1], ["a"])["a"] == pytest.approx([1.0])


def test_single_state_reconstruction_is_constant(rng):
    Y = series(rng.uniform(-1, 1, (2, 30, 3)))
    model = hmm_fit(Y, 1, rng)
    est = hmm_reconstruct(model, Y)
    assert np.all(est[0].matrices == est[0].matrices[0])


def test_reconstruction_piecewise_constant(rng):
    seqs, *_ = planted_hmm(rng, d=3, T=200, n_seq=1)
    Y = series(np.stack(seqs) * 0.1)
    model = hmm_fit(Y, 2, rng)
    m = hmm_reconstruct(model, Y)[0].matrices
    distinct = {m[t].tobytes() for t in range(len(m))}
    assert len(distinct) <= 2


def test_aic_param_count(rng):
    X = rng.standard_normal((100, 3))
    model = hmm_fit([X], 2, rng)
    assert model.n_params == 1 + 2 + 2 * (3 + 6)
    assert aic(model) == pytest.approx(2 * model.n_params - 2 * model.loglik)


def test_elbow_null_prefers_one_state(rng):
    X = rng.standard_normal((2, 300, 2))
    scores = hmm_elbow(list(X), [1, 2, 3], rng, n_restarts=2)
    assert all(math.isfinite(v) for v in scores.values())
    assert min(scores, key=scores.get) == 1


def test_elbow_planted_three_states():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        means = np.array([[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]])
        s = np.repeat(rng.integers(3, size=30), 20)
        X = means[s] + rng.standard_normal((s.size, 2))
        scores = hmm_elbow([X], range(1, 7), rng, skip_degenerate=True, n_restarts=3)
        hits += min(scores, key=scores.get) == 3
    assert hits >= 6
