"""Gaussian-emission hidden Markov model fitted by Baum-Welch.

Sequences are 2-d arrays ``(T_i, d)``.  With ``zero_mean=True`` every state
emits ``N(0, Sigma_s)`` (raw-signal mode); otherwise ``N(mu_s, Sigma_s)``
(log-covariance feature mode).  Emission covariances get a fixed diagonal
load ``1e-6 * trace(global covariance) / d``, which makes each M-step the
exact maximizer of a penalized likelihood, so the EM objective can be
checked for monotonicity on every iteration.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from ..data import CovarianceProcess, LogCovSeries, TrialSet
from ..errors import ConfigError, DegenerateState, NumericalError
from ..spd import matrix_exp, unvec_upper

log = logging.getLogger(__name__)

LOAD_EPS = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class HmmModel:
    pi: np.ndarray  # (S,)
    trans: np.ndarray  # (S, S), rows sum to one
    means: np.ndarray  # (S, d)
    covs: np.ndarray  # (S, d, d)
    zero_mean: bool = False
    loglik: float = -np.inf
    history: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0

    @property
    def S(self):
        return self.pi.size

    @property
    def d(self):
        return self.means.shape[1]

    @property
    def n_params(self):
        S, d = self.S, self.d
        per_state = d * (d + 1) // 2 + (0 if self.zero_mean else d)
        return (S - 1) + S * (S - 1) + S * per_state


def as_sequences(data):
    """Accept a LogCovSeries, a TrialSet or a list of 2-d arrays."""
    if isinstance(data, LogCovSeries):
        return [np.asarray(v) for v in data.values]
    if isinstance(data, TrialSet):
        return [tr.samples for tr in data]
    seqs = [np.asarray(s, dtype=float) for s in data]
    if any(s.ndim != 2 for s in seqs):
        raise ConfigError("HMM sequences must be 2-d arrays (T, d)")
    return seqs


def emission_logpdf(x, model):
    """``(T, S)`` log densities of every observation under every state."""
    T, d = x.shape
    out = np.empty((T, model.S))
    for s in range(model.S):
        L = np.linalg.cholesky(model.covs[s])
        diff = x if model.zero_mean else x - model.means[s]
        z = solve_triangular(L, diff.T, lower=True)
        out[:, s] = -0.5 * (d * _LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(L)))
    return out


def _forward_backward(logb, pi, A):
    """Scaled forward-backward recursions.

    Returns the sequence log-likelihood, state posteriors ``gamma`` (T, S)
    and expected transition counts summed over time (S, S).
    """
    T, S = logb.shape
    shift = logb.max(axis=1, keepdims=True)
    b = np.exp(logb - shift)
    alpha = np.empty((T, S))
    c = np.empty(T)
    a = pi * b[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * b[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]
    if np.any(c <= 0):
        raise NumericalError("forward recursion underflowed")
    beta = np.empty((T, S))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = A @ (b[t + 1] * beta[t + 1]) / c[t + 1]
    ll = float(np.sum(np.log(c)) + shift.sum())
    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    if T > 1:
        xi = A * (alpha[:-1].T @ (b[1:] * beta[1:] / c[1:, None]))
    else:
        xi = np.zeros((S, S))
    return ll, gamma, xi


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _penalty(model, load):
    # log of the improper prior that turns the diagonal load into a MAP step
    return -0.5 * load * sum(np.trace(np.linalg.inv(c)) for c in model.covs)


def _init_model(seqs, S, rng, zero_mean, load):
    X = np.concatenate(seqs)
    d = X.shape[1]
    glob = np.cov(X.T, bias=True).reshape(d, d) + load * np.eye(d)
    if S == 1 or zero_mean:
        means = np.zeros((S, d)) if zero_mean else np.tile(X.mean(0), (S, 1))
        covs = np.stack([glob * rng.uniform(0.5, 1.5) for _ in range(S)])
        if S > 1 and zero_mean:
            # split the data by windowed energy to get distinct covariances
            idx = rng.choice(X.shape[0], size=S, replace=False)
            for s, i in enumerate(idx):
                lo = max(0, i - 25)
                seg = X[lo : lo + 50]
                covs[s] = seg.T @ seg / len(seg) + glob * 0.1
    else:
        means = X[rng.choice(X.shape[0], size=S, replace=False)].copy()
        covs = np.stack([glob.copy() for _ in range(S)])
    trans = np.full((S, S), 0.1 / max(S - 1, 1)) + np.eye(S) * (0.9 - 0.1 / max(S - 1, 1))
    if S == 1:
        trans = np.ones((1, 1))
    return HmmModel(np.full(S, 1.0 / S), trans, means, covs, zero_mean)


def _em(seqs, model, load, tol, max_iter):
    d = model.d
    S = model.S
    prev = -np.inf
    history = []
    for it in range(max_iter):
        ll = 0.0
        g0 = np.zeros(S)
        xi_sum = np.zeros((S, S))
        w = np.zeros(S)
        wx = np.zeros((S, d))
        wxx = np.zeros((S, d, d))
        for x in seqs:
            l, gamma, xi = _forward_backward(emission_logpdf(x, model), model.pi, model.trans)
            ll += l
            g0 += gamma[0]
            xi_sum += xi
            w += gamma.sum(0)
            wx += gamma.T @ x
            for k in range(S):
                wxx[k] += (gamma[:, k, None] * x).T @ x
        obj = ll + _penalty(model, load)
        history.append((ll, obj))
        if obj < prev - 1e-9 * abs(prev):
            raise NumericalError(f"EM objective decreased at iteration {it}: {prev} -> {obj}")
        if it > 0 and (obj - prev) <= tol * abs(prev):
            model.loglik, model.history, model.converged, model.n_iter = ll, history, True, it
            return model
        prev = obj
        if np.any(w < d + 1):
            raise DegenerateState(
                f"state responsibility mass {w.min():.2f} is below d+1={d + 1} samples"
            )
        model.pi = g0 / g0.sum()
        rows = xi_sum.sum(1, keepdims=True)
        model.trans = np.where(rows > 0, xi_sum / np.where(rows > 0, rows, 1.0), 1.0 / S)
        if model.zero_mean:
            model.covs = (wxx + load * np.eye(d)) / w[:, None, None]
        else:
            model.means = wx / w[:, None]
            scatter = wxx - w[:, None, None] * np.einsum("si,sj->sij", model.means, model.means)
            model.covs = (scatter + load * np.eye(d)) / w[:, None, None]
        model.covs = 0.5 * (model.covs + np.swapaxes(model.covs, 1, 2))
    model.loglik, model.history, model.converged, model.n_iter = ll, history, False, max_iter
    return model


def hmm_fit(data, S, rng, n_restarts=5, tol=1e-6, max_iter=500, zero_mean=False):
    """Baum-Welch with random restarts; the best final likelihood wins.

    Restarts that hit a degenerate state are discarded.  Raises
    :class:`DegenerateState` when every restart degenerates.
    """
    if S < 1:
        raise ConfigError("need at least one state")
    seqs = as_sequences(data)
    X = np.concatenate(seqs)
    d = X.shape[1]
    glob = np.cov(X.T, bias=True).reshape(d, d)
    if zero_mean:
        glob = X.T @ X / X.shape[0]
    load = LOAD_EPS * max(float(np.trace(glob)), 1e-300) / d
    best = None
    failures = 0
    for _ in range(max(1, n_restarts) if S > 1 else 1):
        init = _init_model(seqs, S, rng, zero_mean, load)
        try:
            model = _em(seqs, init, load, tol, max_iter)
        except DegenerateState:
            failures += 1
            continue
        if best is None or model.loglik > best.loglik:
            best = model
    if best is None:
        raise DegenerateState(f"all {failures} restarts degenerated with S={S}")
    return best


def viterbi(x, model):
    """Most likely state path of one sequence and its joint log-probability."""
    logb = emission_logpdf(np.asarray(x, dtype=float), model)
    T, S = logb.shape
    log_A = _log(model.trans)
    delta = _log(model.pi) + logb[0]
    back = np.zeros((T, S), dtype=int)
    for t in range(1, T):
        cand = delta[:, None] + log_A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(S)] + logb[t]
    path = np.empty(T, dtype=int)
    path[-1] = int(np.argmax(delta))
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta.max())


def path_logprob(x, path, model):
    logb = emission_logpdf(np.asarray(x, dtype=float), model)
    log_A = _log(model.trans)
    lp = _log(model.pi)[path[0]] + logb[0, path[0]]
    for t in range(1, len(path)):
        lp += log_A[path[t - 1], path[t]] + logb[t, path[t]]
    return float(lp)


def hmm_reconstruct(model, data, times=None):
    """Viterbi-decoded covariance process of every sequence.

    Feature mode maps each state's mean log-covariance vector back to a
    covariance; raw mode uses the state emission covariance directly.
    """
    seqs = as_sequences(data)
    if times is None:
        times = data.time_index if isinstance(data, LogCovSeries) else np.arange(seqs[0].shape[0], dtype=float)
    if model.zero_mean:
        state_cov = model.covs
    else:
        state_cov = matrix_exp(unvec_upper(model.means))
    return [CovarianceProcess(state_cov[viterbi(x, model)[0]], times) for x in seqs]


def hmm_state_proportions(model, data, labels):
    """Fraction of Viterbi time steps per state, per condition label."""
    seqs = as_sequences(data)
    if len(labels) != len(seqs):
        raise ConfigError("one label per sequence required")
    counts = {}
    for x, lab in zip(seqs, labels):
        path, _ = viterbi(x, model)
        counts.setdefault(lab, np.zeros(model.S))
        counts[lab] += np.bincount(path, minlength=model.S)
    return {lab: c / c.sum() for lab, c in counts.items()}


def aic(model):
    return 2.0 * model.n_params - 2.0 * model.loglik


def hmm_elbow(data, S_range, rng, skip_degenerate=False, **fit_kw):
    """AIC of the best fit for every state count in ``S_range``.

    Fit errors propagate unless ``skip_degenerate`` is set, in which case a
    state count whose every restart degenerates scores ``inf``.
    """
    S_range = list(S_range)
    if not S_range:
        raise ConfigError("empty state range")
    out = {}
    for S in S_range:
        try:
            out[S] = aic(hmm_fit(data, S, rng, **fit_kw))
        except DegenerateState:
            if not skip_degenerate:
                raise
            out[S] = math.inf
    return out


def hmm_select_states(data, rng, S_max=10, **fit_kw):
    """Grow the state count until the fit degenerates or fails to converge.

    Returns the last model that converged.
    """
    best = hmm_fit(data, 1, rng, **fit_kw)
    for S in range(2, S_max + 1):
        try:
            model = hmm_fit(data, S, rng, **fit_kw)
        except DegenerateState:
            break
        if not model.converged:
            break
        best = model
    return best
