"""Posterior-contraction and estimator-comparison harnesses.

Every replicate draws its own generator from ``SeedSequence([master_seed,
*coordinates])`` so results do not depend on execution order.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import hmm_reconstruct, hmm_select_states, sw_pca_fit, sw_pca_reconstruct
from .data import LogCovSeries
from .errors import ConfigError, DimMismatch
from .kernels import KernelSpec, LengthScalePrior, gram_matrix
from .sampler import MCMCSettings, ModelConfig, gibbs_run, posterior_logcov_draws, reconstruct_covariance
from .simulate import DynamicsScenario, gen_dataset, gen_dynamics, make_ground_truth
from .sliding_window import TaperSpec, to_log_cov_series
from .spd import log_euclidean_distance

log = logging.getLogger(__name__)

METHODS = ("SW-PCA", "HMM", "LFGP")


def replicate_rng(master_seed, *coords):
    ss = np.random.SeedSequence([int(master_seed), *[int(c) for c in coords]])
    return np.random.default_rng(ss), int(ss.generate_state(1)[0])


def reconstruction_loss(est, truth):
    """Time-averaged Log-Euclidean distance between two covariance processes."""
    if len(est) != len(truth) or est.p != truth.p:
        raise DimMismatch(f"processes differ: {len(est)}x{est.p} vs {len(truth)}x{truth.p}")
    return float(np.mean(log_euclidean_distance(est.matrices, truth.matrices)))


# ---------------------------------------------------------------------------
# posterior contraction


@dataclass
class ContractionSettings:
    cells: list = field(default_factory=lambda: [(1, 25), (10, 25), (1, 50), (10, 50)])
    p: int = 5
    r: int = 2
    n_reps: int = 3
    noise_sd: float = 1.0
    truth_length_scale: float = 0.2
    max_entry: float = 2.0
    mcmc: MCMCSettings = MCMCSettings(n_draws=2000, n_burn=500, thin=10)
    seed: int = 0


def smooth_truth(rng, p, r, length_scale, max_entry, resolution=1001):
    """Two-factor log-covariance function on [0, 1], tabulated finely."""
    s = np.linspace(0.0, 1.0, resolution)
    K = gram_matrix(KernelSpec("squared_exponential", length_scale), s, jitter=1e-9)
    U = rng.standard_normal((r, resolution)) @ np.linalg.cholesky(K).T
    A = rng.standard_normal((r, p * (p + 1) // 2))
    W = U.T @ A
    return s, W * (max_entry / np.abs(W).max())


def contraction_cell(truth_s, truth_w, n, t, settings, rng, seed):
    grid01 = np.linspace(0.0, 1.0, t)
    w = np.column_stack([np.interp(grid01, truth_s, truth_w[:, c]) for c in range(truth_w.shape[1])])
    values = w[None] + settings.noise_sd * rng.standard_normal((n, t, w.shape[1]))
    Y = LogCovSeries(values, np.arange(t, dtype=float))
    cfg = ModelConfig(
        r=settings.r,
        ls_prior=LengthScalePrior.from_mode(settings.truth_length_scale * (t - 1)),
        mcmc=replace(settings.mcmc, seed=seed),
    )
    draws = gibbs_run(Y, cfg)
    sq, var = 0.0, 0.0
    for i in range(n):
        rec = posterior_logcov_draws(draws, i)
        sq += np.mean((np.median(rec, axis=0) - w) ** 2)
        var += np.mean(np.var(rec, axis=0, ddof=1)) if len(draws) > 1 else 0.0
    return sq / n, var / n


def _map(fn, jobs, workers):
    # results come back in job order, so output does not depend on workers
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def contraction_experiment(settings=None, workers=1):
    """MSE of the posterior-median log-covariance and posterior variance per cell.

    Returns a list of row dicts (one per cell and replicate) and a summary
    dict keyed by ``(n, t)`` with replicate means.
    """
    settings = settings or ContractionSettings()
    if not settings.cells:
        raise ConfigError("no (n, t) cells given")
    truths = []
    for rep in range(settings.n_reps):
        rng, _ = replicate_rng(settings.seed, 0, rep)
        truths.append(smooth_truth(rng, settings.p, settings.r, settings.truth_length_scale, settings.max_entry))

    def run(job):
        rep, ci = job
        n, t = settings.cells[ci]
        crng, cseed = replicate_rng(settings.seed, 1, rep, ci)
        t0 = time.perf_counter()
        mse, var = contraction_cell(*truths[rep], int(n), int(t), settings, crng, cseed)
        log.info("contraction n=%d t=%d rep=%d mse=%.4f (%.1fs)", n, t, rep, mse, time.perf_counter() - t0)
        return {"n": int(n), "t": int(t), "replicate": rep, "mse": mse, "post_var": var, "seed": cseed}

    jobs = [(rep, ci) for rep in range(settings.n_reps) for ci in range(len(settings.cells))]
    rows = _map(run, jobs, workers)
    summary = {}
    for n, t in settings.cells:
        sel = [r for r in rows if r["n"] == n and r["t"] == t]
        summary[(int(n), int(t))] = {
            "mse": float(np.mean([r["mse"] for r in sel])),
            "post_var": float(np.mean([r["post_var"] for r in sel])),
            "n_reps": len(sel),
        }
    return rows, summary


# ---------------------------------------------------------------------------
# estimator comparison


@dataclass
class ComparisonSettings:
    scenarios: tuple = ("square_wave", "piecewise_linear", "cubic_spline")
    n_reps: int = 20
    p: int = 10
    T: int = 1000
    r_true: int = 4
    n_knots: int = 6
    window_len: int = 50
    tau: float = 0.5
    lfgp_window_len: int | None = 44  # None: same window as SW-PCA
    pca_k: int = 4
    lfgp_r: int = 4
    lfgp_stride: int = 10
    ls_mode: float = 50.0
    ls_shape: float = 10.0
    hmm_max_states: int = 10
    hmm_restarts: int = 5
    mcmc: MCMCSettings = MCMCSettings(n_draws=2000, n_burn=500, thin=10)
    methods: tuple = METHODS
    seed: int = 0


def comparison_replicate(kind, settings, rng, seed):
    """Losses of every method on one simulated data set.

    Losses are evaluated at every ``lfgp_stride``-th window center, the grid
    the LFGP model is fitted on; the baselines use all windows.
    """
    scen = DynamicsScenario(kind, r_true=settings.r_true, T=settings.T, n_knots=settings.n_knots)
    truth = make_ground_truth(gen_dynamics(scen, rng), settings.p, rng)
    trials = gen_dataset(truth, 1, rng)
    Y = to_log_cov_series(trials, TaperSpec(settings.window_len, settings.tau))
    stride = settings.lfgp_stride
    Ys = Y.subsample(stride)
    target = truth.at(Ys.time_index)
    out = {}
    if "SW-PCA" in settings.methods:
        est = sw_pca_reconstruct(Y, sw_pca_fit(Y, settings.pca_k))[0]
        out["SW-PCA"] = _loss_on(est, stride, target)
    if "HMM" in settings.methods:
        model = hmm_select_states(Y, rng, S_max=settings.hmm_max_states, n_restarts=settings.hmm_restarts)
        out["HMM"] = _loss_on(hmm_reconstruct(model, Y)[0], stride, target)
    if "LFGP" in settings.methods:
        if settings.lfgp_window_len not in (None, settings.window_len):
            Ys = _aligned_windows(trials, settings, Ys.time_index)
        cfg = ModelConfig(
            r=settings.lfgp_r,
            ls_prior=LengthScalePrior.from_mode(settings.ls_mode, settings.ls_shape),
            mcmc=replace(settings.mcmc, seed=seed),
        )
        est = reconstruct_covariance(gibbs_run(Ys, cfg))[0]
        out["LFGP"] = reconstruction_loss(est, target)
    return out


def _aligned_windows(trials, settings, centers):
    """LFGP input from shorter windows, restricted to the baseline window centers."""
    if (settings.window_len - settings.lfgp_window_len) % 2:
        raise ConfigError("window_len - lfgp_window_len must be even so window centers line up")
    Y = to_log_cov_series(trials, TaperSpec(settings.lfgp_window_len, settings.tau))
    idx = np.searchsorted(Y.time_index, centers)
    return LogCovSeries(Y.values[:, idx], Y.time_index[idx], list(Y.labels))


def _loss_on(est, stride, target):
    sub = type(est)(est.matrices[::stride], est.times[::stride])
    return reconstruction_loss(sub, target)


def comparison_experiment(settings=None, workers=1):
    """Per-scenario, per-method reconstruction losses over replicates.

    Returns the row list ``(scenario, method, replicate, loss, seed)`` and a
    summary keyed by ``(scenario, method)`` with median, sd and count.
    """
    settings = settings or ComparisonSettings()

    def run(job):
        si, rep = job
        kind = settings.scenarios[si]
        rng, seed = replicate_rng(settings.seed, si, rep)
        t0 = time.perf_counter()
        losses = comparison_replicate(kind, settings, rng, seed)
        log.info("comparison %s rep=%d %s (%.1fs)", kind, rep, losses, time.perf_counter() - t0)
        return [
            {"scenario": kind, "method": m, "replicate": rep, "loss": losses[m], "seed": seed}
            for m in settings.methods
        ]

    jobs = [(si, rep) for si in range(len(settings.scenarios)) for rep in range(settings.n_reps)]
    rows = [row for chunk in _map(run, jobs, workers) for row in chunk]
    return rows, summarize_losses(rows)


def summarize_losses(rows):
    summary = {}
    for row in rows:
        summary.setdefault((row["scenario"], row["method"]), []).append(row["loss"])
    return {
        key: {
            "median": float(np.median(v)),
            "sd": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
            "n_reps": len(v),
        }
        for key, v in summary.items()
    }


def is_strictly_decreasing(values):
    return all(a > b for a, b in zip(values, values[1:])) and not any(math.isnan(v) for v in values)
