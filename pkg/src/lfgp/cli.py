"""Command-line entry point.

Every subcommand reads one TOML config (see :mod:`lfgp.config`), writes its
outputs under ``--out`` and exits with 0 on success, 2 on a configuration
error, 3 on a data error and 4 on a numerical failure.  Outputs are staged
and only moved into place once the command has finished.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import hmm_fit, hmm_reconstruct, hmm_select_states, hmm_state_proportions, sw_pca_fit
from .baselines.hmm import hmm_elbow, viterbi
from .baselines.pca import project
from .config import load_config
from .errors import ConfigError, DataError, LfgpError, NumericalError
from .evaluation import extract_trajectories, separation_curve, separation_score
from .experiments import ComparisonSettings, ContractionSettings, comparison_experiment, contraction_experiment
from .io import OutputDir, load_chain, load_trials, require_path, save_chain, write_csv, write_trials
from .kernels import ms_to_index
from .sampler import (
    MCMCSettings,
    add_factor_horseshoe,
    gibbs_run,
    posterior_logcov_draws,
    posterior_median_logcov,
    variance_explained,
)
from .simulate import DynamicsScenario, gen_dataset, gen_dynamics, gen_two_condition, make_ground_truth
from .sliding_window import to_log_cov_series
from .spd import matrix_exp, n_upper, unvec_upper

log = logging.getLogger("lfgp")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
SIM_RATE_HZ = 1000.0  # sample rate of the bench harness data
COMMANDS = ("estimate", "fit", "addfactor", "simulate", "bench", "separate", "baseline")


# ---------------------------------------------------------------------------
# helpers


def _meta(cfg, command):
    return {"seed": cfg.seed, "config_hash": cfg.hash(), "command": command, "version": __version__}


def _upper_names(p, prefix):
    return [f"{prefix}{i + 1}_{j + 1}" for i in range(p) for j in range(i, p)]


def _trials(cfg):
    return load_trials(require_path(cfg.io.data, "[io] data"))


def _logcov(cfg, trials):
    est = cfg.estimator
    return to_log_cov_series(trials, cfg.taper(), center=est.center, jitter=est.jitter)


def _check_conditions(labels):
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    few = [lab for lab, c in counts.items() if c < 2]
    if few:
        raise DataError(f"conditions {few} have fewer than 2 trials; trajectories need at least 2")
    return list(counts)


def _chain_path(cfg, out):
    return Path(cfg.io.chain) if cfg.io.chain else Path(out) / "chain.bin"


def _cov_rows(trial_ids, labels, times, logcov):
    """Rows ``trial, label, t, upper-triangle covariance entries``."""
    cov = matrix_exp(unvec_upper(logcov))
    iu = np.triu_indices(cov.shape[-1])
    for i, lab in zip(trial_ids, labels):
        for k, t in enumerate(times):
            yield [i, lab, t, *cov[i, k][iu]]


def _band_rows(prefix, paths, times):
    """Median and central 95% band of ``paths`` (d, T_w, r) per time and factor."""
    lo, med, hi = np.percentile(paths, [2.5, 50.0, 97.5], axis=0)
    for k, t in enumerate(times):
        for j in range(paths.shape[2]):
            yield [*prefix, t, j + 1, med[k, j], lo[k, j], hi[k, j]]


def _write_separation(od, cfg, draws, labels, meta):
    conds = _check_conditions(labels)
    trajs = extract_trajectories(draws, labels)
    rows = []
    for tr in trajs:
        rows.extend(_band_rows([tr.condition], tr.paths(), draws.time_index))
    write_csv(od.path("trajectories.csv"), ["condition", "t", "factor", "median", "lo95", "hi95"], rows, meta)
    # trajectory curves: posterior mean path per condition
    curves = []
    for tr in trajs:
        mean = tr.paths().mean(0)
        for k, t in enumerate(draws.time_index):
            curves.append([tr.condition, t, *mean[k]])
    write_csv(
        od.path("fig4_trajectory_curves.csv"),
        ["condition", "t"] + [f"factor{j + 1}" for j in range(draws.r)],
        curves,
        meta,
    )
    report = []
    if len(conds) == 2:
        ev = cfg.evaluation
        for clf in ev.classifiers:
            rep = separation_score(trajs, clf, ev.folds, np.random.default_rng(cfg.seed), ev.k, ev.l2)
            report.append([clf, rep.accuracy_mean, rep.accuracy_sd, rep.folds, rep.n_draws, trajs[0].condition, trajs[1].condition])
        curve = separation_curve(trajs)
        write_csv(
            od.path("fig4_separation_curve.csv"), ["t", "separation"], zip(draws.time_index, curve), meta
        )
    else:
        log.info("separation scores need exactly two conditions, found %d", len(conds))
    write_csv(
        od.path("separation.csv"),
        ["classifier", "accuracy_mean", "accuracy_sd", "folds", "n_draws", "condition_a", "condition_b"],
        report,
        meta,
    )


# ---------------------------------------------------------------------------
# subcommands


def cmd_estimate(cfg, od, threads):
    trials = _trials(cfg)
    Y = _logcov(cfg, trials)
    meta = _meta(cfg, "estimate")
    cols = ["trial", "label", "t"] + [f"y{c + 1}" for c in range(Y.q)]
    rows = ([i, Y.labels[i], t, *Y.values[i, k]] for i in range(Y.n) for k, t in enumerate(Y.time_index))
    write_csv(od.path("logcov.csv"), cols, rows, meta)
    cov = _cov_rows(range(Y.n), Y.labels, Y.time_index, Y.values)
    write_csv(od.path("sw_covariance.csv"), ["trial", "label", "t"] + _upper_names(Y.p, "k"), cov, meta)


def run_pipeline(cfg, od, threads=1):
    """Sliding window, LFGP fit, trajectories, separation and plot data."""
    trials = _trials(cfg)
    labels = [tr.label for tr in trials]
    _check_conditions(labels)
    Y = _logcov(cfg, trials).subsample(cfg.model.stride)
    meta = _meta(cfg, "fit")
    draws = gibbs_run(Y, cfg.model_config(sample_rate_hz=trials.sample_rate_hz))
    save_chain(od.path("chain.bin"), draws, cfg.chain_hash())

    med = posterior_median_logcov(draws)
    cov_cols = ["trial", "label", "t"] + _upper_names(Y.p, "k")
    write_csv(od.path("posterior_median_covariance.csv"), cov_cols, _cov_rows(range(Y.n), labels, Y.time_index, med), meta)

    rows = []
    for i in range(Y.n):
        rows.extend(_band_rows([i, labels[i]], draws.F[:, i], Y.time_index))
    write_csv(od.path("fig3_factor_paths.csv"), ["trial", "label", "t", "factor", "median", "lo95", "hi95"], rows, meta)

    # heatmap grid: first trial at six evenly spaced window centers
    pick = np.unique(np.linspace(0, Y.T_w - 1, 6).round().astype(int))
    grid = []
    cov0 = matrix_exp(unvec_upper(med[0, pick]))
    for k, idx in enumerate(pick):
        for a in range(Y.p):
            for b in range(Y.p):
                grid.append([Y.time_index[idx], a + 1, b + 1, cov0[k, a, b]])
    write_csv(od.path("fig2_covariance_grid.csv"), ["t", "row", "col", "value"], grid, meta)

    # reconstructed log-covariance bands for the first trial
    rec = posterior_logcov_draws(draws, 0)
    write_csv(
        od.path("fig2_logcov_bands.csv"),
        ["trial", "label", "t", "component", "median", "lo95", "hi95"],
        _band_rows([0, labels[0]], rec, Y.time_index),
        meta,
    )

    summary = [
        ["n", Y.n],
        ["T_w", Y.T_w],
        ["q", Y.q],
        ["r", draws.r],
        ["draws", len(draws)],
        ["variance_explained", variance_explained(Y, draws)],
        ["sigma2_median", float(np.median(draws.sigma2))],
    ]
    for j in range(draws.r):
        summary.append([f"theta{j + 1}_median", float(np.median(draws.theta[:, j]))])
        summary.append([f"theta{j + 1}_accept_rate", float(draws.accept_rate_theta[j])])
    write_csv(od.path("fit_summary.csv"), ["key", "value"], summary, meta)
    _write_separation(od, cfg, draws, labels, meta)
    return draws


def cmd_fit(cfg, od, threads):
    run_pipeline(cfg, od, threads)


def cmd_separate(cfg, od, threads):
    trials = _trials(cfg)
    draws, _ = load_chain(_chain_path(cfg, od.final), cfg.chain_hash())
    labels = [tr.label for tr in trials]
    if len(labels) != draws.n:
        raise DataError(f"chain has {draws.n} trials, data directory has {len(labels)}")
    _write_separation(od, cfg, draws, labels, _meta(cfg, "separate"))


def cmd_addfactor(cfg, od, threads):
    trials = _trials(cfg)
    Y = _logcov(cfg, trials).subsample(cfg.model.stride)
    draws, _ = load_chain(_chain_path(cfg, od.final), cfg.chain_hash())
    if draws.n != Y.n or draws.T_w != Y.T_w:
        raise DataError("chain dimensions do not match the data")
    mc = cfg.model_config(sample_rate_hz=trials.sample_rate_hz)
    ext = add_factor_horseshoe(Y, draws, mc, seed=mc.mcmc.seed + 1)
    save_chain(od.path("chain_horseshoe.bin"), ext, cfg.chain_hash())
    meta = _meta(cfg, "addfactor")
    rows = []
    for f in range(ext.r):
        lo, med, hi = np.percentile(ext.B[:, f], [2.5, 50.0, 97.5], axis=0)
        for c in range(ext.q):
            rows.append([f + 1, c + 1, int(f in ext.horseshoe_factors), med[c], lo[c], hi[c], int(lo[c] > 0 or hi[c] < 0)])
    write_csv(
        od.path("horseshoe_loadings.csv"),
        ["factor", "component", "horseshoe", "median", "lo95", "hi95", "excludes_zero"],
        rows,
        meta,
    )
    write_csv(
        od.path("addfactor_summary.csv"),
        ["key", "value"],
        [["variance_explained_before", variance_explained(Y, draws)], ["variance_explained_after", variance_explained(Y, ext)]],
        meta,
    )


def cmd_simulate(cfg, od, threads):
    sim = cfg.simulate
    rng = np.random.default_rng(cfg.seed)
    meta = _meta(cfg, "simulate")
    rate = cfg.io.sample_rate_hz
    if sim.design == "two_condition":
        if len(sim.labels) != 2:
            raise ConfigError("[simulate] labels needs two entries for the two_condition design")
        trials, truths = gen_two_condition(
            rng, n_per=sim.n, labels=tuple(sim.labels), p=sim.p, T=sim.T, r_true=sim.r_true, effect=sim.effect, n_knots=sim.n_knots
        )
        trials = [replace(tr, sample_rate_hz=rate) for tr in trials]
        named = list(zip(sim.labels, truths))
    else:
        scen = DynamicsScenario(sim.scenario, r_true=sim.r_true, T=sim.T, n_knots=sim.n_knots)
        truth = make_ground_truth(gen_dynamics(scen, rng), sim.p, rng)
        label = sim.labels[0] if sim.labels else "A"
        trials = list(gen_dataset(truth, sim.n, rng, sample_rate_hz=rate, label=label))
        named = [(label, truth)]
    write_trials(od.path("trials"), trials, meta)
    rows = []
    for label, truth in named:
        W = truth.logcov
        rows.extend([label, t, *W[t]] for t in range(W.shape[0]))
    write_csv(od.path("truth_logcov.csv"), ["label", "t"] + [f"y{c + 1}" for c in range(n_upper(sim.p))], rows, meta)


def cmd_bench(cfg, od, threads):
    ex = cfg.experiment
    meta = _meta(cfg, "bench")
    mcmc = MCMCSettings(ex.n_draws, ex.n_burn, ex.thin)
    if ex.harness in ("contraction", "both"):
        settings = ContractionSettings(
            cells=[tuple(c) for c in ex.cells], n_reps=ex.contraction_reps, noise_sd=ex.contraction_noise_sd, mcmc=mcmc, seed=cfg.seed
        )
        rows, summary = contraction_experiment(settings, workers=threads)
        write_csv(
            od.path("contraction.csv"),
            ["n", "t", "replicate", "mse", "post_var", "seed"],
            ([r["n"], r["t"], r["replicate"], r["mse"], r["post_var"], r["seed"]] for r in rows),
            meta,
        )
        write_csv(
            od.path("contraction_summary.csv"),
            ["n", "t", "mse", "post_var", "n_reps"],
            ([n, t, v["mse"], v["post_var"], v["n_reps"]] for (n, t), v in summary.items()),
            meta,
        )
    if ex.harness in ("comparison", "both"):
        settings = ComparisonSettings(
            scenarios=tuple(ex.scenarios),
            n_reps=ex.n_reps,
            p=ex.p,
            T=ex.T,
            r_true=ex.r_true,
            n_knots=ex.n_knots,
            window_len=cfg.estimator.window_len,
            tau=cfg.estimator.tau,
            pca_k=ex.pca_k,
            lfgp_r=ex.lfgp_r,
            lfgp_stride=ex.lfgp_stride,
            lfgp_window_len=ex.lfgp_window_len,
            ls_mode=ms_to_index(ex.ls_mode_ms, SIM_RATE_HZ),
            hmm_max_states=ex.hmm_max_states,
            hmm_restarts=ex.hmm_restarts,
            mcmc=mcmc,
            seed=cfg.seed,
        )
        rows, summary = comparison_experiment(settings, workers=threads)
        write_csv(
            od.path("comparison.csv"),
            ["scenario", "method", "replicate", "loss", "seed"],
            ([r["scenario"], r["method"], r["replicate"], r["loss"], r["seed"]] for r in rows),
            meta,
        )
        write_csv(
            od.path("comparison_summary.csv"),
            ["scenario", "method", "median", "sd", "n_reps"],
            ([s, m, v["median"], v["sd"], v["n_reps"]] for (s, m), v in summary.items()),
            meta,
        )


def cmd_baseline(cfg, od, threads):
    bl = cfg.baseline
    trials = _trials(cfg)
    Y = _logcov(cfg, trials)
    labels = [tr.label for tr in trials]
    meta = _meta(cfg, "baseline")
    rng = np.random.default_rng(cfg.seed)
    cov_cols = ["trial", "label", "t"] + _upper_names(Y.p, "k")
    fig5 = [["SW", k, t, *v] for k, t, v in _first_trial_rows(Y.time_index, Y.values[0])]
    if "pca" in bl.methods:
        basis = sw_pca_fit(Y, bl.pca_k)
        rec = project(Y.values, basis)
        write_csv(od.path("pca_covariance.csv"), cov_cols, _cov_rows(range(Y.n), labels, Y.time_index, rec), meta)
        write_csv(
            od.path("pca_summary.csv"), ["key", "value"], [["k", basis.k], ["explained_fraction", basis.explained_fraction]], meta
        )
        fig5 += [["SW-PCA", k, t, *v] for k, t, v in _first_trial_rows(Y.time_index, rec[0])]
    if "hmm" in bl.methods:
        data = trials if bl.hmm_raw else Y
        kw = {"n_restarts": bl.hmm_restarts, "zero_mean": bl.hmm_raw}
        if bl.hmm_states > 0:
            model = hmm_fit(data, bl.hmm_states, rng, **kw)
        else:
            model = hmm_select_states(data, rng, S_max=bl.hmm_max_states, **kw)
        props = hmm_state_proportions(model, data, labels)
        write_csv(
            od.path("hmm_proportions.csv"),
            ["label"] + [f"state{s + 1}" for s in range(model.S)],
            ([lab, *v] for lab, v in props.items()),
            meta,
        )
        seqs = [tr.samples for tr in trials] if bl.hmm_raw else list(Y.values)
        times = np.arange(trials.T, dtype=float) if bl.hmm_raw else Y.time_index
        paths = [viterbi(x, model)[0] for x in seqs]
        write_csv(
            od.path("hmm_states.csv"),
            ["trial", "label", "t", "state"],
            ([i, labels[i], t, s + 1] for i, path in enumerate(paths) for t, s in zip(times, path)),
            meta,
        )
        hist = [[k, ll, obj] for k, (ll, obj) in enumerate(model.history)]
        write_csv(od.path("hmm_em_trace.csv"), ["iteration", "loglik", "objective"], hist, meta)
        if not bl.hmm_raw:
            procs = hmm_reconstruct(model, Y)
            iu = np.triu_indices(Y.p)
            write_csv(
                od.path("hmm_covariance.csv"),
                cov_cols,
                ([i, labels[i], t, *procs[i].matrices[k][iu]] for i in range(Y.n) for k, t in enumerate(Y.time_index)),
                meta,
            )
            logm = model.means[paths[0]]
            fig5 += [["HMM", k, t, *v] for k, t, v in _first_trial_rows(Y.time_index, logm)]
        if bl.elbow_max_states > 0:
            scores = hmm_elbow(data, range(1, bl.elbow_max_states + 1), rng, skip_degenerate=True, **kw)
            write_csv(od.path("hmm_aic.csv"), ["states", "aic"], scores.items(), meta)
    write_csv(od.path("fig5_estimates.csv"), ["method", "index", "t"] + _upper_names(Y.p, "k"), fig5, meta)


def _first_trial_rows(times, logcov):
    cov = matrix_exp(unvec_upper(logcov))
    iu = np.triu_indices(cov.shape[-1])
    for k, t in enumerate(times):
        yield k, t, cov[k][iu]


HANDLERS = {
    "estimate": cmd_estimate,
    "fit": cmd_fit,
    "addfactor": cmd_addfactor,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "separate": cmd_separate,
    "baseline": cmd_baseline,
}


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="lfgp", description="Latent factor GP models of dynamic covariance.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "estimate": "sliding-window log-covariance series only",
        "fit": "full pipeline: windows, LFGP fit, trajectories, separation, plot data",
        "addfactor": "add one horseshoe factor to an existing chain",
        "simulate": "write synthetic trials",
        "bench": "posterior contraction and estimator comparison harnesses",
        "separate": "trajectory separation from an existing chain",
        "baseline": "SW-PCA and HMM baselines",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="master seed, overrides [io] seed")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--threads", type=int, default=1, help="parallel replicates (bench)")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config, args.seed)
        with OutputDir(args.out) as od:
            HANDLERS[args.command](cfg, od, args.threads)
    except ConfigError as exc:
        print(f"lfgp: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"lfgp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"lfgp: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LfgpError as exc:  # pragma: no cover - every error has a category
        print(f"lfgp: error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
