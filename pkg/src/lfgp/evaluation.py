"""Latent trajectories per condition and how well their posteriors separate."""

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit, log1p

from .errors import (
    ConfigError,
    DataError,
    EmptyTrain,
    MissingLabel,
    NoConvergence,
    NoSecondClass,
    TooFewDraws,
)

CLASSIFIERS = ("knn", "logistic")


@dataclass
class LatentTrajectory:
    condition: str
    draws: np.ndarray  # (d, T_w * r), row k flattens a (T_w, r) path
    T_w: int
    r: int

    def paths(self):
        return self.draws.reshape(-1, self.T_w, self.r)


@dataclass
class SeparationReport:
    classifier: str
    accuracy_mean: float
    accuracy_sd: float
    folds: int
    n_draws: int = 0

    def as_row(self):
        return {
            "classifier": self.classifier,
            "accuracy_mean": self.accuracy_mean,
            "accuracy_sd": self.accuracy_sd,
            "folds": self.folds,
            "n_draws": self.n_draws,
        }


def extract_trajectories(draws, labels):
    """Per-draw median over each condition's trials of the factor paths.

    ``labels`` gives one condition tag per trial in chain order.  Conditions
    are returned in order of first appearance.
    """
    labels = list(labels)
    if len(labels) != draws.n or any(lab is None for lab in labels):
        raise MissingLabel(f"need one label per trial ({draws.n}), got {len(labels)}")
    out = []
    for cond in dict.fromkeys(labels):
        idx = [i for i, lab in enumerate(labels) if lab == cond]
        if len(idx) < 2:
            raise DataError(f"condition {cond!r} has fewer than 2 trials")
        med = np.median(draws.F[:, idx], axis=1)
        out.append(LatentTrajectory(str(cond), med.reshape(len(draws), -1), draws.T_w, draws.r))
    return out


def separation_curve(trajs):
    """Per-time distance between two conditions' posterior mean paths, in pooled sd units."""
    a, b = (t.paths() for t in trajs)
    diff = np.linalg.norm(a.mean(0) - b.mean(0), axis=1)
    pooled = np.sqrt(0.5 * (a.var(0).sum(1) + b.var(0).sum(1)))
    return diff / np.maximum(pooled, 1e-300)


# ---------------------------------------------------------------------------
# classifiers


def knn_classify(train_X, train_y, test_X, k=5):
    """Euclidean k-nearest-neighbour majority vote.

    Ties go to the tied label whose closest member is nearest.  Neighbors at
    equal distance are ordered by label, so the result does not depend on
    the order of the training set.
    """
    train_X = np.asarray(train_X, dtype=float)
    test_X = np.asarray(test_X, dtype=float)
    train_y = np.asarray(train_y)
    if train_X.shape[0] == 0:
        raise EmptyTrain("empty training set")
    if not 1 <= k <= train_X.shape[0]:
        raise ConfigError(f"k={k} must lie in [1, {train_X.shape[0]}]")
    classes, y_idx = np.unique(train_y, return_inverse=True)
    d2 = (
        np.sum(test_X**2, axis=1)[:, None]
        - 2.0 * test_X @ train_X.T
        + np.sum(train_X**2, axis=1)[None, :]
    )
    d2 = np.maximum(d2, 0.0)
    pred = np.empty(test_X.shape[0], dtype=classes.dtype)
    for i in range(test_X.shape[0]):
        order = np.lexsort((y_idx, d2[i]))[:k]
        counts = np.bincount(y_idx[order], minlength=classes.size)
        tied = np.flatnonzero(counts == counts.max())
        if tied.size == 1:
            pred[i] = classes[tied[0]]
        else:
            first = next(c for c in y_idx[order] if c in tied)
            pred[i] = classes[first]
    return pred


def _design(X):
    X = np.asarray(X, dtype=float)
    return np.column_stack([np.ones(X.shape[0]), X])


def logistic_objective(w, X1, y, l2):
    """Penalized negative log-likelihood and its gradient (intercept unpenalized).

    ``X1`` already carries the leading column of ones.
    """
    z = X1 @ w
    # log(1 + exp(z)) - y z, evaluated stably
    nll = np.sum(np.maximum(z, 0.0) + log1p(np.exp(-np.abs(z))) - y * z)
    pen = 0.5 * l2 * np.sum(w[1:] ** 2)
    grad = X1.T @ (expit(z) - y)
    grad[1:] += l2 * w[1:]
    return float(nll + pen), grad


def _check_finite_optimum(w, X1, y, l2):
    # without a penalty, perfectly separated data has no finite maximizer; the
    # gradient still vanishes as the weights diverge, so test the margins
    if l2 == 0 and np.all((2.0 * y - 1.0) * (X1 @ w) > 0):
        raise NoConvergence("training data are separable and l2=0: no finite maximum likelihood fit")
    return w


def logistic_fit(X, y, l2=1.0, tol=1e-8, max_iter=100):
    """Damped Newton iterations until the gradient norm drops below ``tol``."""
    X1 = _design(X)
    y = np.asarray(y, dtype=float)
    w = np.zeros(X1.shape[1])
    ridge = np.full(X1.shape[1], l2)
    ridge[0] = 0.0
    f, g = logistic_objective(w, X1, y, l2)
    for _ in range(max_iter):
        if np.linalg.norm(g) < tol:
            return _check_finite_optimum(w, X1, y, l2)
        s = expit(X1 @ w)
        H = (X1 * (s * (1.0 - s))[:, None]).T @ X1 + np.diag(ridge)
        H[np.diag_indices_from(H)] += 1e-12 * max(1.0, np.trace(H) / H.shape[0])
        step = np.linalg.solve(H, g)
        t = 1.0
        while True:
            w_new = w - t * step
            f_new, g_new = logistic_objective(w_new, X1, y, l2)
            if f_new <= f - 1e-4 * t * (g @ step) or t < 1e-10:
                break
            # near the optimum f stops resolving progress; fall back on |grad|
            if f_new <= f + 1e-12 * abs(f) and np.linalg.norm(g_new) < np.linalg.norm(g):
                break
            t *= 0.5
        w, f, g = w_new, f_new, g_new
    if np.linalg.norm(g) < tol:
        return _check_finite_optimum(w, X1, y, l2)
    raise NoConvergence(f"Newton iterations stopped with gradient norm {np.linalg.norm(g):.3e}")


def logistic_fit_predict(train_X, train_y, test_X, l2=1.0):
    """Fit L2-penalized logistic regression; return (labels, P(second class))."""
    train_y = np.asarray(train_y)
    classes = np.unique(train_y)
    if classes.size < 2:
        raise NoSecondClass("training labels contain a single class")
    if classes.size > 2:
        raise ConfigError("logistic regression here is binary")
    w = logistic_fit(train_X, (train_y == classes[1]).astype(float), l2)
    prob = expit(_design(test_X) @ w)
    return np.where(prob > 0.5, classes[1], classes[0]), prob


# ---------------------------------------------------------------------------
# cross-validated separation


def stratified_folds(y, folds, rng):
    y = np.asarray(y)
    assign = np.empty(y.size, dtype=int)
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        assign[idx] = np.arange(idx.size) % folds
    return assign


def _standardize(train, test):
    mu = train.mean(0)
    sd = train.std(0)
    sd[sd == 0] = 1.0
    return (train - mu) / sd, (test - mu) / sd


def separation_score(trajs, classifier="knn", folds=5, rng=None, k=5, l2=1.0):
    """Stratified k-fold accuracy of telling two conditions' draws apart."""
    if classifier not in CLASSIFIERS:
        raise ConfigError(f"unknown classifier {classifier!r}")
    if len(trajs) != 2:
        raise ConfigError("separation needs exactly two trajectories")
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = trajs
    if min(len(a.draws), len(b.draws)) < folds:
        raise TooFewDraws(f"need at least {folds} draws per condition")
    X = np.vstack([a.draws, b.draws])
    y = np.array([0] * len(a.draws) + [1] * len(b.draws))
    assign = stratified_folds(y, folds, rng)
    acc = []
    for f in range(folds):
        tr, te = assign != f, assign == f
        if classifier == "knn":
            pred = knn_classify(X[tr], y[tr], X[te], k=min(k, int(tr.sum())))
        else:
            xtr, xte = _standardize(X[tr], X[te])
            pred, _ = logistic_fit_predict(xtr, y[tr], xte, l2)
        acc.append(float(np.mean(pred == y[te])))
    return SeparationReport(classifier, float(np.mean(acc)), float(np.std(acc, ddof=1)), folds, len(y))


# ---------------------------------------------------------------------------
# synthetic two-condition experiment


@dataclass
class SeparationSettings:
    """Two-condition analog of the latent-separation analysis.

    The defaults keep the factor grid coarse (about a dozen points) because
    two random halves of one condition already have distinguishable
    posterior medians once the flattened trajectory has many dimensions.
    """

    n_per: int = 20
    p: int = 3
    T: int = 300
    r_true: int = 2
    n_knots: int = 2
    effect: float = 1.0
    window_len: int = 30
    tau: float = 0.5
    stride: int = 25
    r: int = 2
    ls_mode: float = 100.0  # sample units, like the window-center grid
    ls_shape: float = 10.0
    mcmc: object = None
    classifiers: tuple = CLASSIFIERS
    k: int = 5
    folds: int = 5
    l2: float = 1.0
    seed: int = 0

    def model_config(self, seed):
        from .kernels import LengthScalePrior
        from .sampler import MCMCSettings, ModelConfig

        mcmc = self.mcmc or MCMCSettings(n_draws=1500, n_burn=500, thin=5)
        return ModelConfig(
            r=self.r,
            ls_prior=LengthScalePrior.from_mode(self.ls_mode, self.ls_shape),
            mcmc=replace(mcmc, seed=seed),
        )


def _fit_and_score(trials, labels, settings, seed):
    from .sampler import gibbs_run
    from .sliding_window import TaperSpec, to_log_cov_series

    Y = to_log_cov_series(trials, TaperSpec(settings.window_len, settings.tau)).subsample(settings.stride)
    draws = gibbs_run(Y, settings.model_config(seed))
    trajs = extract_trajectories(draws, labels)
    reports = {
        c: separation_score(trajs, c, settings.folds, np.random.default_rng(seed), settings.k, settings.l2)
        for c in settings.classifiers
    }
    return reports, trajs, draws


def separation_run(settings, run):
    """One seeded run: different-condition fit versus a same-condition split.

    Returns ``{"different": {clf: report}, "same": {clf: report}}``.
    """
    from .experiments import replicate_rng
    from .simulate import gen_dataset, gen_two_condition

    rng, seed = replicate_rng(settings.seed, run)
    trials, (truth_a, _) = gen_two_condition(
        rng,
        n_per=settings.n_per,
        p=settings.p,
        T=settings.T,
        r_true=settings.r_true,
        effect=settings.effect,
        n_knots=settings.n_knots,
    )
    same = gen_dataset(truth_a, 2 * settings.n_per, rng, label="A")
    halves = ["A1"] * settings.n_per + ["A2"] * settings.n_per
    halves = [halves[i] for i in rng.permutation(len(halves))]
    diff, _, _ = _fit_and_score(trials, [tr.label for tr in trials], settings, seed)
    split, _, _ = _fit_and_score(same, halves, settings, seed)
    return {"different": diff, "same": split, "seed": seed}
