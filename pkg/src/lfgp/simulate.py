"""Synthetic covariance dynamics and trial generation."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .data import CovarianceProcess, Trial, TrialSet
from .errors import ConfigError
from .spd import matrix_exp, n_upper, unvec_upper

SCENARIOS = ("square_wave", "piecewise_linear", "cubic_spline", "constant")


@dataclass(frozen=True)
class DynamicsScenario:
    """Shape of the latent dynamics ``U(t)``.

    ``n_knots`` is the number of change points (square wave) or interior
    knots (piecewise linear, spline) per latent dimension.  Explicit
    ``change_points`` / ``control_values`` override the random draws and are
    used as-is for every column.
    """

    kind: str = "cubic_spline"
    r_true: int = 4
    T: int = 1000
    n_knots: int = 6
    amplitude: float = 1.0
    change_points: tuple | None = None
    control_values: tuple | None = None

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.kind!r}; choose from {SCENARIOS}")
        if self.T < 2 * self.r_true:
            raise ConfigError("need T >= 2 * r_true")
        if self.amplitude <= 0:
            raise ConfigError("amplitude must be positive")


def _square_wave(T, points, a, start_sign):
    u = np.empty(T)
    edges = [0] + sorted(int(c) for c in points) + [T]
    sign = start_sign
    for lo, hi in zip(edges, edges[1:]):
        u[lo:hi] = sign * a
        sign = -sign
    return u


def gen_dynamics(scenario, rng):
    """Latent dynamics ``U``, shape ``(T, r_true)``."""
    T, r, a = scenario.T, scenario.r_true, scenario.amplitude
    t = np.arange(T, dtype=float)
    U = np.empty((T, r))
    for j in range(r):
        if scenario.kind == "constant":
            U[:, j] = rng.uniform(-a, a)
        elif scenario.kind == "square_wave":
            if scenario.change_points is not None:
                points = scenario.change_points
                sign = 1.0
            else:
                points = rng.choice(np.arange(1, T), size=scenario.n_knots, replace=False)
                sign = rng.choice([-1.0, 1.0])
            U[:, j] = _square_wave(T, points, a, sign)
        else:
            knots = np.linspace(0.0, T - 1.0, scenario.n_knots + 2)
            if scenario.kind == "piecewise_linear":
                inner = np.sort(rng.choice(np.arange(1, T - 1), size=scenario.n_knots, replace=False))
                knots = np.concatenate([[0.0], inner.astype(float), [T - 1.0]])
            if scenario.control_values is not None:
                vals = np.resize(np.asarray(scenario.control_values, dtype=float), knots.size)
            else:
                vals = rng.uniform(-a, a, size=knots.size)
            if scenario.kind == "piecewise_linear":
                U[:, j] = np.interp(t, knots, vals)
            else:
                U[:, j] = CubicSpline(knots, vals, bc_type="natural")(t)
    return U


@dataclass
class GroundTruth:
    U: np.ndarray  # (T, r_true)
    A: np.ndarray  # (r_true, q)

    @property
    def logcov(self):
        return self.U @ self.A

    @property
    def p(self):
        q = self.A.shape[1]
        return int(round((math.isqrt(8 * q + 1) - 1) / 2))

    @property
    def K(self):
        return CovarianceProcess(matrix_exp(unvec_upper(self.logcov)), np.arange(self.U.shape[0], dtype=float))

    def at(self, times):
        """Covariances at (possibly fractional) sample times, interpolating ``U`` linearly."""
        times = np.asarray(times, dtype=float)
        grid = np.arange(self.U.shape[0], dtype=float)
        U = np.column_stack([np.interp(times, grid, self.U[:, j]) for j in range(self.U.shape[1])])
        return CovarianceProcess(matrix_exp(unvec_upper(U @ self.A)), times)


def make_ground_truth(U, p, rng, max_entry=2.0, max_cond=1e4):
    """Random mixing matrix scaled to the entry and conditioning limits.

    ``A`` has iid standard normal entries and is rescaled so that every
    log-covariance entry stays within ``max_entry`` in absolute value and
    every ``K(t)`` has condition number at most ``max_cond``; the tighter of
    the two limits is met with equality.
    """
    q = n_upper(p)
    A = rng.standard_normal((U.shape[1], q))
    W = U @ A
    peak = np.abs(W).max()
    ev = np.linalg.eigvalsh(unvec_upper(W))
    spread = (ev[:, -1] - ev[:, 0]).max()
    limits = [max_entry / peak if peak > 0 else np.inf, math.log(max_cond) / spread if spread > 0 else np.inf]
    scale = min(limits)
    if not np.isfinite(scale):
        scale = 1.0
    return GroundTruth(np.asarray(U, dtype=float), A * scale)


def gen_dataset(truth, n, rng, sample_rate_hz=1000.0, label=None):
    """``n`` trials with ``X(t) ~ N(0, K(t))`` drawn independently over time."""
    K = truth.K.matrices
    L = np.linalg.cholesky(K)
    T, p = K.shape[0], K.shape[1]
    trials = []
    for _ in range(n):
        z = rng.standard_normal((T, p))
        trials.append(Trial(np.einsum("tij,tj->ti", L, z), sample_rate_hz, label))
    return TrialSet(trials)


def two_condition_truths(rng, p=3, T=300, r_true=2, effect=1.0, n_knots=4, max_entry=2.0):
    """Ground truths for two conditions sharing ``A`` and baseline dynamics.

    The second condition adds a Gaussian bump of height ``effect`` (relative
    to the unit spline amplitude) to the first latent dimension, centered
    mid-trial.  ``effect=0`` gives two identical conditions.
    """
    U = gen_dynamics(DynamicsScenario("cubic_spline", r_true=r_true, T=T, n_knots=n_knots), rng)
    t = np.arange(T, dtype=float)
    bump = np.zeros_like(U)
    bump[:, 0] = effect * np.exp(-0.5 * ((t - T / 2) / (T / 8)) ** 2)
    base = make_ground_truth(np.vstack([U, U + bump]), p, rng, max_entry=max_entry)
    A = base.A
    return GroundTruth(U, A), GroundTruth(U + bump, A)


def gen_two_condition(rng, n_per=20, labels=("A", "B"), **truth_kw):
    """Trials of both conditions in one TrialSet, first condition first."""
    ta, tb = two_condition_truths(rng, **truth_kw)
    first = gen_dataset(ta, n_per, rng, label=labels[0])
    second = gen_dataset(tb, n_per, rng, label=labels[1])
    return TrialSet(list(first) + list(second)), (ta, tb)
