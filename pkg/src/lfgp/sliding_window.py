"""Gaussian-tapered sliding-window covariance and log-covariance series."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import CovarianceProcess, LogCovSeries
from .errors import ConfigError, NotPositiveDefinite, WindowTooLong
from .spd import matrix_log, vec_upper

DEFAULT_JITTER = 1e-6


@dataclass(frozen=True)
class TaperSpec:
    window_len: int = 50
    tau: float = 0.5

    def __post_init__(self):
        if int(self.window_len) != self.window_len or self.window_len < 1:
            raise ConfigError(f"window length must be a positive integer, got {self.window_len}")
        if not self.tau > 0:
            raise ConfigError(f"taper scale must be positive, got {self.tau}")


def taper_weights(spec):
    """Normalized Gaussian taper ``h(s)`` for ``s = 0 .. L-1``.

    The bump is centered at ``L/2`` with standard deviation ``tau * L / 2``
    and rescaled to sum to one.
    """
    L = int(spec.window_len)
    s = np.arange(L, dtype=float)
    h = np.exp(-0.5 * ((s - L / 2) / (spec.tau * L / 2)) ** 2)
    return h / h.sum()


def window_centers(T, L):
    return np.arange(T - L + 1) + (L - 1) / 2


def sliding_window_cov(trial, spec, center=True, jitter=DEFAULT_JITTER):
    """Tapered windowed second moments of one trial.

    Window ``t`` covers samples ``t .. t+L-1``; only full windows are used,
    giving ``T - L + 1`` matrices time-stamped at their centers.  A relative
    ridge ``jitter * trace / p`` is added to every matrix.
    """
    x = trial.samples
    T, p = x.shape
    L = int(spec.window_len)
    if L > T:
        raise WindowTooLong(f"window length {L} exceeds trial length {T}")
    if center:
        x = x - x.mean(axis=0)
    h = taper_weights(spec)
    outer = x[:, :, None] * x[:, None, :]
    # (T_w, p, p, L) view, contracted against the taper
    k = np.tensordot(sliding_window_view(outer, L, axis=0), h, axes=([3], [0]))
    k = 0.5 * (k + np.swapaxes(k, 1, 2))
    ridge = jitter * np.trace(k, axis1=1, axis2=2) / p
    k = k + ridge[:, None, None] * np.eye(p)
    return CovarianceProcess(k, window_centers(T, L))


def to_log_cov_series(trials, spec, center=True, jitter=DEFAULT_JITTER):
    """Sliding-window covariances of every trial mapped to log-covariance vectors."""
    values = []
    times = None
    for i, trial in enumerate(trials):
        cov = sliding_window_cov(trial, spec, center=center, jitter=jitter)
        try:
            logs = matrix_log(cov.matrices)
        except NotPositiveDefinite as exc:
            window = exc.location[0] if exc.location else None
            raise NotPositiveDefinite(
                f"trial {i}, window {window}: {exc}",
                min_eigenvalue=exc.min_eigenvalue,
                location=(i, window),
            ) from exc
        values.append(vec_upper(logs))
        times = cov.times
    return LogCovSeries(np.stack(values), times, list(trials.labels))
