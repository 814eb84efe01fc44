"""Stationary unit-variance kernels on the window-time grid."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GridNotSorted, NonPositiveTheta

GRAM_JITTER = 1e-8
FAMILIES = ("squared_exponential", "matern52")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and length scale (in window-index units).

    The variance scale is fixed at one so that the loadings carry all of the
    amplitude.
    """

    family: str = "squared_exponential"
    length_scale: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if not self.length_scale > 0:
            raise NonPositiveTheta(f"length scale must be positive, got {self.length_scale}")

    def with_length_scale(self, theta):
        return KernelSpec(self.family, float(theta))


def kernel_from_distance(family, d, theta):
    d = np.abs(np.asarray(d, dtype=float)) / theta
    if family == "squared_exponential":
        return np.exp(-0.5 * d * d)
    if family == "matern52":
        s5 = math.sqrt(5.0) * d
        return (1.0 + s5 + s5 * s5 / 3.0) * np.exp(-s5)
    raise ConfigError(f"unknown kernel family {family!r}")


def kernel_eval(spec, s, t):
    return float(kernel_from_distance(spec.family, s - t, spec.length_scale))


def gram_matrix(spec, grid, jitter=GRAM_JITTER):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1:
        raise GridNotSorted("grid must be a 1-d vector")
    if np.any(np.diff(grid) <= 0):
        raise GridNotSorted("grid must be strictly increasing")
    k = kernel_from_distance(spec.family, grid[:, None] - grid[None, :], spec.length_scale)
    return k + jitter * np.eye(grid.size)


@dataclass(frozen=True)
class LengthScalePrior:
    """Gamma(shape, rate) prior on a length scale."""

    shape: float = 10.0
    rate: float = 0.09

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigError("gamma prior needs positive shape and rate")

    @classmethod
    def from_mode(cls, mode, shape=10.0):
        """Gamma prior with the given mode; requires ``shape > 1``."""
        if shape <= 1:
            raise ConfigError("a gamma mode exists only for shape > 1")
        return cls(shape=float(shape), rate=(shape - 1.0) / float(mode))

    @property
    def mode(self):
        return (self.shape - 1.0) / self.rate if self.shape > 1 else 0.0


def log_prior_density(prior, theta):
    if not theta > 0:
        raise NonPositiveTheta(f"length scale must be positive, got {theta}")
    a, b = prior.shape, prior.rate
    return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(theta) - b * theta


def ms_to_index(ms, sample_rate_hz):
    """Convert milliseconds to window-index (sample) units."""
    return ms * 1e-3 * sample_rate_hz
