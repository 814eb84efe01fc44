"""Containers shared across the pipeline."""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimMismatch, RaggedTrials
from .spd import dim_from_q


@dataclass
class Trial:
    """One multichannel recording, ``samples`` has shape ``(T, p)``."""

    samples: np.ndarray
    sample_rate_hz: float = 1000.0
    label: str | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 2:
            raise DataError(f"trial samples must be 2-d (T, p), got {self.samples.shape}")
        if self.samples.shape[0] < 2:
            raise DataError("trial needs at least 2 samples")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("trial contains non-finite samples")
        if not self.sample_rate_hz > 0:
            raise DataError("sample_rate_hz must be positive")

    @property
    def T(self):
        return self.samples.shape[0]

    @property
    def p(self):
        return self.samples.shape[1]


@dataclass
class TrialSet:
    trials: list

    def __post_init__(self):
        if not self.trials:
            raise DataError("empty trial set")
        shapes = {tr.samples.shape for tr in self.trials}
        if len(shapes) != 1:
            raise RaggedTrials(f"trials differ in (T, p): {sorted(shapes)}")

    def __len__(self):
        return len(self.trials)

    def __iter__(self):
        return iter(self.trials)

    def __getitem__(self, i):
        return self.trials[i]

    @property
    def n(self):
        return len(self.trials)

    @property
    def T(self):
        return self.trials[0].T

    @property
    def p(self):
        return self.trials[0].p

    @property
    def labels(self):
        return [tr.label for tr in self.trials]

    @property
    def sample_rate_hz(self):
        return self.trials[0].sample_rate_hz


@dataclass
class LogCovSeries:
    """Log-covariance vectors ``values[i, t]`` of length ``q`` for each trial.

    ``time_index`` holds the window-center sample index of every column and
    doubles as the GP input grid.
    """

    values: np.ndarray
    time_index: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.time_index = np.asarray(self.time_index, dtype=float)
        if self.values.ndim != 3:
            raise DimMismatch(f"values must be (n, T_w, q), got {self.values.shape}")
        if self.time_index.shape != (self.values.shape[1],):
            raise DimMismatch("time_index length must equal T_w")
        dim_from_q(self.values.shape[2])
        if not self.labels:
            self.labels = [None] * self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def T_w(self):
        return self.values.shape[1]

    @property
    def q(self):
        return self.values.shape[2]

    @property
    def p(self):
        return dim_from_q(self.q)

    def subsample(self, stride):
        """Keep every ``stride``-th window (the time grid keeps its spacing)."""
        stride = int(stride)
        if stride < 1:
            raise DataError("stride must be >= 1")
        return LogCovSeries(self.values[:, ::stride], self.time_index[::stride], list(self.labels))

    def select(self, idx):
        idx = list(idx)
        return LogCovSeries(self.values[idx], self.time_index, [self.labels[i] for i in idx])


@dataclass
class CovarianceProcess:
    """Time-indexed SPD matrices, ``matrices`` of shape ``(T, p, p)``."""

    matrices: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.matrices = np.asarray(self.matrices, dtype=float)
        self.times = np.asarray(self.times, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise DimMismatch(f"matrices must be (T, p, p), got {self.matrices.shape}")
        if self.times.shape != (self.matrices.shape[0],):
            raise DimMismatch("times length must match the number of matrices")

    def __len__(self):
        return self.matrices.shape[0]

    @property
    def p(self):
        return self.matrices.shape[1]
