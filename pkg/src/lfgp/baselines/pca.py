"""SW-PCA: principal components of the stacked log-covariance series."""

from dataclasses import dataclass

import numpy as np

from ..data import CovarianceProcess
from ..errors import DimMismatch, KTooLarge
from ..spd import matrix_exp, unvec_upper


@dataclass
class PcaBasis:
    components: np.ndarray  # (k, q), orthonormal rows
    mean: np.ndarray  # (q,)
    explained_variance: np.ndarray  # (k,)
    total_variance: float

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def explained_fraction(self):
        if self.total_variance == 0:
            return 1.0
        return float(self.explained_variance.sum() / self.total_variance)


def sw_pca_fit(Y, k):
    Z = Y.values.reshape(-1, Y.q)
    if not 0 <= k <= Y.q:
        raise KTooLarge(f"k={k} must lie in [0, q={Y.q}]")
    mean = Z.mean(axis=0)
    _, s, vt = np.linalg.svd(Z - mean, full_matrices=False)
    var = s**2 / Z.shape[0]
    return PcaBasis(vt[:k].copy(), mean, var[:k].copy(), float(var.sum()))


def project(values, basis):
    centered = values - basis.mean
    return basis.mean + (centered @ basis.components.T) @ basis.components


def sw_pca_reconstruct(Y, basis):
    """Project every window onto the basis and map back to covariances."""
    if Y.q != basis.mean.size:
        raise DimMismatch(f"basis fitted on q={basis.mean.size}, series has q={Y.q}")
    recon = project(Y.values, basis)
    return [CovarianceProcess(matrix_exp(unvec_upper(v)), Y.time_index) for v in recon]
