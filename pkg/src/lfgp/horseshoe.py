"""Horseshoe local scales via the inverse-gamma auxiliary representation.

``lambda ~ C+(0, 1)`` is written as ``lambda^2 | nu ~ IG(1/2, 1/nu)`` with
``nu ~ IG(1/2, 1)``, which keeps every update conjugate.
"""

import math

import numpy as np


def inv_gamma(rng, shape, rate):
    return 1.0 / rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))


def sample_local_scales(beta, lam2, nu, rho, rng):
    """One Gibbs pass over ``(lambda^2, nu)`` for every loading.

    Parameters
    ----------
    beta : array or None
        Current loadings with prior ``N(0, lambda^2 rho^2)``.  ``None`` drops
        the likelihood term, leaving a chain whose stationary law is the
        half-Cauchy prior itself.
    lam2, nu : arrays of the current squared local scales and auxiliaries.
    rho : global scale.

    Returns
    -------
    (lam2, nu) : updated arrays.
    """
    lam2 = np.asarray(lam2, dtype=float)
    if beta is None:
        lam2 = inv_gamma(rng, 0.5, 1.0 / nu)
    else:
        beta = np.asarray(beta, dtype=float)
        lam2 = inv_gamma(rng, 1.0, 1.0 / nu + beta * beta / (2.0 * rho * rho))
    nu = inv_gamma(rng, 1.0, 1.0 + 1.0 / lam2)
    return lam2, nu


def sample_horseshoe_loadings(fR, ff, sigma2, lam2, rho, rng):
    """Loadings of one factor under independent ``N(0, lam2 * rho^2)`` priors.

    ``fR[c] = sum f * R[..., c]`` and ``ff = sum f^2`` over the stacked data.
    """
    prec = ff / sigma2 + 1.0 / (lam2 * rho * rho)
    mean = (fR / sigma2) / prec
    return mean + rng.standard_normal(mean.shape) / np.sqrt(prec)


def log_half_cauchy(lam):
    lam = np.asarray(lam, dtype=float)
    return np.sum(math.log(2.0 / math.pi) - np.log1p(lam * lam))
