"""Log-Euclidean geometry of symmetric positive definite matrices.

All maps go through the symmetric eigendecomposition, so they are exact up
to floating point.  Functions accept a single ``(p, p)`` matrix or a stack
``(..., p, p)``; vectors produced by :func:`vec_upper` have ``q = p(p+1)/2``
entries in row-major upper-triangle order::

    (0,0), (0,1), ..., (0,p-1), (1,1), ..., (p-1,p-1)
"""

import math

import numpy as np

from .errors import BadLength, DimMismatch, NotPositiveDefinite, NotSymmetric

SYMMETRY_RTOL = 1e-12


def _check_square(m):
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimMismatch(f"expected square matrices, got shape {m.shape}")
    return m


def symmetrize(m, rtol=SYMMETRY_RTOL):
    """Return ``(m + m.T) / 2`` after checking ``m`` is symmetric to ``rtol``."""
    m = _check_square(m)
    mt = np.swapaxes(m, -1, -2)
    scale = np.max(np.abs(m), axis=(-2, -1), keepdims=True)
    asym = np.max(np.abs(m - mt), axis=(-2, -1), keepdims=True)
    if np.any(asym > rtol * np.maximum(scale, np.finfo(float).tiny)):
        raise NotSymmetric(
            f"matrix asymmetry {float(np.max(asym)):.3e} exceeds relative tolerance {rtol:g}"
        )
    return 0.5 * (m + mt)


def _eig_apply(w, v, fn):
    return (v * fn(w)[..., None, :]) @ np.swapaxes(v, -1, -2)


def matrix_log(m):
    """Matrix logarithm of an SPD matrix (or a stack of them).

    Raises
    ------
    NotPositiveDefinite
        If any eigenvalue is not strictly positive.  No clamping is done.
    """
    w, v = np.linalg.eigh(symmetrize(m))
    if np.any(w <= 0):
        bad = np.argwhere(np.min(w, axis=-1) <= 0) if w.ndim > 1 else None
        location = tuple(int(i) for i in bad[0]) if bad is not None else None
        raise NotPositiveDefinite(
            f"smallest eigenvalue {float(np.min(w)):.3e} is not positive",
            min_eigenvalue=float(np.min(w)),
            location=location,
        )
    return _eig_apply(w, v, np.log)


def matrix_exp(m):
    """Matrix exponential of a symmetric matrix; the result is SPD."""
    w, v = np.linalg.eigh(symmetrize(m))
    return _eig_apply(w, v, np.exp)


def n_upper(p):
    return p * (p + 1) // 2


def dim_from_q(q):
    """Return ``p`` with ``p(p+1)/2 == q``; raise :class:`BadLength` otherwise."""
    p = int(round((math.isqrt(8 * q + 1) - 1) / 2)) if q >= 0 else -1
    if p < 1 or n_upper(p) != q:
        raise BadLength(f"length {q} is not a triangular number p(p+1)/2")
    return p


def vec_upper(m):
    """Row-major upper triangle (diagonal included) of symmetric ``m``."""
    m = symmetrize(m)
    rows, cols = np.triu_indices(m.shape[-1])
    return m[..., rows, cols]


def unvec_upper(v):
    """Inverse of :func:`vec_upper`: rebuild the symmetric matrix."""
    v = np.asarray(v, dtype=float)
    p = dim_from_q(v.shape[-1])
    rows, cols = np.triu_indices(p)
    out = np.zeros(v.shape[:-1] + (p, p))
    out[..., rows, cols] = v
    out[..., cols, rows] = v
    return out


def log_euclidean_distance(x1, x2):
    """Frobenius norm of ``Log(x1) - Log(x2)``; broadcasts over stacks."""
    x1 = _check_square(x1)
    x2 = _check_square(x2)
    if x1.shape[-1] != x2.shape[-1]:
        raise DimMismatch(f"dimension {x1.shape[-1]} vs {x2.shape[-1]}")
    diff = matrix_log(x1) - matrix_log(x2)
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


def is_spd(m):
    m = _check_square(m)
    if not np.allclose(m, np.swapaxes(m, -1, -2), rtol=0, atol=SYMMETRY_RTOL * max(1.0, np.abs(m).max())):
        return False
    return bool(np.all(np.linalg.eigvalsh(m) > 0))
