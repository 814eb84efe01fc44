"""Solves against ``A kron S + I`` through the two spectral decompositions."""

import numpy as np

from .errors import NotSymmetric

_SYM_RTOL = 1e-10


def sym_eigh(m, name="matrix"):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric(f"{name} must be square, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > _SYM_RTOL * scale:
        raise NotSymmetric(f"{name} is not symmetric")
    return np.linalg.eigh(0.5 * (m + m.T))


def kron_solve_mat(eig_a, eig_s, V):
    """Apply ``(A kron S + I)^{-1}`` to ``V`` of shape ``(..., q, m)``.

    ``V[..., c, t]`` is element ``c * m + t`` of the flat vector, matching
    ``np.kron(A, S)``.  ``eig_a`` and ``eig_s`` are ``(w, P)`` pairs from
    :func:`numpy.linalg.eigh`.
    """
    wa, P = eig_a
    ws, Q = eig_s
    W = P.T @ V @ Q
    W = W / (1.0 + wa[:, None] * ws[None, :])
    return P @ W @ Q.T


def kron_solve(A, S, v, eig_a=None, eig_s=None):
    """Return ``(A kron S + I)^{-1} v`` without forming the ``qm x qm`` matrix.

    Parameters
    ----------
    A : (q, q) symmetric PSD array
    S : (m, m) symmetric PSD array
    v : array whose last axis has length ``q * m``; leading axes are batched.
    eig_a, eig_s : optional precomputed ``eigh`` results for ``A`` and ``S``.

    Cost is ``O(q^3 + m^3 + qm(q + m))`` per call.
    """
    if eig_a is None:
        eig_a = sym_eigh(A, "A")
    if eig_s is None:
        eig_s = sym_eigh(S, "S")
    q = eig_a[0].size
    m = eig_s[0].size
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != q * m:
        raise ValueError(f"vector length {v.shape[-1]} != q*m = {q * m}")
    V = v.reshape(v.shape[:-1] + (q, m))
    return kron_solve_mat(eig_a, eig_s, V).reshape(v.shape)
