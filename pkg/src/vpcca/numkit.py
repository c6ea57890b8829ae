"""Dense linear algebra for the exact linear solvers.

Matrices are plain 2-D ``float64`` numpy arrays.  The eigen- and singular
value decompositions are Jacobi iterations (see :mod:`vpcca._kernels`); they
are accurate to working precision on the small, dense problems this package
deals with.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import _kernels

MAX_SWEEPS = 100
EIG_TOL = 1e-12
SVD_TOL = 1e-13
SYMMETRY_TOL = 1e-12


class ConvergenceError(RuntimeError):
    """A Jacobi iteration hit its sweep cap."""

    def __init__(self, what: str, sweeps: int):
        super().__init__(f"{what} did not converge after {sweeps} sweeps")
        self.sweeps = sweeps


class NotSymmetricError(ValueError):
    pass


class NotPositiveDefiniteError(ValueError):
    def __init__(self, eigenvalue: float, message: str | None = None):
        super().__init__(message or f"matrix is not positive definite (eigenvalue {eigenvalue:.6g})")
        self.eigenvalue = eigenvalue


class SvdResult(NamedTuple):
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray


def as_mat(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def _complete_basis(q: np.ndarray, keep: np.ndarray) -> np.ndarray:
    """Replace columns not in ``keep`` by an orthonormal completion of the kept ones."""
    m, k = q.shape
    out = q.copy()
    basis = [out[:, j] for j in range(k) if keep[j]]
    candidates = iter(np.eye(m))
    for j in range(k):
        if keep[j]:
            continue
        while True:
            e = next(candidates).copy()
            for b in basis:
                e -= (b @ e) * b
            for b in basis:  # second pass for orthogonality to working precision
                e -= (b @ e) * b
            nrm = np.linalg.norm(e)
            if nrm > 1e-8:
                break
        out[:, j] = e / nrm
        basis.append(out[:, j])
    return out


def svd(a) -> SvdResult:
    """Thin SVD ``a = u @ diag(s) @ vt`` with ``s`` descending."""
    a = as_mat(a)
    transposed = a.shape[0] < a.shape[1]
    # rows of g are the columns being orthogonalised
    g = np.ascontiguousarray(a if transposed else a.T)
    n = g.shape[0]
    vt = np.eye(n)
    # squared column norms below this are pure round-off
    small = (1e-15 * float(np.linalg.norm(g))) ** 2
    sweeps, ok = _kernels.jacobi_svd(g, vt, SVD_TOL, MAX_SWEEPS, small)
    if not ok:
        raise ConvergenceError("one-sided Jacobi SVD", sweeps)
    work, v = g.T, vt.T
    s = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    v = v[:, order]
    keep = s > s[0] * 1e-14 if s[0] > 0 else np.zeros(n, dtype=bool)
    u = np.zeros_like(work)
    u[:, keep] = work[:, keep] / s[keep]
    u = _complete_basis(u, keep)
    s = np.where(keep, s, 0.0)
    if transposed:
        return SvdResult(v, s, u.T)
    return SvdResult(u, s, v.T)


def check_symmetric(a: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > SYMMETRY_TOL * scale:
        raise NotSymmetricError(f"matrix is not symmetric (max asymmetry {np.max(np.abs(a - a.T)):.3g})")


def sym_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (descending) and orthonormal eigenvectors (columns) of a symmetric matrix."""
    a = as_mat(a)
    if a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"matrix is not square: {a.shape}")
    check_symmetric(a)
    work = np.ascontiguousarray(0.5 * (a + a.T))
    n = work.shape[0]
    vt = np.eye(n)
    tol = EIG_TOL * float(np.linalg.norm(work))
    sweeps, ok = _kernels.jacobi_eig(work, vt, tol, MAX_SWEEPS)
    if not ok:
        raise ConvergenceError("cyclic Jacobi eigensolver", sweeps)
    w = np.diag(work).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], np.ascontiguousarray(vt[order].T)


def _spd_eig(a) -> tuple[np.ndarray, np.ndarray]:
    w, v = sym_eig(a)
    if w[-1] <= 1e-12 * max(w[0], 0.0) or w[-1] <= 0.0:
        raise NotPositiveDefiniteError(float(w[-1]))
    return w, v


def spd_inv_sqrt(a) -> np.ndarray:
    """Symmetric inverse square root ``B`` with ``B @ a @ B = I``."""
    w, v = _spd_eig(a)
    return (v / np.sqrt(w)) @ v.T


def spd_sqrt(a) -> np.ndarray:
    w, v = _spd_eig(a)
    return (v * np.sqrt(w)) @ v.T


def psd_sqrt(a) -> np.ndarray:
    """Symmetric square root of a positive semi-definite matrix; tiny negative eigenvalues are zeroed."""
    w, v = sym_eig(a)
    if w[-1] < -1e-9 * max(1.0, abs(w[0])):
        raise NotPositiveDefiniteError(float(w[-1]), f"matrix is not positive semi-definite (eigenvalue {w[-1]:.6g})")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def cholesky(a) -> np.ndarray:
    """Lower Cholesky factor; raises :class:`NotPositiveDefiniteError` for non-SPD input."""
    a = as_mat(a)
    check_symmetric(a)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        w = sym_eig(a)[0]
        raise NotPositiveDefiniteError(float(w[-1])) from None


def solve(a, b) -> np.ndarray:
    """Solve ``a x = b`` for a small square ``a``."""
    a = as_mat(a)
    try:
        return np.linalg.solve(a, np.asarray(b, dtype=np.float64))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular system: {exc}") from None
