"""Small dense linear algebra: nullspaces, restricted forms, inertia, determinant sign."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class Subspace:
    """Column span of an orthonormal basis inside R^ambient_dim."""

    ambient_dim: int
    basis: np.ndarray  # ambient_dim x d, orthonormal columns

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def contains(self, xi, tol: float = 1e-9) -> bool:
        xi = np.asarray(xi, dtype=float)
        resid = xi - self.basis @ (self.basis.T @ xi)
        return float(np.linalg.norm(resid)) <= tol * max(1.0, float(np.linalg.norm(xi)))


@dataclass(frozen=True)
class Inertia:
    n_pos: int
    n_neg: int
    n_zero: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n_pos, self.n_neg, self.n_zero)


def full_space(n: int) -> Subspace:
    return Subspace(n, np.eye(n))


def nullspace(rows, n: int | None = None, tol: float = DEFAULT_TOL) -> Subspace:
    """Orthonormal basis of ``{xi : rows @ xi = 0}``.

    Singular values below ``tol * sigma_max`` count as zero. An empty row set
    returns the full space; ``n`` is needed only when ``rows`` has no rows.
    """
    rows = np.asarray(rows, dtype=float)
    if n is None:
        n = rows.shape[1]
    rows = rows.reshape(-1, n)
    if rows.shape[0] == 0:
        return full_space(n)
    _, sv, vt = np.linalg.svd(rows)
    smax = sv[0] if sv.size else 0.0
    if smax == 0.0:
        return full_space(n)
    rank = int(np.sum(sv > tol * smax))
    return Subspace(n, vt[rank:].T.copy())


def rank(rows, tol: float = DEFAULT_TOL) -> int:
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0:
        return 0
    sv = np.linalg.svd(rows, compute_uv=False)
    return int(np.sum(sv > tol * sv[0])) if sv[0] > 0 else 0


def restrict_form(H, S: Subspace) -> np.ndarray:
    """The quadratic form ``H`` restricted to ``S`` in its stored orthonormal basis."""
    H = np.asarray(H, dtype=float)
    if H.shape != (S.ambient_dim, S.ambient_dim):
        raise ValueError(f"form of shape {H.shape} does not act on R^{S.ambient_dim}")
    R = S.basis.T @ H @ S.basis
    return 0.5 * (R + R.T)


def eigenvalue_scale(eigenvalues) -> float:
    eigenvalues = np.asarray(eigenvalues)
    return max(1.0, float(np.max(np.abs(eigenvalues)))) if eigenvalues.size else 1.0


def inertia_and_detsign(A, tol: float = DEFAULT_TOL) -> tuple[Inertia, int]:
    """Sign counts of the eigenvalues and the determinant sign of a symmetric matrix.

    An eigenvalue counts as zero when ``|lam| < tol * max(1, max|lam|)``.
    The 0x0 matrix has inertia (0, 0, 0) and sign +1.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return Inertia(0, 0, 0), 1
    w = np.linalg.eigvalsh(A)
    cut = tol * eigenvalue_scale(w)
    n_pos = int(np.sum(w >= cut))
    n_neg = int(np.sum(w <= -cut))
    n_zero = len(w) - n_pos - n_neg
    if n_zero:
        return Inertia(n_pos, n_neg, n_zero), 0
    return Inertia(n_pos, n_neg, 0), (-1) ** n_neg
