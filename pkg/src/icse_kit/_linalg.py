"""Small shared linear-algebra helpers."""

from __future__ import annotations

import numpy as np

from .exceptions import RankError, ShapeError

RANK_RTOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got ndim={a.ndim}")
    return a


def as_vector(a, name: str = "vector") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got ndim={a.ndim}")
    return a


def check_spd(a: np.ndarray, name: str = "matrix", tol: float = 1e-8) -> np.ndarray:
    """Validate symmetry and positive definiteness (via Cholesky)."""
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if not np.allclose(a, a.T, atol=tol * scale):
        raise ShapeError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise RankError(f"{name} is not positive definite") from exc
    return a


def check_psd(a: np.ndarray, name: str = "matrix", tol: float = 1e-8) -> np.ndarray:
    """Validate symmetry and positive SEMIdefiniteness (eigenvalue check)."""
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got {a.shape}")
    scale = max(1.0, float(np.abs(a).max()))
    if not np.allclose(a, a.T, atol=tol * scale):
        raise ShapeError(f"{name} must be symmetric")
    if float(np.linalg.eigvalsh(a)[0]) < -tol * scale:
        raise RankError(f"{name} has a negative eigenvalue")
    return a


def full_row_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> bool:
    if a.shape[0] == 0:
        return True
    s = np.linalg.svd(a, compute_uv=False)
    return bool(s[-1] > rtol * s[0]) and a.shape[0] <= a.shape[1]


def full_column_rank(a: np.ndarray, rtol: float = RANK_RTOL) -> bool:
    return full_row_rank(a.T, rtol=rtol)


def sym_sqrt(a: np.ndarray) -> np.ndarray:
    """Symmetric square root of an SPD matrix."""
    vals, vecs = np.linalg.eigh(np.asarray(a, dtype=np.float64))
    if np.any(vals <= 0):
        raise RankError("matrix is not positive definite; no real square root")
    return (vecs * np.sqrt(vals)) @ vecs.T


def quad_form(w: np.ndarray, v: np.ndarray) -> float:
    """v'Wv for a single vector v."""
    return float(v @ w @ v)


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)
