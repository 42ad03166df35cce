"""Symmetric eigendecomposition via cyclic Jacobi rotations.

Matrices here are small (trace-normalized Gram matrices of one mini-batch,
so at most a few hundred rows), which is exactly the regime where Jacobi
sweeps are simple, robust and accurate.  The solver works on a stack of
equally sized matrices at once: each sweep visits every index pair exactly
once using a round-robin schedule, and within one round all selected pivots
are disjoint, so their rotations commute and can be applied in a single
vectorized update across the whole stack.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


class ConvergenceError(RuntimeError):
    """Raised when the sweep cap is reached before off-diagonals vanish."""


class DimensionError(ValueError):
    """Raised for non-square or otherwise malformed eigensolver input."""


_MAX_SWEEPS = 60
_SYMMETRY_TOL = 1e-10


@lru_cache(maxsize=32)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Disjoint pivot pairs for every round of one sweep over n indices.

    Circle method: index 0 stays fixed, the rest rotate.  Odd n gets a
    phantom seat whose pairs are dropped.  Covers every (p, q) pair once
    per sweep.
    """
    m = n + (n % 2)
    seats = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for i in range(m // 2):
            a, b = seats[i], seats[m - 1 - i]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        seats = [seats[0]] + [seats[-1]] + seats[1:-1]
    return tuple(rounds)


def _rotation_angles(app: np.ndarray, aqq: np.ndarray, apq: np.ndarray):
    """Stable cosine/sine pairs annihilating each pivot entry."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        tau = (aqq - app) / (2.0 * apq)
        t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
        # sign(0) == 0 would zero the tangent, but tau == 0 means equal
        # diagonals, where the correct rotation is 45 degrees (t = 1).
        t = np.where(tau == 0.0, 1.0, t)
    active = np.abs(apq) > 0.0
    t = np.where(active, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    return c, s


def jacobi_eigh(mats: np.ndarray, compute_vectors: bool = True,
                tol: float = 1e-13, max_sweeps: int = _MAX_SWEEPS):
    """Full spectrum of a symmetric matrix (or stack of them).

    Parameters
    ----------
    mats: array of shape (n, n) or (m, n, n); symmetrized as (A + A^T)/2
        before iterating.
    compute_vectors: skip accumulating rotations when only eigenvalues are
        needed (roughly a third of the work).
    tol: relative off-diagonal threshold; sweeps stop once
        off(A) <= tol * ||A||_F for every matrix in the stack.

    Returns
    -------
    (eigenvalues, eigenvectors): eigenvalues sorted descending with shape
    (..., n); eigenvectors as orthonormal columns with shape (..., n, n),
    or None when compute_vectors is False.
    """
    a = np.asarray(mats, dtype=np.float64)
    single = a.ndim == 2
    if single:
        a = a[None]
    if a.ndim != 3 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {a.shape}")
    m, n, _ = a.shape
    a = 0.5 * (a + np.swapaxes(a, -1, -2))

    if n == 1:
        vals = a[:, 0, 0].copy()
        vecs = np.ones((m, 1, 1)) if compute_vectors else None
        return _finish(vals[:, None], vecs, single)

    v = np.broadcast_to(np.eye(n), (m, n, n)).copy() if compute_vectors else None
    norms = np.maximum(np.linalg.norm(a, axis=(1, 2)), np.finfo(np.float64).tiny)
    # summing off-diagonal squares directly avoids the catastrophic
    # cancellation of the ||A||^2 - ||diag||^2 form near convergence
    offdiag = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a * a * offdiag, axis=(1, 2)))
        if np.all(off <= tol * norms):
            break
        for p, q in _round_robin(n):
            app = a[:, p, p]
            aqq = a[:, q, q]
            apq = a[:, p, q]
            c, s = _rotation_angles(app, aqq, apq)
            cr = c[:, :, None]
            sr = s[:, :, None]
            rp = a[:, p, :]
            rq = a[:, q, :]
            a[:, p, :] = cr * rp - sr * rq
            a[:, q, :] = sr * rp + cr * rq
            cc = c[:, None, :]
            sc = s[:, None, :]
            cp = a[:, :, p]
            cq = a[:, :, q]
            a[:, :, p] = cc * cp - sc * cq
            a[:, :, q] = sc * cp + cc * cq
            # exact zero at the pivot; the two writes above left roundoff
            a[:, p, q] = 0.0
            a[:, q, p] = 0.0
            if v is not None:
                vp = v[:, :, p]
                vq = v[:, :, q]
                v[:, :, p] = cc * vp - sc * vq
                v[:, :, q] = sc * vp + cc * vq
        a = 0.5 * (a + np.swapaxes(a, -1, -2))
    else:
        raise ConvergenceError(
            f"Jacobi sweeps did not converge within {max_sweeps} sweeps")

    vals = np.diagonal(a, axis1=1, axis2=2)
    return _finish(vals, v, single)


def _finish(vals: np.ndarray, vecs, single: bool):
    order = np.argsort(-vals, axis=1, kind="stable")
    vals = np.take_along_axis(vals, order, axis=1)
    if vecs is not None:
        vecs = np.take_along_axis(vecs, order[:, None, :], axis=2)
    if single:
        vals = vals[0]
        vecs = vecs[0] if vecs is not None else None
    return np.ascontiguousarray(vals), vecs


_DEFAULT_BACKEND = "lapack"


def set_eigh_backend(name: str) -> None:
    """Select the eigensolver: "lapack" (numpy.linalg.eigh) or "jacobi"."""
    global _DEFAULT_BACKEND
    if name not in ("lapack", "jacobi"):
        raise ValueError(f"unknown eigensolver backend {name!r}")
    _DEFAULT_BACKEND = name


def get_eigh_backend() -> str:
    return _DEFAULT_BACKEND


def sym_eigendecomposition(a: np.ndarray, compute_vectors: bool = True,
                           backend: str | None = None):
    """Descending eigenvalues (and eigenvectors) of symmetric matrices.

    Thin dispatcher over the two interchangeable backends.  Both symmetrize
    the input first and return identical shapes; "jacobi" is the
    self-contained reference, "lapack" the fast default.
    """
    backend = backend or _DEFAULT_BACKEND
    if backend == "jacobi":
        return jacobi_eigh(a, compute_vectors=compute_vectors)
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise DimensionError(f"expected square matrices, got shape {arr.shape}")
    arr = 0.5 * (arr + np.swapaxes(arr, -1, -2))
    if compute_vectors:
        vals, vecs = np.linalg.eigh(arr)
        return vals[..., ::-1].copy(), vecs[..., ::-1].copy()
    return np.linalg.eigvalsh(arr)[..., ::-1].copy(), None


def check_symmetric(a: np.ndarray, tol: float = _SYMMETRY_TOL) -> None:
    """Raise DimensionError unless a is square and symmetric within tol."""
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    skew = np.max(np.abs(a - np.swapaxes(a, -1, -2)))
    scale = max(1.0, float(np.max(np.abs(a))))
    if skew > tol * scale:
        raise DimensionError(f"matrix is not symmetric (max asymmetry {skew:.3e})")
