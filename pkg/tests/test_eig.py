"""Eigensolver contracts: both the Jacobi reference and the fast backend."""

import numpy as np
import pytest

from causalgnn.eig import (DimensionError, jacobi_eigh, sym_eigendecomposition)
from causalgnn.tensor import Tensor, sym_eig

RNG = np.random.default_rng(7)

BACKENDS = ("jacobi", "lapack")


def random_symmetric(n, rng):
    m = rng.standard_normal((n, n))
    return 0.5 * (m + m.T)


def cubic_eigenvalues(m):
    """Closed-form spectrum of a symmetric 3x3 via the characteristic cubic."""
    coeffs = np.poly(m)
    roots = np.roots(coeffs)
    return np.sort(roots.real)[::-1]


@pytest.mark.parametrize("backend", BACKENDS)
def test_identity_spectrum(backend):
    vals, vecs = sym_eigendecomposition(np.eye(4), backend=backend)
    assert np.allclose(vals, np.ones(4))
    assert np.allclose(vecs @ vecs.T, np.eye(4), atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_diagonal_matrix(backend):
    vals, vecs = sym_eigendecomposition(np.diag([3.0, 1.0]), backend=backend)
    assert np.allclose(vals, [3.0, 1.0])
    assert np.allclose(np.abs(vecs), np.eye(2), atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_reconstruction_and_descending_order(backend):
    m = random_symmetric(6, RNG)
    vals, vecs = sym_eigendecomposition(m, backend=backend)
    assert np.all(np.diff(vals) <= 1e-12)
    recon = vecs @ np.diag(vals) @ vecs.T
    assert np.max(np.abs(recon - m)) < 1e-9


@pytest.mark.parametrize("backend", BACKENDS)
def test_matches_cubic_root_oracle(backend):
    for _ in range(10):
        m = random_symmetric(3, RNG)
        vals, _ = sym_eigendecomposition(m, backend=backend)
        assert np.max(np.abs(vals - cubic_eigenvalues(m))) < 1e-8


@pytest.mark.parametrize("backend", BACKENDS)
def test_trace_and_frobenius_invariants(backend):
    for n in (2, 5, 12, 25):
        m = random_symmetric(n, RNG)
        vals, _ = sym_eigendecomposition(m, backend=backend)
        assert abs(vals.sum() - np.trace(m)) < 1e-9
        assert abs((vals ** 2).sum() - np.sum(m * m)) < 1e-8


@pytest.mark.parametrize("backend", BACKENDS)
def test_residuals_on_100_random_matrices(backend):
    rng = np.random.default_rng(99)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(2, 33))
        m = random_symmetric(n, rng)
        vals, vecs = sym_eigendecomposition(m, backend=backend)
        residual = np.max(np.abs(m @ vecs - vecs * vals[None, :]))
        worst = max(worst, residual)
    assert worst < 1e-8, worst


def test_batched_stack_matches_loop():
    mats = np.stack([random_symmetric(8, RNG) for _ in range(5)])
    vals, vecs = jacobi_eigh(mats)
    for i in range(5):
        vi, _ = jacobi_eigh(mats[i])
        assert np.allclose(vals[i], vi, atol=1e-10)
        resid = np.max(np.abs(mats[i] @ vecs[i] - vecs[i] * vals[i][None, :]))
        assert resid < 1e-10


def test_non_square_rejected():
    with pytest.raises(DimensionError):
        jacobi_eigh(np.ones((3, 4)))


def test_asymmetric_rejected_by_op():
    m = RNG.standard_normal((4, 4))
    m[0, 1] += 1.0
    with pytest.raises(DimensionError):
        sym_eig(Tensor(m))


def test_backends_agree():
    for n in (3, 10, 25):
        m = random_symmetric(n, RNG)
        vj, _ = sym_eigendecomposition(m, backend="jacobi")
        vl, _ = sym_eigendecomposition(m, backend="lapack")
        assert np.max(np.abs(vj - vl)) < 1e-9


def test_eigvalue_gradient_well_defined_with_repeats():
    # symmetric spectrum function on a matrix with a repeated eigenvalue
    m = np.diag([2.0, 2.0, 1.0])
    t = Tensor(m, requires_grad=True)
    pair = sym_eig(t)
    (pair.values ** 2).sum().backward()
    assert np.allclose(t.grad, 2 * m, atol=1e-9)
