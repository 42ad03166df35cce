"""Kernel Gram matrices and matrix-based Renyi-type information estimators.

A mini-batch of B sample vectors turns into a B x B Gaussian Gram matrix
with an adaptively chosen bandwidth; trace-normalizing that matrix gives a
spectrum that behaves like a probability distribution, and every estimator
here (entropy, joint entropy, mutual information, conditional mutual
information) is a function of such spectra.  No density estimation and no
auxiliary network is involved, and everything is differentiable with
respect to the sample coordinates through the eigenvalue backward rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (ContractError, Tensor, as_tensor, clamp_min, exp, log,
                     mul, stack, sym_eig, trace)

SIGMA_FLOOR = 1e-6
EIGENVALUE_CLAMP = 1e-12


@dataclass
class EntropyConfig:
    """Estimator knobs: Renyi order, bandwidth policy and spectrum clamp."""

    delta: float = 1.01
    bandwidth: str | float = "adaptive"
    clamp_eps: float = EIGENVALUE_CLAMP

    def __post_init__(self):
        if self.delta <= 0 or self.delta == 1.0:
            raise ContractError("Renyi order must be positive and not 1")


@dataclass
class GramMatrix:
    """Symmetric B x B kernel matrix; normalized means trace == 1."""

    entries: Tensor
    normalized: bool

    def __post_init__(self):
        self.entries = as_tensor(self.entries)
        if self.entries.ndim != 2 or self.entries.shape[0] != self.entries.shape[1]:
            raise ContractError(f"Gram matrix must be square, got {self.entries.shape}")
        d = self.entries.data
        if np.max(np.abs(d - d.T)) > 1e-10:
            raise ContractError("Gram matrix must be symmetric")
        if self.normalized and abs(float(np.trace(d)) - 1.0) > 1e-10:
            raise ContractError("normalized Gram matrix must have unit trace")

    @property
    def size(self) -> int:
        return self.entries.shape[0]


def adaptive_sigma(samples: np.ndarray) -> float:
    """Gaussian bandwidth from the data: the mean pairwise distance.

    Builds the B x B Euclidean distance matrix, averages each sample's
    distances to the other samples, then averages those row means.  Returns
    at least SIGMA_FLOOR so duplicate-heavy batches cannot produce a zero
    bandwidth.  The result is always treated as a constant: bandwidths are
    chosen outside the differentiated path.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    b = x.shape[0]
    if b < 2:
        raise ContractError("adaptive_sigma needs at least two samples")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    dist = np.sqrt(d2)
    np.fill_diagonal(dist, 0.0)  # roundoff in the quadratic form otherwise leaks in
    sigma = float(dist.sum() / (b * (b - 1)))
    return max(sigma, SIGMA_FLOOR)


def pairwise_sq_dists(x: Tensor) -> Tensor:
    """Squared Euclidean distances between rows, differentiable in x."""
    x = as_tensor(x)
    sq = (x * x).sum(axis=1)
    b = x.shape[0]
    d2 = sq.reshape((b, 1)) + sq.reshape((1, b)) - 2.0 * (x @ x.T)
    return clamp_min(d2, 0.0)


def gram_gaussian(samples, sigma: float, normalize: bool = True) -> GramMatrix:
    """Gaussian kernel matrix K_ij = exp(-||x_i - x_j||^2 / sigma^2).

    With normalize (the default) the matrix is divided by its trace so the
    spectrum sums to one.  Accepts a Tensor to keep the entries
    differentiable with respect to the samples; sigma is a plain constant.
    """
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    x = as_tensor(samples)
    if x.ndim == 1:
        x = x.reshape((x.shape[0], 1))
    d2 = pairwise_sq_dists(x)
    k = exp(mul(d2, -1.0 / (sigma * sigma)))
    if not normalize:
        return GramMatrix(k, normalized=False)
    return GramMatrix(k / trace(k), normalized=True)


def gram_from_batch(samples, bandwidth: str | float = "adaptive",
                    normalize: bool = True) -> GramMatrix:
    """Gram matrix with the configured bandwidth policy."""
    data = samples.data if isinstance(samples, Tensor) else np.asarray(samples)
    sigma = adaptive_sigma(data) if bandwidth == "adaptive" else float(bandwidth)
    return gram_gaussian(samples, sigma, normalize=normalize)


def _entropy_from_eigvals(vals: Tensor, delta: float) -> Tensor:
    # numerically-negative eigenvalues of a PSD spectrum are floored, and
    # floored entries are dropped from the power sum entirely: near delta=1
    # the 1/(1-delta) prefactor would amplify their floor contribution into
    # the 1e-9 range, while the true value of a zero eigenvalue's term is 0
    lam = clamp_min(vals, EIGENVALUE_CLAMP)
    live = Tensor((vals.data > EIGENVALUE_CLAMP).astype(np.float64))
    total = ((lam ** delta) * live).sum(axis=-1)
    return mul(log(total), 1.0 / ((1.0 - delta) * math.log(2.0)))


def _check_delta(delta: float) -> None:
    if delta == 1.0:
        raise ContractError("Renyi order delta == 1 is excluded; use e.g. 1.01")
    if delta <= 0:
        raise ContractError(f"Renyi order must be positive, got {delta}")


def renyi_entropy(a: GramMatrix, delta: float) -> Tensor:
    """Spectral entropy of a normalized Gram matrix, in bits.

    H = log2(sum_i lambda_i^delta) / (1 - delta), eigenvalues clamped at
    EIGENVALUE_CLAMP so the fractional powers of a numerically
    not-quite-PSD matrix stay defined.
    """
    _check_delta(delta)
    if not a.normalized:
        raise ContractError("renyi_entropy expects a trace-normalized Gram matrix")
    pair = sym_eig(a.entries)
    return _entropy_from_eigvals(pair.values, delta)


def _hadamard_normalized(grams: list[GramMatrix]) -> Tensor:
    prod = grams[0].entries
    for g in grams[1:]:
        if g.size != grams[0].size:
            raise ContractError("joint entropy needs Gram matrices of equal size")
        prod = prod * g.entries
    return prod / trace(prod)


def joint_entropy(grams: list[GramMatrix], delta: float) -> Tensor:
    """Entropy of the trace-renormalized Hadamard product of two or three Grams.

    The renormalization makes any per-matrix prescaling immaterial, so
    normalized and raw kernels give the same value.
    """
    _check_delta(delta)
    if len(grams) not in (2, 3):
        raise ContractError("joint_entropy takes two or three Gram matrices")
    joint = _hadamard_normalized(grams)
    pair = sym_eig(joint)
    return _entropy_from_eigvals(pair.values, delta)


def mutual_information(ka: GramMatrix, kb: GramMatrix, delta: float) -> Tensor:
    """I(a;b) = H(a) + H(b) - H(a,b)."""
    return renyi_entropy(ka, delta) + renyi_entropy(kb, delta) \
        - joint_entropy([ka, kb], delta)


def conditional_mi(ka: GramMatrix, ky: GramMatrix, kb: GramMatrix,
                   delta: float) -> Tensor:
    """I(a;y|b) = H(a,b) + H(y,b) - H(b) - H(a,y,b)."""
    return joint_entropy([ka, kb], delta) + joint_entropy([ky, kb], delta) \
        - renyi_entropy(kb, delta) - joint_entropy([ka, ky, kb], delta)


def entropy_stack(matrices: list[Tensor], delta: float) -> list[Tensor]:
    """Entropies of several equal-size normalized matrices in one eig call.

    Hot-path variant of renyi_entropy: stacking the matrices lets the
    eigensolver amortize over the whole set.  Values match the one-by-one
    path to roundoff.
    """
    _check_delta(delta)
    stacked = stack(matrices, axis=0)
    pair = sym_eig(stacked)
    entropies = _entropy_from_eigvals(pair.values, delta)
    return [entropies[i] for i in range(len(matrices))]


def hsic(ka, kb) -> float:
    """Hilbert-Schmidt independence criterion from raw (unnormalized) kernels.

    HSIC = trace(K H L H) / (B - 1)^2 with the centering matrix
    H = I - (1/B) 11^T.  Diagnostic only, so plain floats in and out.
    """
    k = ka.entries.data if isinstance(ka, GramMatrix) else np.asarray(ka, dtype=np.float64)
    l = kb.entries.data if isinstance(kb, GramMatrix) else np.asarray(kb, dtype=np.float64)
    if isinstance(ka, GramMatrix) and ka.normalized:
        raise ContractError("hsic expects unnormalized kernel matrices")
    if isinstance(kb, GramMatrix) and kb.normalized:
        raise ContractError("hsic expects unnormalized kernel matrices")
    b = k.shape[0]
    if b < 3:
        raise ContractError("hsic needs a batch of at least 3 samples")
    if k.shape != (b, b) or l.shape != (b, b):
        raise ContractError("hsic needs equal-size square kernel matrices")
    centered_k = k - k.mean(axis=0, keepdims=True)
    centered_k -= centered_k.mean(axis=1, keepdims=True)
    return float(np.sum(centered_k * l) / (b - 1) ** 2)


def hsic_from_samples(x: np.ndarray, y: np.ndarray) -> float:
    """HSIC of two sample batches with adaptive Gaussian kernels."""
    kx = _raw_gaussian(np.asarray(x, dtype=np.float64))
    ky = _raw_gaussian(np.asarray(y, dtype=np.float64))
    return hsic(kx, ky)


def _raw_gaussian(x: np.ndarray) -> np.ndarray:
    sigma = adaptive_sigma(x)
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (x @ x.T), 0.0)
    return np.exp(-d2 / (sigma * sigma))


def vectorize_factors(factors) -> np.ndarray | Tensor:
    """One vector per graph from per-graph node embedding matrices.

    Graphs sharing a node count are flattened row-major (keeps the most
    information); mixed node counts fall back to a mean over nodes.
    Accepts a batched Tensor (B, n, f) or a list of (n_i, f) arrays.
    """
    if isinstance(factors, Tensor):
        b, n, f = factors.shape
        return factors.reshape((b, n * f))
    mats = [np.asarray(m, dtype=np.float64) for m in factors]
    counts = {m.shape[0] for m in mats}
    if len(counts) == 1:
        return np.stack([m.reshape(-1) for m in mats])
    return np.stack([m.mean(axis=0) for m in mats])
