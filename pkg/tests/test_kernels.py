"""Bandwidth, Gram construction and the information estimators."""

import math

import numpy as np
import pytest

from causalgnn import kernels
from causalgnn.kernels import (EntropyConfig, GramMatrix, adaptive_sigma,
                               conditional_mi, entropy_stack, gram_from_batch,
                               gram_gaussian, hsic, hsic_from_samples,
                               joint_entropy, mutual_information, renyi_entropy,
                               vectorize_factors)
from causalgnn.tensor import ContractError, Tensor, gradients

RNG = np.random.default_rng(31337)


# -- adaptive bandwidth -----------------------------------------------------------

def test_sigma_two_points():
    assert adaptive_sigma(np.array([[0.0, 0.0], [2.0, 0.0]])) == pytest.approx(2.0)


def test_sigma_identical_samples_floored():
    assert adaptive_sigma(np.ones((6, 3))) == kernels.SIGMA_FLOOR


def test_sigma_needs_two_samples():
    with pytest.raises(ContractError):
        adaptive_sigma(np.ones((1, 3)))


def test_sigma_matches_row_average_oracle():
    x = RNG.standard_normal((12, 4))
    d = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    rows = [np.delete(d[i], i).mean() for i in range(12)]
    assert adaptive_sigma(x) == pytest.approx(np.mean(rows), abs=1e-12)


# -- Gram construction ------------------------------------------------------------

def test_gram_diagonal_and_trace():
    x = RNG.standard_normal((7, 3))
    raw = gram_gaussian(x, sigma=1.3, normalize=False)
    assert np.allclose(np.diagonal(raw.entries.data), 1.0)
    norm = gram_gaussian(x, sigma=1.3)
    assert norm.normalized
    assert np.trace(norm.entries.data) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.diagonal(norm.entries.data), 1.0 / 7)


def test_gram_far_apart_samples_approach_scaled_identity():
    x = np.array([[0.0, 0.0], [1e6, 0.0]])
    g = gram_gaussian(x, sigma=1.0)
    assert np.allclose(g.entries.data, np.eye(2) / 2, atol=1e-12)


def test_gram_matches_hand_evaluated_exponentials():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    raw = gram_gaussian(pts, sigma=1.0, normalize=False).entries.data
    expected = np.array([
        [1.0, math.exp(-1.0), math.exp(-4.0)],
        [math.exp(-1.0), 1.0, math.exp(-5.0)],
        [math.exp(-4.0), math.exp(-5.0), 1.0],
    ])
    assert np.max(np.abs(raw - expected)) < 1e-12


def test_gram_rejects_nonpositive_sigma():
    with pytest.raises(ContractError):
        gram_gaussian(RNG.standard_normal((4, 2)), sigma=0.0)


# -- entropy ----------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 4, 8, 16])
@pytest.mark.parametrize("delta", [0.5, 1.01, 2.0])
def test_uniform_spectrum_entropy_is_log2_n(n, delta):
    g = GramMatrix(Tensor(np.eye(n) / n), normalized=True)
    assert renyi_entropy(g, delta).item() == pytest.approx(np.log2(n), abs=1e-9)


def test_rank_one_gram_has_zero_entropy():
    g = gram_from_batch(np.ones((8, 3)))
    assert abs(renyi_entropy(g, 1.01).item()) < 1e-9


def test_two_point_uniform_order_two():
    g = GramMatrix(Tensor(np.diag([0.5, 0.5])), normalized=True)
    assert renyi_entropy(g, 2.0).item() == pytest.approx(1.0, abs=1e-12)


def test_delta_one_rejected():
    g = GramMatrix(Tensor(np.eye(2) / 2), normalized=True)
    with pytest.raises(ContractError):
        renyi_entropy(g, 1.0)
    with pytest.raises(ContractError):
        EntropyConfig(delta=1.0)


def test_entropy_requires_normalized_gram():
    raw = gram_gaussian(RNG.standard_normal((5, 2)), 1.0, normalize=False)
    with pytest.raises(ContractError):
        renyi_entropy(raw, 1.01)


def test_entropy_bounds_on_random_batches():
    for _ in range(20):
        b = int(RNG.integers(2, 33))
        g = gram_from_batch(RNG.standard_normal((b, 4)))
        h = renyi_entropy(g, 1.01).item()
        assert -1e-9 <= h <= np.log2(b) + 1e-9


# -- joint entropy -----------------------------------------------------------------

def test_joint_with_constant_variable_is_marginal():
    x = RNG.standard_normal((10, 3))
    ka = gram_from_batch(x)
    kconst = gram_gaussian(np.ones((10, 2)), 1.0)
    joint = joint_entropy([ka, kconst], 1.01).item()
    assert joint == pytest.approx(renyi_entropy(ka, 1.01).item(), abs=1e-9)


def test_joint_of_identical_samples_matches_eigen_oracle():
    x = RNG.standard_normal((9, 3))
    ka = gram_from_batch(x)
    joint = joint_entropy([ka, ka], 1.01).item()
    sq = ka.entries.data * ka.entries.data
    sq = sq / np.trace(sq)
    lam = np.maximum(np.linalg.eigvalsh(sq), kernels.EIGENVALUE_CLAMP)
    expected = np.log2(np.sum(lam ** 1.01)) / (1 - 1.01)
    assert joint == pytest.approx(expected, abs=1e-9)


def test_three_scaled_identities():
    gs = [GramMatrix(Tensor(np.eye(6) / 6), normalized=True) for _ in range(3)]
    assert joint_entropy(gs, 1.01).item() == pytest.approx(np.log2(6), abs=1e-9)


def test_joint_entropy_size_mismatch():
    a = GramMatrix(Tensor(np.eye(4) / 4), normalized=True)
    b = GramMatrix(Tensor(np.eye(5) / 5), normalized=True)
    with pytest.raises(ContractError):
        joint_entropy([a, b], 1.01)


def test_prescaling_is_immaterial():
    x = RNG.standard_normal((8, 2))
    y = RNG.standard_normal((8, 2))
    sx, sy = adaptive_sigma(x), adaptive_sigma(y)
    normalized = joint_entropy([gram_gaussian(x, sx), gram_gaussian(y, sy)], 1.01)
    raw = joint_entropy([gram_gaussian(x, sx, normalize=False),
                         gram_gaussian(y, sy, normalize=False)], 1.01)
    assert normalized.item() == pytest.approx(raw.item(), abs=1e-10)


# -- mutual information ------------------------------------------------------------

def test_mi_with_constant_variable_is_zero():
    ka = gram_from_batch(RNG.standard_normal((12, 3)))
    kconst = gram_gaussian(np.ones((12, 2)), 1.0)
    assert abs(mutual_information(ka, kconst, 1.01).item()) < 1e-9


def test_mi_identical_matches_term_by_term_oracle():
    x = RNG.standard_normal((10, 3))
    ka = gram_from_batch(x)
    mi = mutual_information(ka, ka, 1.01).item()
    expected = (2 * renyi_entropy(ka, 1.01).item()
                - joint_entropy([ka, ka], 1.01).item())
    assert mi == pytest.approx(expected, abs=1e-12)


def test_mi_independent_samples_small_and_nonnegative():
    x = RNG.standard_normal((64, 1))
    y = RNG.standard_normal((64, 1))
    mi = mutual_information(gram_from_batch(x), gram_from_batch(y), 1.01).item()
    assert mi >= -1e-6
    assert mi < 0.3


def test_mi_nonnegative_on_100_random_batches():
    rng = np.random.default_rng(5)
    for _ in range(100):
        b = int(rng.integers(4, 24))
        ka = gram_from_batch(rng.standard_normal((b, 3)))
        kb = gram_from_batch(rng.standard_normal((b, 2)))
        assert mutual_information(ka, kb, 1.01).item() >= -1e-6


# -- conditional mutual information -------------------------------------------------

def _label_gram(b, rng):
    labels = rng.integers(0, 2, b)
    onehot = np.eye(2)[labels]
    return gram_from_batch(onehot)


def test_cmi_with_constant_conditioner_reduces_to_mi():
    rng = np.random.default_rng(11)
    ka = gram_from_batch(rng.standard_normal((14, 3)))
    ky = _label_gram(14, rng)
    kconst = gram_gaussian(np.ones((14, 2)), 1.0)
    cmi = conditional_mi(ka, ky, kconst, 1.01).item()
    mi = mutual_information(ka, ky, 1.01).item()
    assert cmi == pytest.approx(mi, abs=1e-9)


def test_cmi_with_constant_first_argument_is_zero():
    rng = np.random.default_rng(12)
    kconst = gram_gaussian(np.ones((10, 4)), 1.0)
    ky = _label_gram(10, rng)
    kb = gram_from_batch(rng.standard_normal((10, 3)))
    assert abs(conditional_mi(kconst, ky, kb, 1.01).item()) < 1e-9


def test_cmi_matches_independent_four_term_oracle():
    rng = np.random.default_rng(13)
    a = rng.standard_normal((12, 3))
    b = rng.standard_normal((12, 2))
    y = np.eye(2)[rng.integers(0, 2, 12)]
    ka, kb, ky = gram_from_batch(a), gram_from_batch(b), gram_from_batch(y)
    cmi = conditional_mi(ka, ky, kb, 1.01).item()

    # separate code path: raw kernels, Hadamard by hand, spectrum by hand
    def h(mat):
        mat = mat / np.trace(mat)
        lam = np.maximum(np.linalg.eigvalsh(mat), kernels.EIGENVALUE_CLAMP)
        return float(np.log2(np.sum(lam ** 1.01)) / (1 - 1.01))

    ra = ka.entries.data
    rb = kb.entries.data
    ry = ky.entries.data
    expected = h(ra * rb) + h(ry * rb) - h(rb) - h(ra * ry * rb)
    assert cmi == pytest.approx(expected, abs=1e-9)


def test_entropy_stack_matches_individual_path():
    x = RNG.standard_normal((10, 3))
    y = RNG.standard_normal((10, 2))
    ka, kb = gram_from_batch(x), gram_from_batch(y)
    stacked = entropy_stack([ka.entries, kb.entries], 1.01)
    assert stacked[0].item() == pytest.approx(renyi_entropy(ka, 1.01).item(), abs=1e-10)
    assert stacked[1].item() == pytest.approx(renyi_entropy(kb, 1.01).item(), abs=1e-10)


def test_estimators_invariant_under_sample_permutation():
    rng = np.random.default_rng(17)
    a = rng.standard_normal((16, 3))
    b = rng.standard_normal((16, 2))
    y = np.eye(2)[rng.integers(0, 2, 16)]
    perm = rng.permutation(16)
    before = conditional_mi(gram_from_batch(a), gram_from_batch(y),
                            gram_from_batch(b), 1.01).item()
    after = conditional_mi(gram_from_batch(a[perm]), gram_from_batch(y[perm]),
                           gram_from_batch(b[perm]), 1.01).item()
    assert before == pytest.approx(after, abs=1e-9)
    assert mutual_information(gram_from_batch(a), gram_from_batch(b), 1.01).item() \
        == pytest.approx(mutual_information(gram_from_batch(a[perm]),
                                            gram_from_batch(b[perm]), 1.01).item(),
                         abs=1e-9)


def test_cmi_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    a = rng.standard_normal((8, 3))
    b = rng.standard_normal((8, 2))
    y = np.eye(2)[rng.integers(0, 2, 8)]
    sa, sb = adaptive_sigma(a), adaptive_sigma(b)
    ky = gram_from_batch(y)

    def value(arr):
        ka = gram_gaussian(Tensor(arr), sa)
        kb = gram_gaussian(Tensor(b), sb)
        return conditional_mi(ka, ky, kb, 1.01).item()

    t = Tensor(a.copy(), requires_grad=True)
    cmi = conditional_mi(gram_gaussian(t, sa), ky, gram_gaussian(Tensor(b), sb), 1.01)
    analytic = gradients(cmi, [t])[0]
    h = 1e-5
    numeric = np.zeros_like(a)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            ap, am = a.copy(), a.copy()
            ap[i, j] += h
            am[i, j] -= h
            numeric[i, j] = (value(ap) - value(am)) / (2 * h)
    rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-10)
    assert rel < 1e-4


# -- HSIC ---------------------------------------------------------------------------

def test_hsic_constant_variable_is_zero():
    x = RNG.standard_normal((16, 3))
    kx = gram_gaussian(x, 1.0, normalize=False)
    kc = gram_gaussian(np.ones((16, 2)), 1.0, normalize=False)
    assert abs(hsic(kx, kc)) < 1e-12


def test_hsic_self_dependence_positive():
    x = RNG.standard_normal((16, 3))
    assert hsic_from_samples(x, x) > 0


def test_hsic_rejects_normalized_or_tiny_input():
    x = RNG.standard_normal((8, 2))
    with pytest.raises(ContractError):
        hsic(gram_gaussian(x, 1.0), gram_gaussian(x, 1.0))
    with pytest.raises(ContractError):
        hsic_from_samples(x[:2], x[:2])


def test_hsic_permutation_test_oracle():
    rng = np.random.default_rng(41)
    x = rng.standard_normal((16, 1))
    paired = hsic_from_samples(x, x)
    beaten = 0
    for _ in range(100):
        perm = rng.permutation(16)
        if paired > hsic_from_samples(x, x[perm]):
            beaten += 1
    assert beaten >= 95


# -- vectorization -------------------------------------------------------------------

def test_vectorize_flattens_equal_node_counts():
    mats = [RNG.standard_normal((4, 3)) for _ in range(5)]
    out = vectorize_factors(mats)
    assert out.shape == (5, 12)
    assert np.array_equal(out[0], mats[0].reshape(-1))


def test_vectorize_mean_pools_mixed_node_counts():
    mats = [RNG.standard_normal((4, 3)), RNG.standard_normal((6, 3))]
    out = vectorize_factors(mats)
    assert out.shape == (2, 3)
    assert np.allclose(out[1], mats[1].mean(axis=0))


def test_vectorize_tensor_batch_is_differentiable_reshape():
    t = Tensor(RNG.standard_normal((3, 4, 2)), requires_grad=True)
    flat = vectorize_factors(t)
    assert flat.shape == (3, 8)
    flat.sum().backward()
    assert np.array_equal(t.grad, np.ones((3, 4, 2)))
