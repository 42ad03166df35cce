"""Autodiff engine: forward semantics, gradients, graph mechanics."""

import numpy as np
import pytest

from causalgnn import kernels
from causalgnn.tensor import (CompGraph, ContractError, NumericalError, Tensor,
                              clamp_min, concat, exp, getitem, gradients, log,
                              matmul, no_grad, power, relu, sigmoid, sqrt,
                              stack, sym_eig, tensor_max, tensor_mean,
                              tensor_sum, trace, transpose)

RNG = np.random.default_rng(20240803)


def naive_matmul(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for l in range(k):
                out[i, j] += a[i, l] * b[l, j]
    return out


def test_matmul_identity():
    m = RNG.standard_normal((3, 3))
    out = matmul(Tensor(np.eye(3)), Tensor(m))
    assert np.array_equal(out.data, m)


def test_matmul_annihilator():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    z = Tensor(np.zeros((2, 2)))
    assert np.array_equal((a @ z).data, np.zeros((2, 2)))


def test_matmul_matches_triple_loop_oracle():
    a = RNG.standard_normal((5, 4))
    b = RNG.standard_normal((4, 3))
    out = (Tensor(a) @ Tensor(b)).data
    assert np.max(np.abs(out - naive_matmul(a, b))) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(ContractError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_backward_sum_gives_ones():
    x = Tensor(RNG.standard_normal((4, 5)), requires_grad=True)
    tensor_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((4, 5)))


def test_backward_quadratic():
    x = Tensor(RNG.standard_normal((3, 3)), requires_grad=True)
    (x * x).sum().backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar_loss():
    x = Tensor(RNG.standard_normal(4), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_backward_twice_is_pure():
    x = Tensor(RNG.standard_normal((4, 3)), requires_grad=True)
    loss = (sigmoid(x) * x).sum()
    g1 = gradients(loss, [x])[0]
    g2 = gradients(loss, [x])[0]
    assert np.array_equal(g1, g2)
    assert x.grad is None  # gradients() must not touch .grad


def test_unreached_leaf_gets_zero_gradient():
    x = Tensor(RNG.standard_normal(3), requires_grad=True)
    y = Tensor(RNG.standard_normal(3), requires_grad=True)
    loss = (x * x).sum()
    gx, gy = gradients(loss, [x, y])
    assert np.allclose(gx, 2 * x.data)
    assert np.array_equal(gy, np.zeros(3))


def central_difference(fn, x, h=1e-6):
    num = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        num.reshape(-1)[i] = (fp - fm) / (2 * h)
    return num


@pytest.mark.parametrize("name,builder", [
    ("sigmoid", lambda t: sigmoid(t).sum()),
    ("exp", lambda t: exp(t).sum()),
    ("log", lambda t: log(t * t + 1.0).sum()),
    ("sqrt", lambda t: sqrt(t * t + 0.5).sum()),
    ("pow", lambda t: power(t * t + 0.3, 1.7).sum()),
    ("relu", lambda t: (relu(t) * t).sum()),
    ("matmul", lambda t: (t @ transpose(t)).sum()),
    ("mean", lambda t: tensor_mean(t * t, axis=1).sum()),
    ("max", lambda t: tensor_max(t, axis=1).sum()),
    ("trace", lambda t: trace(t @ transpose(t))),
    ("getitem", lambda t: getitem(t * t, (slice(1, 4), slice(0, 2))).sum()),
    ("clamp", lambda t: clamp_min(t, 0.25).sum()),
])
def test_gradients_match_finite_differences(name, builder):
    x = RNG.standard_normal((6, 4)) + 0.1
    t = Tensor(x.copy(), requires_grad=True)
    analytic = gradients(builder(t), [t])[0]

    def value(arr):
        return builder(Tensor(arr)).item()

    numeric = central_difference(value, x.copy())
    denom = max(np.max(np.abs(numeric)), 1e-10)
    assert np.max(np.abs(analytic - numeric)) / denom < 1e-4, name


def test_entropy_gradient_matches_finite_differences():
    # Gram of 8 random 3-dim samples, fixed bandwidth on the numeric path
    x = RNG.standard_normal((8, 3))
    sigma = kernels.adaptive_sigma(x)

    def entropy(arr):
        g = kernels.gram_gaussian(Tensor(arr), sigma)
        return kernels.renyi_entropy(g, 1.01).item()

    t = Tensor(x.copy(), requires_grad=True)
    h = kernels.renyi_entropy(kernels.gram_gaussian(t, sigma), 1.01)
    analytic = gradients(h, [t])[0]
    numeric = central_difference(entropy, x.copy(), h=1e-5)
    rel = np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-10)
    assert rel < 1e-4


def test_broadcast_add_unbroadcasts_gradient():
    x = Tensor(RNG.standard_normal((4, 3)), requires_grad=True)
    b = Tensor(RNG.standard_normal(3), requires_grad=True)
    ((x + b) * (x + b)).sum().backward()
    assert b.grad.shape == (3,)
    assert x.grad.shape == (4, 3)


def test_stack_and_concat_roundtrip_gradients():
    xs = [Tensor(RNG.standard_normal((2, 2)), requires_grad=True) for _ in range(3)]
    stack(xs, axis=0).sum().backward()
    for x in xs:
        assert np.array_equal(x.grad, np.ones((2, 2)))
    ys = [Tensor(RNG.standard_normal((2, 2)), requires_grad=True) for _ in range(2)]
    (concat(ys, axis=1) * 2.0).sum().backward()
    for y in ys:
        assert np.array_equal(y.grad, np.full((2, 2), 2.0))


def test_comp_graph_is_topologically_ordered():
    x = Tensor(RNG.standard_normal((3, 3)), requires_grad=True)
    loss = (sigmoid(x @ x) * x).sum()
    graph = CompGraph.from_root(loss)
    for node in graph.nodes:
        assert all(p < node.index for p in node.parent_indices)
    assert graph.nodes[-1].tensor is loss


def test_nan_detection_raises():
    x = Tensor(np.array([1.0, -1.0]))
    with pytest.raises(NumericalError):
        log(x)


def test_no_grad_skips_recording():
    x = Tensor(RNG.standard_normal(4), requires_grad=True)
    with no_grad():
        out = (x * x).sum()
    assert not out.requires_grad


def test_operations_deterministic():
    x = RNG.standard_normal((5, 5))
    a = sigmoid(Tensor(x) @ Tensor(x.T)).data
    b = sigmoid(Tensor(x) @ Tensor(x.T)).data
    assert np.array_equal(a, b)


def test_sym_eig_values_differentiable_only():
    m = RNG.standard_normal((4, 4))
    m = 0.5 * (m + m.T)
    t = Tensor(m, requires_grad=True)
    pair = sym_eig(t, need_vectors=True)
    assert isinstance(pair.vectors, np.ndarray)
    (pair.values * pair.values).sum().backward()
    # d(sum lambda^2)/dA = 2 V diag(lambda) V^T = 2A for symmetric A
    assert np.allclose(t.grad, 2 * m, atol=1e-9)
