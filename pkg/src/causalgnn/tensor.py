"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything downstream (kernel entropies, the graph VAE, the classifier)
differentiates through this module.  Values are plain numpy arrays; each
operation records its inputs and a closure that maps the output gradient to
input gradients.  Calling backward() on a scalar loss walks the recorded
graph once in reverse topological order.

All arithmetic is 64-bit: entropy gradients through an eigendecomposition
are too ill-conditioned for 32-bit floats.  Forward results are checked for
NaN/Inf (a cheap sum-based probe) so numerical blowups fail loudly at the
op that produced them.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import eig


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class NumericalError(ArithmeticError):
    """A forward operation produced NaN or Inf."""


_grad_enabled = True
_finite_checks = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_finite_checks(enabled: bool) -> None:
    global _finite_checks
    _finite_checks = enabled


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    if not _finite_checks:
        return
    # sum is NaN/Inf iff some entry is (values here are O(1), no overflow)
    if not np.isfinite(np.sum(arr)):
        raise NumericalError(f"non-finite values produced by op {op!r}")


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...], op: str,
                vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> "Tensor":
        _ensure_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.op = op
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable leaf."""
        CompGraph.from_root(self).run_backward()


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise and structural ops -------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return Tensor._result(out, (a, b), "add", lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return Tensor._result(out, (a, b), "sub", lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    return Tensor._result(out, (a, b), "mul", lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return Tensor._result(out, (a, b), "div", lambda g: (
        _unbroadcast(g / b.data, a.data.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ContractError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        bt = np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else b.data
        at = np.swapaxes(a.data, -1, -2) if a.data.ndim > 1 else a.data
        ga = _unbroadcast(g @ bt, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(at @ g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._result(out, (a, b), "matmul", vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, -1, -2)
    return Tensor._result(out, (a,), "transpose",
                          lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return Tensor._result(out, (a,), "reshape",
                          lambda g: (g.reshape(a.data.shape),))


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return Tensor._result(np.array(out, copy=True), (a,), "getitem", vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._result(out, tuple(ts), "concat", vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return Tensor._result(out, tuple(ts), "stack", vjp)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), "sum", vjp)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = a.data ** p
    return Tensor._result(out, (a,), "pow",
                          lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._result(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(a.data)
    return Tensor._result(out, (a,), "log", lambda g: (g / a.data,))


def log2(a) -> Tensor:
    return mul(log(a), 1.0 / math.log(2.0))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return Tensor._result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # the two-branch form never exponentiates a positive argument
    x = a.data
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return Tensor._result(out, (a,), "sigmoid",
                          lambda g: (g * out * (1.0 - out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return Tensor._result(out, (a,), "relu",
                          lambda g: (g * (a.data > 0.0),))


def clamp_min(a, floor: float) -> Tensor:
    """max(x, floor); clamped entries get zero gradient."""
    a = as_tensor(a)
    out = np.maximum(a.data, floor)
    return Tensor._result(out, (a,), "clamp_min",
                          lambda g: (g * (a.data > floor),))


def tensor_max(a, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along one axis; ties route the gradient to the first argmax."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        g = np.asarray(g)
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return (full,)

    return Tensor._result(out, (a,), "max", vjp)


def trace(a) -> Tensor:
    """Sum of the diagonal over the last two axes."""
    a = as_tensor(a)
    if a.data.shape[-1] != a.data.shape[-2]:
        raise ContractError(f"trace needs square matrices, got {a.data.shape}")
    out = np.trace(a.data, axis1=-2, axis2=-1)
    n = a.data.shape[-1]
    eye = np.eye(n)

    def vjp(g):
        g = np.asarray(g)
        return (g[..., None, None] * eye,)

    return Tensor._result(np.asarray(out), (a,), "trace", vjp)


# -- symmetric eigendecomposition ---------------------------------------------

@dataclass
class EigPair:
    """Spectrum of a symmetric matrix: descending eigenvalues (differentiable)
    and the matching orthonormal eigenvector columns (constants).

    Only eigenvalue gradients are supported.  For a loss L that is a
    symmetric function of the spectrum — every entropy in this package is —
    the rule dA = V diag(dL/dlambda) V^T stays well defined under repeated
    eigenvalues, because such a loss assigns equal dL/dlambda within a
    degenerate block, making the product invariant to the arbitrary choice
    of basis inside that block.  No perturbation is needed.
    """

    values: Tensor
    vectors: np.ndarray


def sym_eig(a, backend: str | None = None, need_vectors: bool = False) -> EigPair:
    """Eigendecomposition of a symmetric Tensor (optionally a stack).

    The input is symmetrized as (A + A^T)/2 first and must already be
    symmetric to 1e-10.  Gradients flow through eigenvalues only:
    dA = V diag(g) V^T.  Eigenvectors are computed when the backward pass
    will need them or when need_vectors is set; otherwise EigPair.vectors
    is None.
    """
    a = as_tensor(a)
    eig.check_symmetric(a.data)
    want_vectors = need_vectors or (_grad_enabled and a.requires_grad)
    vals, vecs = eig.sym_eigendecomposition(a.data, compute_vectors=want_vectors,
                                            backend=backend)

    def vjp(g):
        # dA = V diag(g) V^T, batched over leading axes
        return (np.einsum("...ik,...k,...jk->...ij", vecs, g, vecs),)

    values = Tensor._result(vals, (a,), "sym_eig", vjp)
    return EigPair(values=values, vectors=vecs)


# -- the recorded graph and the backward pass ---------------------------------

@dataclass
class GraphNode:
    """One record of the computation: which op produced which value."""

    index: int
    op: str
    parent_indices: tuple[int, ...]
    tensor: Tensor


class CompGraph:
    """Topologically ordered view of the computation below one root tensor.

    Acyclic by construction (operations only reference earlier tensors).
    The backward pass visits each node exactly once, in reverse order.
    """

    def __init__(self, nodes: list[GraphNode], root: Tensor):
        self.nodes = nodes
        self.root = root

    @classmethod
    def from_root(cls, root: Tensor) -> "CompGraph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        index = {id(t): i for i, t in enumerate(order)}
        nodes = [GraphNode(i, t.op, tuple(index[id(p)] for p in t._parents), t)
                 for i, t in enumerate(order)]
        return cls(nodes, root)

    def run_backward(self, accumulate: bool = True) -> dict[int, np.ndarray]:
        """Backpropagate from the scalar root; returns grads per node index.

        Leaf tensors with requires_grad accumulate into their .grad
        attribute unless accumulate is False.  Intermediate gradient buffers
        are freed as soon as they have been consumed, so peak memory stays
        at the graph frontier.
        """
        if self.root.data.size != 1:
            raise ContractError(
                f"backward needs a scalar loss, got shape {self.root.data.shape}")
        grads: dict[int, np.ndarray] = {
            self.nodes[-1].index: np.ones_like(self.root.data)}
        leaf_grads: dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = grads.pop(node.index, None)
            if g is None:
                continue
            t = node.tensor
            if t._vjp is not None:
                parent_grads = t._vjp(g)
                for pi, pg in zip(node.parent_indices, parent_grads):
                    if pg is None:
                        continue
                    if pi in grads:
                        grads[pi] = grads[pi] + pg
                    else:
                        grads[pi] = pg
            elif t.requires_grad:
                leaf_grads[node.index] = g
                if accumulate:
                    t.grad = g.copy() if t.grad is None else t.grad + g
        return leaf_grads


def gradients(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar loss for each requested leaf (pure: .grad untouched).

    Leaves the loss does not reach get a zero gradient of matching shape.
    """
    graph = CompGraph.from_root(loss)
    leaf_grads = graph.run_backward(accumulate=False)
    index = {id(n.tensor): n.index for n in graph.nodes}
    out = []
    for t in wrt:
        i = index.get(id(t))
        g = leaf_grads.get(i) if i is not None else None
        out.append(np.array(g, copy=True) if g is not None else np.zeros_like(t.data))
    return out
