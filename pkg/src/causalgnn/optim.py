"""Adam with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class AdamState:
    """Optimizer state: one moment pair per parameter, plus hyperparameters."""

    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    step_count: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0005

    @classmethod
    def init(cls, shapes, **kwargs) -> "AdamState":
        return cls(first_moments=[np.zeros(s) for s in shapes],
                   second_moments=[np.zeros(s) for s in shapes], **kwargs)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> list[np.ndarray]:
    """One Adam update, in place on the parameter arrays.

    Weight decay is decoupled from the adaptive term: the decay pulls the
    parameter toward zero directly instead of being folded into the
    gradient moments.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moments):
        raise ContractError("parameter/gradient/state lengths disagree")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.first_moments,
                          state.second_moments):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(
                f"shape mismatch in adam_step: {p.shape} vs {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= state.learning_rate * update
    return params


class Adam:
    """Convenience wrapper driving adam_step from Tensor.grad buffers."""

    def __init__(self, params: list[Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0005):
        self.params = list(params)
        self.state = AdamState.init([p.data.shape for p in self.params],
                                    learning_rate=lr, beta1=beta1, beta2=beta2,
                                    eps=eps, weight_decay=weight_decay)

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        adam_step([p.data for p in self.params], grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
