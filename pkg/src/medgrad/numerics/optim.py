"""Adam optimizer (Kingma & Ba) with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from medgrad.errors import ContractError
from medgrad.numerics.tensor import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def fresh(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = BETA1,
    beta2: float = BETA2,
    eps: float = EPS,
) -> tuple[Sequence[Tensor], AdamState]:
    """Apply one Adam update in place; ``None`` gradients count as zero."""
    if len(params) != len(grads) or len(params) != len(state.m) or len(params) != len(state.v):
        raise ContractError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)}/{len(state.v)} moments"
        )
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if state.m[i].shape != p.shape or state.v[i].shape != p.shape:
            raise ContractError(f"adam_step: moment shape {state.m[i].shape} != param shape {p.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ContractError(f"adam_step: grad shape {g.shape} != param shape {p.shape}")
        m = state.m[i] = beta1 * state.m[i] + (1 - beta1) * g
        v = state.v[i] = beta2 * state.v[i] + (1 - beta2) * g * g
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = np.asarray(p.data - update, dtype=p.dtype)
    return params, state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.fresh(self.params)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
