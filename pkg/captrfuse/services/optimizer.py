"""
AdamW with decoupled weight decay and a linear decay-to-zero schedule.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from captrfuse.config import TrainConfig
from captrfuse.core.tensor import Tensor


@dataclass
class AdamWState:
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamWState,
    config: TrainConfig,
    lr: Optional[float] = None,
) -> None:
    """One in-place update: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + decay * theta)."""
    lr = config.learning_rate if lr is None else lr
    beta1, beta2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step

    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(i)
        v = state.v.get(i)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[i], state.v[i] = m, v
        update = (m / bias1) / (np.sqrt(v / bias2) + eps) + config.weight_decay * p.data
        p.data = (p.data - lr * update).astype(p.dtype, copy=False)


def lr_schedule(step: int, total_steps: int, base_lr: float) -> float:
    """Linear decay to zero without warmup; clamps to 0 past the end."""
    if total_steps <= 0:
        return 0.0
    return base_lr * max(0.0, 1.0 - step / total_steps)


class AdamW:
    """Optimizer over a fixed parameter list driven by lr_schedule."""

    def __init__(self, params: Sequence[Tensor], config: TrainConfig, base_lr: float, total_steps: int):
        self.params: List[Tensor] = list(params)
        self.config = config
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.state = AdamWState()

    @property
    def lr(self) -> float:
        return lr_schedule(self.state.step, self.total_steps, self.base_lr)

    def step(self) -> float:
        """Apply accumulated gradients; returns the learning rate used."""
        lr = self.lr
        adamw_step(self.params, [p.grad for p in self.params], self.state, self.config, lr=lr)
        return lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
