"""Adam optimizer state and the step learning-rate schedule."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, NonFiniteError, ShapeError


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr):
        return cls(
            lr=lr,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(state, params, grads, max_grad_norm=None):
    """Apply one bias-corrected Adam update to ``params`` in place.

    ``max_grad_norm`` enables global-norm clipping; it is off by default.
    Returns ``state`` for chaining.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(
            f"adam_step: {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots"
        )
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.data.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: non-finite gradient for {p.name or 'parameter'}")

    if max_grad_norm is not None:
        total = math.sqrt(sum(float((g * g).sum()) for g in grads))
        if total > max_grad_norm:
            scale = max_grad_norm / total
            grads = [g * scale for g in grads]

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


@dataclass(frozen=True)
class LrSchedule:
    lr0: float = 0.001
    decay_interval: int = 10
    gamma: float = 0.1
    enabled: bool = True

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr must be positive, got {self.lr0}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"lr_decay_gamma must lie in (0, 1], got {self.gamma}")
        if self.decay_interval < 1:
            raise ConfigError(f"lr_decay_interval must be >= 1, got {self.decay_interval}")


def lr_at_epoch(schedule, epoch):
    """Learning rate for 1-based ``epoch``."""
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    if not schedule.enabled:
        return schedule.lr0
    return schedule.lr0 * schedule.gamma ** ((epoch - 1) // schedule.decay_interval)
