"""Adam with joint gradient-norm clipping and L2 weight decay."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import Parameter

logger = logging.getLogger(__name__)


class OptimizerError(RuntimeError):
    """Raised when a step is rejected (e.g. non-finite gradients)."""


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.001
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.eps <= 0 or self.clip_norm <= 0:
            raise ValueError("eps and clip_norm must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def global_grad_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = global_grad_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads]
    return list(grads)


def adam_step(params: Sequence[Parameter], cfg: OptimizerConfig, maximize: bool = False) -> None:
    """One update of every parameter from its accumulated ``.grad``.

    Order: negate (when maximizing), clip the joint norm, add the decay
    term, then the bias-corrected Adam move. Parameters without a gradient
    are treated as having a zero gradient. On non-finite gradients nothing
    is modified and :class:`OptimizerError` is raised.
    """
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in params]
    if not all(np.all(np.isfinite(g)) for g in grads):
        raise OptimizerError("non-finite gradient; step rejected")
    if maximize:
        grads = [-g for g in grads]
    grads = clip_by_global_norm(grads, cfg.clip_norm)
    for p, g in zip(params, grads):
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p.data
        p.step_count += 1
        p.adam_m = cfg.beta1 * p.adam_m + (1.0 - cfg.beta1) * g
        p.adam_v = cfg.beta2 * p.adam_v + (1.0 - cfg.beta2) * g * g
        m_hat = p.adam_m / (1.0 - cfg.beta1 ** p.step_count)
        v_hat = p.adam_v / (1.0 - cfg.beta2 ** p.step_count)
        p.data = p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)


class Adam:
    """Binds a parameter list to a config; gradients are cleared after each step."""

    def __init__(self, params: Iterable[Parameter], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, maximize: bool = False) -> bool:
        """Apply one update. Returns False (and logs) if the step was rejected."""
        try:
            adam_step(self.params, self.cfg, maximize=maximize)
        except OptimizerError as exc:
            logger.warning("optimizer step rejected: %s", exc)
            return False
        finally:
            self.zero_grad()
        return True
