# app/engine/optim.py

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from app.core.errors import ConfigurationError, InputValidationError, NumericalError
from app.engine.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, np.ndarray],
               grads: Mapping[str, np.ndarray],
               state: OptimizerState,
               lr: float) -> None:
    """One AdamW update, in place on `params` and `state`.

    Weight decay is decoupled (p *= 1 - lr·wd) and applied before the
    bias-corrected Adam step. Parameters without a gradient are left alone
    but still share the step counter.
    """
    if lr <= 0:
        raise InputValidationError(f"learning rate must be positive, got {lr}")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter '{name}'")
        if grad.shape != params[name].shape:
            raise InputValidationError(f"gradient shape {grad.shape} does not match parameter '{name}' {params[name].shape}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, grad in grads.items():
        param = params[name]
        m = state.first_moment.setdefault(name, np.zeros_like(param))
        v = state.second_moment.setdefault(name, np.zeros_like(param))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        if state.weight_decay:
            param *= 1.0 - lr * state.weight_decay
        param -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


class AdamW:
    def __init__(self, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = dict(params)
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {name: p.grad for name, p in self.params.items() if p.requires_grad and p.grad is not None}

    def step(self, lr: float) -> None:
        trainable = {name: p.data for name, p in self.params.items() if p.requires_grad}
        adamw_step(trainable, self.grads(), self.state, lr)


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most `max_norm`; returns the norm before clipping."""
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for grad in grads.values():
            grad *= scale
    return norm


def lr_schedule(step: int, t_0: int, t_mult: int, lr_min: float, lr_max: float) -> float:
    """Cosine annealing with warm restarts; cycle i lasts t_0·t_mult^i steps."""
    if t_0 < 1 or t_mult < 1:
        raise ConfigurationError(f"scheduler needs t_0 >= 1 and t_mult >= 1, got {t_0}, {t_mult}", field="optim.t_0")
    if lr_min > lr_max:
        raise ConfigurationError(f"lr_min {lr_min} exceeds lr_max {lr_max}", field="optim.lr_min")
    if t_mult == 1:
        t_cur, t_i = step % t_0, t_0
    else:
        t_cur, t_i = step, t_0
        while t_cur >= t_i:
            t_cur -= t_i
            t_i *= t_mult
    if t_cur == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t_cur / t_i))
