"""
DeskMT: Optimizer and Learning Rate Schedule
============================================
Warm-up/inverse-square-root learning rate and Adam with optional AMSGrad
and L2 weight decay. Frozen parameters keep their values but still carry
gradients.

Author: DeskMT Team
Date: 2026-02-06
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from errors import ConfigurationError
from tensor import Parameter


def noam_lr(step: int, isize: int, warm_step: int, scale: float = 1.0) -> float:
    """lr = scale * isize^-0.5 * min(step^-0.5, step * warm_step^-1.5)."""
    if step < 1:
        raise ConfigurationError(f"learning rate schedule starts at step 1, got {step}")
    return scale * isize ** -0.5 * min(step ** -0.5, step * warm_step ** -1.5)


@dataclass
class OptimizerState:
    """Moment buffers per parameter name and the global step counter."""

    step: int = 0
    exp_avg: Dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    max_exp_avg_sq: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)


def adam_step(params: Dict[str, Parameter], grads: Dict[str, np.ndarray], state: OptimizerState,
              lr: float, betas: Tuple[float, float] = (0.9, 0.98), eps: float = 1e-9,
              use_ams: bool = False, weight_decay: float = 0.0) -> None:
    """
    One bias-corrected Adam update in place.

    weight_decay adds lambda * theta to the gradient before the moments;
    with use_ams the running maximum of the second moment is used.
    """
    beta1, beta2 = betas
    state.step += 1
    for name, p in params.items():
        grad = grads.get(name)
        if grad is None or getattr(p, "frozen", False):
            continue
        if weight_decay:
            grad = grad + weight_decay * p.data
        if name not in state.exp_avg:
            state.exp_avg[name] = np.zeros_like(p.data)
            state.exp_avg_sq[name] = np.zeros_like(p.data)
            if use_ams:
                state.max_exp_avg_sq[name] = np.zeros_like(p.data)
        t = state.counts.get(name, 0) + 1
        state.counts[name] = t

        m, v = state.exp_avg[name], state.exp_avg_sq[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        if use_ams:
            vmax = state.max_exp_avg_sq.setdefault(name, np.zeros_like(p.data))
            np.maximum(vmax, v, out=vmax)
            v = vmax

        bias1 = 1.0 - beta1 ** t
        bias2 = 1.0 - beta2 ** t
        denom = np.sqrt(v) / np.sqrt(bias2) + eps
        p.data -= (lr / bias1) * m / denom


class Adam:
    """Adam over a model's named parameters."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], betas: Tuple[float, float] = (0.9, 0.98),
                 eps: float = 1e-9, use_ams: bool = False, weight_decay: float = 0.0):
        self.params: Dict[str, Parameter] = dict(named_params)
        self.betas = betas
        self.eps = eps
        self.use_ams = use_ams
        self.weight_decay = weight_decay
        self.state = OptimizerState()

    @property
    def step_count(self) -> int:
        return self.state.step

    def step(self, lr: float, grad_scale: float = 1.0) -> None:
        grads = {}
        for name, p in self.params.items():
            if p.grad is not None:
                grads[name] = p.grad * grad_scale if grad_scale != 1.0 else p.grad
        adam_step(self.params, grads, self.state, lr, self.betas, self.eps, self.use_ams, self.weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, object]:
        return {
            "step": self.state.step,
            "counts": dict(self.state.counts),
            "exp_avg": self.state.exp_avg,
            "exp_avg_sq": self.state.exp_avg_sq,
            "max_exp_avg_sq": self.state.max_exp_avg_sq,
        }

    def load_state_dict(self, state: Dict[str, object], strict_shapes: Optional[bool] = True) -> None:
        restored = OptimizerState(step=int(state["step"]), counts={k: int(v) for k, v in state["counts"].items()})
        for key in ("exp_avg", "exp_avg_sq", "max_exp_avg_sq"):
            buffers = getattr(restored, key)
            for name, array in state.get(key, {}).items():
                p = self.params.get(name)
                if p is None:
                    continue
                if strict_shapes and array.shape != p.shape:
                    raise ConfigurationError(f"optimizer buffer {key}/{name} has shape {array.shape}, expected {p.shape}")
                buffers[name] = np.array(array, dtype=p.dtype)
        self.state = restored
