"""
core/optim.py
Adam / AdamW with bias correction, optional decoupled weight decay and
optional global-norm gradient clipping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class OptimState:
    """Adam hyperparameters, step counter and per-parameter moment buffers."""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name].astype(np.float64)
        total += float((g * g).sum())
    return math.sqrt(total)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale all gradients together so their global L2 norm is at most max_norm.

    Returns:
        tuple: The (possibly scaled) gradients and the norm measured before clipping.
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return dict(grads), norm
    factor = max_norm / norm
    return {name: (g * g.dtype.type(factor)) for name, g in grads.items()}, norm


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimState,
              clip_norm: Optional[float] = None) -> OptimState:
    """Apply one Adam (or AdamW when weight_decay > 0) update in place.

    Parameters without a gradient are left untouched.

    Raises:
        ContractError: If lr is not positive.
        DimensionError: If a gradient's shape differs from its parameter.
        NumericError: If any gradient holds NaN or Inf; nothing is modified.
    """
    if state.lr <= 0:
        raise ContractError(f"learning rate must be positive, got {state.lr}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter {name!r}; step aborted")
    if clip_norm is not None:
        grads, norm = clip_grad_norm(grads, clip_norm)
        log.debug("gradient norm %.4g (clip %.3g)", norm, clip_norm)

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name].data
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if state.weight_decay:
            p *= p.dtype.type(1.0 - state.lr * state.weight_decay)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        p -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return state


class Adam:
    """Adam over a named parameter collection.

    Attributes:
        params (dict): Parameter name to Tensor.
        state (OptimState): Hyperparameters, step counter and moments.
        clip_norm (float or None): Global-norm clip applied before each step.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0, clip_norm: Optional[float] = None):
        self.params = dict(params)
        self.state = OptimState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
        self.clip_norm = clip_norm

    def step(self, lr: Optional[float] = None):
        """Update every parameter that holds a gradient."""
        if lr is not None:
            self.state.lr = lr
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.clip_norm)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        """Moments and step counter as named arrays, ready for a tensor archive."""
        out = {"optim.step": np.array([self.state.step], dtype=np.int64)}
        for name in sorted(self.state.m):
            out[f"optim.m.{name}"] = self.state.m[name]
            out[f"optim.v.{name}"] = self.state.v[name]
        return out

    def load_state_dict(self, entries: Mapping[str, np.ndarray]):
        self.state.step = int(entries["optim.step"][0])
        self.state.m, self.state.v = {}, {}
        for key, value in entries.items():
            if key.startswith("optim.m."):
                self.state.m[key[len("optim.m."):]] = np.array(value)
            elif key.startswith("optim.v."):
                self.state.v[key[len("optim.v."):]] = np.array(value)
