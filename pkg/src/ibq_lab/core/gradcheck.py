"""
core/gradcheck.py
Central finite-difference oracle for the adjoints of the tensor engine.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ContractError
from .tensor import DType, Tape, Tensor, no_grad


@dataclass
class GradCheckReport:
    """Outcome of one gradient check.

    The error of one coordinate is |autodiff - fd| / max(|autodiff|, |fd|, eps):
    relative down to gradients of the size of the finite-difference step.
    """
    max_rel_error: float
    max_abs_error: float
    tol: float
    worst_input: int
    worst_index: tuple
    checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"grad_check {verdict}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e}), "
                f"max abs err {self.max_abs_error:.3e}, {self.checked} coordinates, "
                f"worst at input {self.worst_input} index {self.worst_index}")


def _scalar(f, inputs) -> float:
    with no_grad():
        out = f(*inputs)
    if out.ndim != 0:
        raise ContractError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    return float(out.data)


def grad_check(f: Callable[..., Tensor], x: Union[Tensor, Sequence[Tensor]],
               eps: float = 1e-4, tol: float = 1e-5) -> GradCheckReport:
    """Compare autodiff gradients of a scalar function against central differences.

    Args:
        f: Function of one or more f64 tensors returning a scalar Tensor.
        x: The input tensor or a sequence of input tensors.
        eps: Finite-difference step.
        tol: Pass threshold on the maximum error.

    Returns:
        GradCheckReport: Maximum errors and pass/fail.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        if t.dtype is not DType.F64:
            raise ContractError("grad_check runs in f64; convert inputs first")

    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        out = f(*inputs)
        tape.backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]

    worst = (0.0, 0.0, 0, ())
    checked = 0
    for position, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = _scalar(f, inputs)
            flat[i] = original - eps
            minus = _scalar(f, inputs)
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            auto = float(analytic[position].reshape(-1)[i])
            abs_err = abs(auto - numeric)
            rel_err = abs_err / max(abs(auto), abs(numeric), eps)
            checked += 1
            if rel_err > worst[0] or checked == 1:
                worst = (rel_err, max(abs_err, worst[1]), position, np.unravel_index(i, t.shape))
            else:
                worst = (worst[0], max(abs_err, worst[1]), worst[2], worst[3])
    return GradCheckReport(max_rel_error=worst[0], max_abs_error=worst[1], tol=tol,
                           worst_input=worst[2], worst_index=tuple(int(k) for k in worst[3]),
                           checked=checked)
