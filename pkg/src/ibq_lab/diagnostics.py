"""
diagnostics.py
Gradient-flow checks for every quantizer: which codebook rows a loss reaches,
whether the forward value is the selected code, the straight-through identity
and finite-difference agreement of the adjoints.

Quantize functions are injectable, so a broken implementation can be run
through the same suite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Union

import numpy as np

from .core.gradcheck import grad_check
from .core.nn import parameter
from .core.rng import Rng, Stream
from .core.tensor import DType, Tape, Tensor, add, matmul, mul, no_grad, softmax, sub, sum, transpose
from .quantizers import (Codebook, LfqCodebook, QuantOut, QuantizerKind, ibq_quantize, lfq_quantize,
                         naive_vq_quantize, nearest_codes, softvq_quantize, vqgan_quantize)

log = logging.getLogger(__name__)

QuantizeFn = Callable[[Tensor, Union[Codebook, LfqCodebook]], QuantOut]

ALL_CODES_FRACTION = 0.99
CHECK_TAU = 0.5
FD_TOL = 1e-5


def default_quantizers() -> Dict[QuantizerKind, QuantizeFn]:
    return {
        QuantizerKind.IBQ: ibq_quantize,
        QuantizerKind.NAIVE: naive_vq_quantize,
        QuantizerKind.VQGAN: vqgan_quantize,
        QuantizerKind.LFQ: lfq_quantize,
        QuantizerKind.SOFTVQ: lambda z, cb: softvq_quantize(z, cb, CHECK_TAU),
    }


@dataclass
class CheckResult:
    quantizer: QuantizerKind
    name: str
    passed: bool
    detail: str = ""


@dataclass
class QuantcheckReport:
    """All check results plus the fraction of codebook rows each quantizer's loss reaches."""
    results: List[CheckResult] = field(default_factory=list)
    row_fraction: Dict[QuantizerKind, Optional[float]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def add(self, kind: QuantizerKind, name: str, passed: bool, detail: str = ""):
        self.results.append(CheckResult(kind, name, bool(passed), detail))


class _Instance:
    """Random f64 features, codebook and projection weights for one quantizer."""

    def __init__(self, kind: QuantizerKind, rng: Rng, size: int, dim: int, batch: int):
        self.kind = kind
        if kind is QuantizerKind.LFQ:
            self.codebook = LfqCodebook(dim)
        else:
            self.codebook = Codebook(rng, size, dim)
            self.codebook.embeddings = parameter(rng.normal_array((size, dim)), dtype=DType.F64, name="codebook")
        self.z = Tensor(rng.normal_array((batch, dim)), dtype=DType.F64, requires_grad=True)
        self.w = Tensor(rng.normal_array((batch, dim)), dtype=DType.F64)

    @property
    def embeddings(self) -> Optional[Tensor]:
        return None if isinstance(self.codebook, LfqCodebook) else self.codebook.embeddings

    def gradients(self, fn: QuantizeFn, with_quant_loss: bool):
        """Gradients of <w, z_q> (plus the quantization loss) w.r.t. z and the codebook."""
        self.z.grad = None
        if self.embeddings is not None:
            self.embeddings.grad = None
        with Tape() as tape:
            out = fn(self.z, self.codebook)
            loss = sum(mul(out.z_q, self.w))
            if with_quant_loss and out.quant_loss is not None:
                loss = add(loss, out.quant_loss)
            # a fully detached z_q records nothing; every gradient is then zero
            if loss.requires_grad:
                tape.backward(loss)
        grad_z = self.z.grad if self.z.grad is not None else np.zeros_like(self.z.data)
        grad_c = None
        if self.embeddings is not None:
            grad_c = self.embeddings.grad if self.embeddings.grad is not None else np.zeros_like(self.embeddings.data)
        return out, grad_z, grad_c


def _rows_with_gradient(grad: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.any(grad != 0, axis=1))


def _check_forward(report: QuantcheckReport, inst: _Instance, out: QuantOut):
    kind, z = inst.kind, inst.z.data
    if kind is QuantizerKind.LFQ:
        expected = np.where(z > 0, 1.0, -1.0)
        bits = (z > 0).astype(np.int64)
        ok = np.array_equal(out.z_q.data, expected) and np.array_equal(
            out.indices, (bits << np.arange(z.shape[1])).sum(axis=1))
        report.add(kind, "forward = sign code", ok)
        return
    emb = inst.embeddings.data
    if kind is QuantizerKind.SOFTVQ:
        logits = z @ emb.T / CHECK_TAU
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        err = float(np.abs(out.z_q.data - p @ emb).max())
        report.add(kind, "forward = weighted average", err < 1e-10, f"max err {err:.2e}")
        return
    if kind is QuantizerKind.IBQ:
        selected = np.argmax(z @ emb.T, axis=1)
    else:
        selected = nearest_codes(z, emb)
    ok = np.array_equal(out.indices, selected) and np.array_equal(out.z_q.data, emb[selected])
    report.add(kind, "forward = selected code", ok, "bit-exact" if ok else "value differs from selected row")


def _ibq_surrogate_check(report: QuantcheckReport, inst: _Instance, fn: QuantizeFn, grad_z, grad_c):
    """IBQ's adjoint must equal the gradient of (H - S0 + softmax(z C^T)) C with H and S0 frozen."""
    emb = inst.embeddings
    with no_grad():
        base = fn(inst.z, inst.codebook)
    if base.soft is None:
        report.add(inst.kind, "finite differences", False, "no soft distribution to check against")
        return
    frozen = Tensor(base.soft.data.copy(), dtype=DType.F64)
    hard = np.zeros_like(base.soft.data)
    hard[np.arange(len(base.indices)), base.indices] = 1.0
    hard_t = Tensor(hard, dtype=DType.F64)
    w = inst.w

    def surrogate(z, c):
        index = add(sub(hard_t, frozen), softmax(matmul(z, transpose(c, (1, 0))), axis=-1))
        return sum(mul(matmul(index, c), w))

    z = Tensor(inst.z.data.copy(), dtype=DType.F64, requires_grad=True)
    c = Tensor(emb.data.copy(), dtype=DType.F64, requires_grad=True)
    fd = grad_check(surrogate, [z, c], eps=1e-4, tol=FD_TOL)
    matches = np.allclose(z.grad, grad_z, rtol=1e-9, atol=1e-12) and np.allclose(c.grad, grad_c, rtol=1e-9, atol=1e-12)
    report.add(inst.kind, "finite differences", fd.passed and matches,
               f"max rel err {fd.max_rel_error:.1e}" + ("" if matches else ", adjoint differs from surrogate"))


def check_quantizer(report: QuantcheckReport, kind: QuantizerKind, fn: QuantizeFn, rng: Rng,
                    size: int, dim: int, batch: int):
    inst = _Instance(kind, rng, size, dim, batch)
    out, grad_z, grad_c = inst.gradients(fn, with_quant_loss=False)
    _check_forward(report, inst, out)
    selected = np.unique(out.indices)

    if kind in (QuantizerKind.IBQ, QuantizerKind.SOFTVQ):
        fraction = len(_rows_with_gradient(grad_c)) / inst.codebook.size
        report.add(kind, "all codes receive gradient", fraction >= ALL_CODES_FRACTION, f"{fraction:.1%} of rows")
    if kind in (QuantizerKind.NAIVE, QuantizerKind.VQGAN):
        touched = _rows_with_gradient(grad_c)
        report.add(kind, "z_q path reaches no code", len(touched) == 0, f"{len(touched)} rows")
        _, _, grad_loss = inst.gradients(fn, with_quant_loss=True)
        touched = _rows_with_gradient(grad_loss)
        report.add(kind, "quant loss reaches selected codes only", np.array_equal(touched, selected),
                   f"{len(touched)} rows, {len(selected)} selected")
    if kind in (QuantizerKind.VQGAN, QuantizerKind.LFQ):
        report.add(kind, "straight-through identity", np.array_equal(grad_z, inst.w.data))
    if kind is QuantizerKind.NAIVE:
        report.add(kind, "encoder gradient truncated", not grad_z.any())
    if kind is QuantizerKind.IBQ:
        _ibq_surrogate_check(report, inst, fn, grad_z, grad_c)
    if kind is QuantizerKind.SOFTVQ:
        w = inst.w

        def weighted(z, c):
            return sum(mul(matmul(softmax(matmul(z, transpose(c, (1, 0))) * (1.0 / CHECK_TAU)), c), w))

        fd = grad_check(weighted, [Tensor(inst.z.data.copy(), dtype=DType.F64),
                                   Tensor(inst.embeddings.data.copy(), dtype=DType.F64)], tol=FD_TOL)
        report.add(kind, "finite differences", fd.passed, f"max rel err {fd.max_rel_error:.1e}")

    if grad_c is None:
        report.row_fraction[kind] = None
    else:
        _, _, grad_total = inst.gradients(fn, with_quant_loss=True)
        report.row_fraction[kind] = len(_rows_with_gradient(grad_total)) / inst.codebook.size


def run_quantcheck(seed: int = 0, quantizers: Optional[Mapping[QuantizerKind, QuantizeFn]] = None,
                   size: int = 64, dim: int = 8, batch: int = 32, lfq_dim: int = 6) -> QuantcheckReport:
    """Run the gradient-flow suite on random f64 instances.

    Args:
        seed: Seed of the CHECK random stream.
        quantizers: Kind to quantize function; defaults to the library implementations.
        size: Codebook size K.
        dim: Feature dimension D.
        batch: Number of feature rows.
        lfq_dim: Binary dimensions for LFQ (K = 2**lfq_dim).

    Returns:
        QuantcheckReport: One result per check and the per-quantizer row fractions.
    """
    report = QuantcheckReport()
    for kind, fn in (quantizers or default_quantizers()).items():
        rng = Rng(seed).at(Stream.CHECK, list(QuantizerKind).index(kind))
        d = lfq_dim if kind is QuantizerKind.LFQ else dim
        check_quantizer(report, kind, fn, rng, size, d, batch)
    for r in report.failures():
        log.warning("quantcheck %s: %s failed %s", r.quantizer.value, r.name, r.detail)
    return report
