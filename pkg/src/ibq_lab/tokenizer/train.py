"""
tokenizer/train.py
Stage-1 training: one optimisation step, the learning-rate schedule, the epoch
loop with held-out evaluation, checkpoints and the metrics CSV.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..checkpoint import Checkpoint, save_checkpoint
from ..config import OptimConfig, RunConfig, save_resolved
from ..core.errors import ContractError, NumericError, TrainingDivergedError
from ..core.optim import Adam
from ..core.rng import Rng, Stream
from ..core.tensor import Tape, Tensor, no_grad
from ..data.csvlog import TOKENIZER_COLUMNS, MetricsCSV
from ..data.dataset import DataSource, ImageDataset, gather_batches, iterate_batches
from ..data.ppm import load_ppm_folder
from ..data.synthetic import synth_generate
from ..losses import LossBundle, assemble_loss, reconstruction_loss
from ..metrics import UsageAccumulator, UsageStats, distribution_gap, psnr
from ..quantizers import LfqCodebook, QuantizerKind, QuantOut, softvq_temperature
from .model import TokenizerModel

log = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.ibqa"
MID_CHECKPOINT = "mid.ibqa"
METRICS_FILE = "metrics.csv"
FEATURE_SAMPLE = 2048

ProgressHook = Callable[[int, int], None]


class SoftVQMode(Enum):
    """How a Soft VQ tokenizer quantizes during evaluation."""
    HARD = "hard"
    SOFT = "soft"


def lr_schedule(step: int, total_steps: int, optim: OptimConfig) -> float:
    """base * decay ** (number of milestones reached); milestones are fractions of total_steps."""
    passed = sum(1 for m in optim.milestones if step >= int(m * total_steps))
    return optim.lr * optim.decay ** passed


@dataclass
class TrainState:
    """Everything a training run carries from step to step.

    The random streams are derived from (seed, epoch) and (seed, step), so the
    counters, parameters and optimizer moments are the whole resumable state.
    """
    config: RunConfig
    model: TokenizerModel
    optimizer: Adam
    total_steps: int
    step: int = 0
    epoch: int = 0
    last_checkpoint: Optional[Path] = None

    @classmethod
    def create(cls, cfg: RunConfig, total_steps: int) -> "TrainState":
        model = TokenizerModel(cfg.tokenizer, cfg.data.size, cfg.seed)
        optimizer = Adam(model.parameters(), lr=cfg.optim.lr, betas=tuple(cfg.optim.betas),
                         eps=cfg.optim.eps, weight_decay=cfg.optim.weight_decay)
        return cls(config=cfg, model=model, optimizer=optimizer, total_steps=total_steps)

    def tau(self) -> float:
        t = self.config.tokenizer
        return softvq_temperature(min(self.step, self.total_steps), self.total_steps, t.tau_start, t.tau_end)

    def counters(self) -> Dict[str, int]:
        return {"step": self.step, "epoch": self.epoch, "total_steps": self.total_steps}


def tokenizer_step(state: TrainState, batch: np.ndarray,
                   kind: Optional[QuantizerKind] = None) -> Tuple[LossBundle, QuantOut]:
    """Forward, loss, backward and one Adam step on a batch of images.

    Raises:
        ContractError: If kind disagrees with the model's quantizer.
        TrainingDivergedError: If any value becomes NaN or Inf.
    """
    cfg = state.config.tokenizer
    if kind is not None and kind is not cfg.quantizer:
        raise ContractError(f"model was built for {cfg.quantizer.value}, step asked for {kind.value}")
    lr = lr_schedule(state.step, state.total_steps, state.config.optim)
    settings = state.model.settings(training=True, tau=state.tau())
    state.optimizer.zero_grad()
    try:
        with Tape() as tape:
            x = Tensor(batch)
            x_hat, out, _ = state.model(x, settings)
            recon = reconstruction_loss(x_hat, x, cfg.recon)
            entropy = out.entropy_loss if cfg.quantizer.has_soft else None
            bundle = assemble_loss(recon, out.quant_loss, entropy, cfg.loss)
            tape.backward(bundle.total)
        state.optimizer.step(lr)
    except NumericError as exc:
        raise TrainingDivergedError(f"step {state.step}: {exc}", state.last_checkpoint) from exc
    state.step += 1
    log.debug("step %d lr %.3g loss %.5f", state.step, lr, bundle.total.item())
    return bundle, out


def mid_epoch(epochs: int) -> int:
    """Epoch after which mid.ibqa is written; a one-epoch run writes it at the end."""
    return max(1, epochs // 2)


def load_dataset(cfg: RunConfig) -> ImageDataset:
    if cfg.data.source is DataSource.FOLDER:
        dataset = load_ppm_folder(cfg.data.path, cfg.data.size)
    else:
        dataset = synth_generate(cfg.data.n, cfg.data.size, cfg.data.seed, cfg.data.num_classes)
    dataset.check_divisible(cfg.tokenizer.downsample)
    return dataset


@dataclass
class EvalResult:
    """Held-out metrics of one evaluation pass."""
    psnr: float
    usage: UsageStats
    gap: float
    indices: np.ndarray
    reconstructions: np.ndarray
    features: np.ndarray = field(repr=False, default=None)

    def row(self) -> Dict[str, float]:
        return {"usage": self.usage.usage, "perplexity": self.usage.perplexity, "psnr_val": self.psnr}


def codebook_matrix(model: TokenizerModel) -> np.ndarray:
    if isinstance(model.codebook, LfqCodebook):
        return model.codebook.codes()
    return model.codebook.embeddings.data


def evaluate_tokenizer(model: TokenizerModel, dataset: ImageDataset, batch: int = 64,
                       softvq_mode: SoftVQMode = SoftVQMode.HARD, tau: Optional[float] = None,
                       keep: int = 16, prefetch: bool = False) -> EvalResult:
    """One pass over a dataset: PSNR, usage, perplexity and distribution gap.

    Soft VQ models quantize with hard selection unless softvq_mode is SOFT.
    The first `keep` reconstructions and all indices are returned for export.
    """
    settings = model.settings(training=softvq_mode is SoftVQMode.SOFT, tau=tau)
    usage = UsageAccumulator(model.codebook.size)
    recon, indices, features = [], [], []
    n_features = 0
    with no_grad():
        for idx, images in gather_batches(dataset.images, iterate_batches(len(dataset), batch), prefetch):
            x = Tensor(images)
            x_hat, out, z = model(x, settings)
            usage.update(out.indices)
            recon.append(x_hat.data)
            indices.append(out.indices.reshape(len(idx), -1))
            if n_features < FEATURE_SAMPLE:
                features.append(z.data[:FEATURE_SAMPLE - n_features])
                n_features += len(features[-1])
    recon_all = np.concatenate(recon)
    sample = np.concatenate(features)
    return EvalResult(
        psnr=psnr(recon_all, dataset.images),
        usage=usage.stats(),
        gap=distribution_gap(codebook_matrix(model), sample),
        indices=np.concatenate(indices),
        reconstructions=recon_all[:keep],
        features=sample,
    )


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: Path
    rows: List[Dict[str, float]]
    state: TrainState

    @property
    def final(self) -> Dict[str, float]:
        return self.rows[-1] if self.rows else {}


def train_tokenizer(cfg: RunConfig, dataset: Optional[ImageDataset] = None, out_dir: Optional[Path] = None,
                    resume: bool = False, stop_after: Optional[int] = None,
                    progress: Optional[ProgressHook] = None) -> TrainResult:
    """Train the tokenizer for cfg.optim.epochs epochs.

    Args:
        cfg: Resolved run configuration.
        dataset: Images to use instead of the configured source.
        out_dir: Output folder, default cfg.output.dir.
        resume: Continue from out_dir/last.ibqa when it exists.
        stop_after: Stop once this many epochs ran in this call.
        progress: Called with (step, total_steps) after every step.

    Returns:
        TrainResult: Final checkpoint, metrics file and the per-epoch rows.

    Raises:
        TrainingDivergedError: On NaN/Inf, naming the last good checkpoint.
    """
    out = Path(out_dir) if out_dir is not None else cfg.output_dir
    save_resolved(cfg, out)
    dataset = dataset if dataset is not None else load_dataset(cfg)
    train, val = dataset.split(cfg.data.seed, cfg.data.held_out)
    steps_per_epoch = math.ceil(len(train) / cfg.optim.batch)
    state = TrainState.create(cfg, cfg.optim.epochs * steps_per_epoch)

    last = out / LAST_CHECKPOINT
    if resume and last.exists():
        ckpt = Checkpoint(last)
        ckpt.load_model(state.model)
        ckpt.load_optimizer(state.optimizer)
        state.step, state.epoch = ckpt.counter("step"), ckpt.counter("epoch")
        state.last_checkpoint = last
        log.info("resuming from %s at epoch %d, step %d", last, state.epoch, state.step)
    metrics = MetricsCSV(out / METRICS_FILE, TOKENIZER_COLUMNS, resume=resume and state.step > 0)
    if state.step > 0:
        metrics.truncate_after(state.step)

    rng = Rng(cfg.seed)
    rows: List[Dict[str, float]] = []
    ran = 0
    log.info("training %s tokenizer: %d train / %d val images, %d steps", cfg.tokenizer.quantizer.value,
             len(train), len(val), state.total_steps)
    while state.epoch < cfg.optim.epochs and (stop_after is None or ran < stop_after):
        sums = {"loss_total": 0.0, "loss_recon": 0.0, "loss_quant": 0.0, "loss_entropy": 0.0}
        count = 0
        lr = lr_schedule(state.step, state.total_steps, cfg.optim)
        order = iterate_batches(len(train), cfg.optim.batch, rng.at(Stream.SHUFFLE, state.epoch))
        for _, batch in gather_batches(train.images, order, prefetch=not cfg.deterministic):
            lr = lr_schedule(state.step, state.total_steps, cfg.optim)
            bundle, _ = tokenizer_step(state, batch)
            for key, value in bundle.values().items():
                sums[key] += value
            count += 1
            if progress is not None:
                progress(state.step, state.total_steps)
        state.epoch += 1
        ran += 1

        result = evaluate_tokenizer(state.model, val, cfg.optim.batch, tau=state.tau())
        row = {"step": state.step, "epoch": state.epoch, "lr": lr}
        row.update({key: value / count for key, value in sums.items()})
        row.update(result.row())
        metrics.append(row)
        rows.append(row)
        log.info("epoch %d/%d loss %.4f recon %.4f usage %.3f perplexity %.1f psnr %.2f dB",
                 state.epoch, cfg.optim.epochs, row["loss_total"], row["loss_recon"],
                 row["usage"], row["perplexity"], row["psnr_val"])

        state.last_checkpoint = save_checkpoint(last, cfg, state.model, state.optimizer, state.counters())
        if state.epoch == mid_epoch(cfg.optim.epochs):
            save_checkpoint(out / MID_CHECKPOINT, cfg, state.model, state.optimizer, state.counters())
    return TrainResult(checkpoint=last, metrics=out / METRICS_FILE, rows=rows, state=state)


def load_tokenizer(path) -> Tuple[TokenizerModel, Checkpoint]:
    """Rebuild a tokenizer from a checkpoint's embedded config and parameters."""
    ckpt = Checkpoint(path)
    cfg = ckpt.config
    model = TokenizerModel(cfg.tokenizer, cfg.data.size, cfg.seed)
    ckpt.load_model(model)
    return model, ckpt


def checkpoint_tau(ckpt: Checkpoint) -> Optional[float]:
    """Soft VQ temperature at the step a checkpoint was written."""
    total = ckpt.counter("total_steps")
    if total <= 0:
        return None
    t = ckpt.config.tokenizer
    return softvq_temperature(min(ckpt.counter("step"), total), total, t.tau_start, t.tau_end)
