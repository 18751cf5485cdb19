"""
ar/train.py
Stage-2 training: next-token NLL with AdamW and gradient clipping, held-out
NLL each epoch, checkpoints and the metrics CSV.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from ..checkpoint import Checkpoint, save_checkpoint
from ..config import RunConfig, save_resolved
from ..core.errors import ConfigError, NumericError, TrainingDivergedError
from ..core.optim import Adam
from ..core.rng import Rng, Stream
from ..core.tensor import Tape, no_grad
from ..data.csvlog import AR_COLUMNS, MetricsCSV
from ..data.dataset import gather_batches, iterate_batches
from ..data.tokens import TokenDataset, read_tokens
from .config import ARConfig, ar_config_from_section, ar_param_count
from .model import ARModel, ar_forward

log = logging.getLogger(__name__)

AR_DIR = "ar"
LAST_CHECKPOINT = "last.ibqa"
METRICS_FILE = "metrics.csv"
LR_REFERENCE_BATCH = 256

ProgressHook = Callable[[int, int], None]


def ar_lr(cfg: RunConfig) -> float:
    a = cfg.ar
    return a.lr * a.batch / LR_REFERENCE_BATCH if a.scale_lr_with_batch else a.lr


def load_token_data(cfg: RunConfig) -> TokenDataset:
    if cfg.ar.tokens is None:
        raise ConfigError("ar.tokens is not set; run `ibq-lab tokenize` first and point ar.tokens at its output")
    return read_tokens(cfg.ar.tokens)


def check_tokenizer_compat(checkpoint: Union[str, Path], tokens: TokenDataset):
    """Compare the token data with the tokenizer checkpoint that should have produced it.

    Raises:
        ConfigError: Naming both sides of a vocabulary or sequence-length mismatch.
    """
    tcfg = Checkpoint(checkpoint).config
    vocab = tcfg.tokenizer.codebook_size
    seq_len = (tcfg.data.size // tcfg.tokenizer.downsample) ** 2
    if vocab != tokens.vocab_size:
        raise ConfigError(f"tokenizer {checkpoint} has K={vocab} but the token data has K={tokens.vocab_size}")
    if seq_len != tokens.seq_len:
        raise ConfigError(f"tokenizer {checkpoint} makes {seq_len} tokens per image, token data has {tokens.seq_len}")


@dataclass
class ARTrainState:
    config: RunConfig
    model: ARModel
    optimizer: Adam
    total_steps: int
    step: int = 0
    epoch: int = 0
    last_checkpoint: Optional[Path] = None

    @classmethod
    def create(cls, cfg: RunConfig, shape: ARConfig, total_steps: int) -> "ARTrainState":
        model = ARModel(shape, cfg.seed)
        a = cfg.ar
        optimizer = Adam(model.parameters(), lr=ar_lr(cfg), betas=tuple(a.betas),
                         weight_decay=a.weight_decay, clip_norm=a.clip_norm)
        return cls(config=cfg, model=model, optimizer=optimizer, total_steps=total_steps)

    def counters(self) -> Dict[str, int]:
        shape = self.model.config
        return {"step": self.step, "epoch": self.epoch, "total_steps": self.total_steps,
                "vocab_size": shape.vocab_size, "seq_len": shape.seq_len, "num_classes": shape.num_classes}


def ar_step(state: ARTrainState, tokens: np.ndarray, labels: np.ndarray) -> float:
    """One AdamW step on a batch; returns its NLL.

    Raises:
        TrainingDivergedError: If any value becomes NaN or Inf.
    """
    rng = Rng(state.config.seed).at(Stream.DROPOUT, state.step)
    state.model.train()
    state.optimizer.zero_grad()
    try:
        with Tape() as tape:
            _, nll = ar_forward(state.model, tokens, labels, rng)
            tape.backward(nll)
        state.optimizer.step()
    except NumericError as exc:
        raise TrainingDivergedError(f"step {state.step}: {exc}", state.last_checkpoint) from exc
    state.step += 1
    return nll.item()


def evaluate_ar(model: ARModel, dataset: TokenDataset, batch: int = 64) -> float:
    """Mean per-token NLL over a dataset, dropout off."""
    was_training = model.training
    model.eval()
    total = 0.0
    try:
        with no_grad():
            for idx in iterate_batches(len(dataset), batch):
                _, nll = ar_forward(model, dataset.tokens[idx], dataset.labels[idx])
                total += nll.item() * len(idx)
    finally:
        model.train(was_training)
    return total / len(dataset)


@dataclass
class ARTrainResult:
    checkpoint: Path
    metrics: Path
    rows: List[Dict[str, float]]
    state: ARTrainState

    @property
    def final(self) -> Dict[str, float]:
        return self.rows[-1] if self.rows else {}


def train_ar(cfg: RunConfig, tokens: Optional[TokenDataset] = None, out_dir: Optional[Path] = None,
             resume: bool = False, stop_after: Optional[int] = None,
             progress: Optional[ProgressHook] = None) -> ARTrainResult:
    """Train the transformer on a token dataset for cfg.ar.epochs epochs.

    Raises:
        ConfigError: On a vocabulary or length mismatch with the tokenizer or ar.vocab_size.
        TrainingDivergedError: On NaN/Inf, naming the last good checkpoint.
    """
    out = Path(out_dir) if out_dir is not None else cfg.output_dir / AR_DIR
    tokens = tokens if tokens is not None else load_token_data(cfg)
    if cfg.ar.tokenizer_checkpoint:
        check_tokenizer_compat(cfg.ar.tokenizer_checkpoint, tokens)
    shape = ar_config_from_section(cfg.ar, tokens.vocab_size, tokens.seq_len, tokens.num_classes)
    save_resolved(cfg, out)
    train, val = tokens.split(cfg.seed, cfg.ar.held_out)
    steps_per_epoch = math.ceil(len(train) / cfg.ar.batch)
    state = ARTrainState.create(cfg, shape, cfg.ar.epochs * steps_per_epoch)

    last = out / LAST_CHECKPOINT
    if resume and last.exists():
        ckpt = Checkpoint(last)
        ckpt.load_model(state.model)
        ckpt.load_optimizer(state.optimizer)
        state.step, state.epoch = ckpt.counter("step"), ckpt.counter("epoch")
        state.last_checkpoint = last
        log.info("resuming from %s at epoch %d, step %d", last, state.epoch, state.step)
    metrics = MetricsCSV(out / METRICS_FILE, AR_COLUMNS, resume=resume and state.step > 0)
    if state.step > 0:
        metrics.truncate_after(state.step)

    log.info("training AR d=%d w=%d h=%d (%d parameters) on %d sequences of %d tokens, K=%d",
             shape.depth, shape.width, shape.heads, ar_param_count(shape), len(train), shape.seq_len,
             shape.vocab_size)
    rng = Rng(cfg.seed)
    lr = ar_lr(cfg)
    rows: List[Dict[str, float]] = []
    ran = 0
    while state.epoch < cfg.ar.epochs and (stop_after is None or ran < stop_after):
        total, count = 0.0, 0
        order = iterate_batches(len(train), cfg.ar.batch, rng.at(Stream.SHUFFLE, state.epoch))
        for idx, batch in gather_batches(train.tokens, order, prefetch=not cfg.deterministic):
            total += ar_step(state, batch, train.labels[idx]) * len(idx)
            count += len(idx)
            if progress is not None:
                progress(state.step, state.total_steps)
        state.epoch += 1
        ran += 1

        row = {"step": state.step, "epoch": state.epoch, "lr": lr, "nll_train": total / count,
               "nll_eval": evaluate_ar(state.model, val, cfg.ar.batch)}
        metrics.append(row)
        rows.append(row)
        log.info("epoch %d/%d nll train %.4f eval %.4f (ln K = %.4f)", state.epoch, cfg.ar.epochs,
                 row["nll_train"], row["nll_eval"], math.log(shape.vocab_size))
        state.last_checkpoint = save_checkpoint(last, cfg, state.model, state.optimizer, state.counters())
    return ARTrainResult(checkpoint=last, metrics=out / METRICS_FILE, rows=rows, state=state)


def load_ar(path: Union[str, Path]) -> Tuple[ARModel, Checkpoint]:
    """Rebuild a transformer from a checkpoint's embedded config and shape counters."""
    ckpt = Checkpoint(path)
    vocab, seq_len, classes = (ckpt.counter(name) for name in ("vocab_size", "seq_len", "num_classes"))
    if min(vocab, seq_len, classes) < 1:
        raise ConfigError(f"{path} is not an AR checkpoint (no model shape recorded)")
    shape = ar_config_from_section(ckpt.config.ar, vocab, seq_len, classes)
    model = ARModel(shape, ckpt.config.seed)
    ckpt.load_model(model)
    model.eval()
    return model, ckpt
