"""
checkpoint.py
Checkpoints are tensor archives holding the resolved config, the training
counters, the model parameters and the optimizer moments.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from .config import RunConfig, config_from_yaml, config_to_yaml
from .core.errors import ArchiveError
from .core.nn import Module
from .core.optim import Adam
from .data.archive import archive_load, archive_save, entry_text, text_entry

log = logging.getLogger(__name__)

CONFIG_ENTRY = "meta.config"
MODEL_PREFIX = "model."


def save_checkpoint(path: Union[str, Path], cfg: RunConfig, model: Module,
                    optimizer: Optional[Adam] = None, counters: Optional[Mapping[str, int]] = None) -> Path:
    entries: Dict[str, np.ndarray] = {CONFIG_ENTRY: text_entry(config_to_yaml(cfg))}
    for name, value in (counters or {}).items():
        entries[f"train.{name}"] = np.array([value], dtype=np.int64)
    entries.update(model.state_dict(prefix=MODEL_PREFIX))
    if optimizer is not None:
        entries.update(optimizer.state_dict())
    path = archive_save(path, entries)
    log.info("checkpoint written to %s", path)
    return path


class Checkpoint:
    """A loaded checkpoint: its config, counters and raw entries."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.entries = archive_load(self.path)
        if CONFIG_ENTRY not in self.entries:
            raise ArchiveError(f"{self.path}: no embedded config, not a checkpoint")
        self.config: RunConfig = config_from_yaml(entry_text(self.entries[CONFIG_ENTRY]))

    def counter(self, name: str, default: int = 0) -> int:
        value = self.entries.get(f"train.{name}")
        return default if value is None else int(value[0])

    def load_model(self, model: Module) -> Module:
        model.load_state_dict(self.entries, prefix=MODEL_PREFIX)
        return model

    def load_optimizer(self, optimizer: Adam) -> Adam:
        if "optim.step" not in self.entries:
            raise ArchiveError(f"{self.path}: no optimizer state to resume from")
        optimizer.load_state_dict(self.entries)
        return optimizer
