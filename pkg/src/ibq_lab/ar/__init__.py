"""
ar
Stage 2: the class-conditional causal transformer over token indices.
"""

from .config import (PRESET_DEPTHS, ARConfig, ar_config_from_section, ar_param_count, ar_scale_config,
                     ffn_hidden, preset)
from .model import ARModel, Block, adaln_modulate, ar_forward, causal_softmax, rmsnorm, rope_apply
from .sample import ar_sample, check_pipeline, sample_images
from .train import ARTrainResult, ARTrainState, ar_step, evaluate_ar, load_ar, train_ar

__all__ = [
    "ARConfig", "ARModel", "ARTrainResult", "ARTrainState", "Block", "PRESET_DEPTHS", "adaln_modulate",
    "ar_config_from_section", "ar_forward", "ar_param_count", "ar_sample", "ar_scale_config", "ar_step",
    "causal_softmax", "check_pipeline", "evaluate_ar", "ffn_hidden", "load_ar", "preset", "rmsnorm",
    "rope_apply", "sample_images", "train_ar",
]
