"""
tokenizer
Stage 1: the convolutional autoencoder with a pluggable quantizer, its
training loop, evaluation and the tokenization pass.
"""

from .model import TokenizerModel, code_rows, decode, decode_tokens, encode, tokenizer_param_count
from .tokenize import tokenize_dataset, tokenize_images
from .train import (EvalResult, SoftVQMode, TrainResult, TrainState, checkpoint_tau, codebook_matrix,
                    evaluate_tokenizer, load_dataset, load_tokenizer, lr_schedule, tokenizer_step,
                    train_tokenizer)

__all__ = [
    "EvalResult", "SoftVQMode", "TokenizerModel", "TrainResult", "TrainState", "checkpoint_tau",
    "code_rows", "codebook_matrix", "decode", "decode_tokens", "encode", "evaluate_tokenizer",
    "load_dataset", "load_tokenizer", "lr_schedule", "tokenize_dataset", "tokenize_images",
    "tokenizer_param_count", "tokenizer_step", "train_tokenizer",
]
