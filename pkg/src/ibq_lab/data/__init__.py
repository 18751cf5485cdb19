"""
data
Datasets, image files and every on-disk format of the lab.
"""

from .archive import archive_bytes, archive_load, archive_save, entry_text, parse_archive, text_entry
from .csvlog import AR_COLUMNS, COMPARE_COLUMNS, TOKENIZER_COLUMNS, MetricsCSV
from .dataset import DataSource, ImageDataset, gather_batches, iterate_batches
from .ppm import decode_ppm, encode_ppm, load_ppm_folder, read_ppm, write_ppm
from .synthetic import synth_generate
from .tokens import TokenDataset, parse_tokens, read_tokens, token_bytes, write_tokens

__all__ = [
    "AR_COLUMNS", "COMPARE_COLUMNS", "DataSource", "ImageDataset", "MetricsCSV", "TOKENIZER_COLUMNS",
    "TokenDataset", "archive_bytes", "archive_load", "archive_save", "decode_ppm", "encode_ppm",
    "entry_text", "gather_batches", "iterate_batches", "load_ppm_folder", "parse_archive", "parse_tokens", "read_ppm",
    "read_tokens", "synth_generate", "text_entry", "token_bytes", "write_ppm", "write_tokens",
]
