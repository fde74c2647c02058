"""Tensor files, QA datasets, synthetic corpora and checkpoints."""

from .tensorfile import TensorFileError, decode_tensor, encode_tensor, read_tensor_file, write_tensor_file
from .dataset import (
    N_ANSWERS,
    PAD,
    UNK,
    DatasetError,
    QAItem,
    Vocabulary,
    is_validation,
    load_dataset,
    split_items,
)
from .checkpoint import CheckpointError, load_checkpoint, load_into, save_checkpoint, save_module
from .synthetic import SyntheticSpec, generate_synthetic, tone_frequencies, weak_label_corpus

__all__ = [
    "CheckpointError",
    "DatasetError",
    "N_ANSWERS",
    "PAD",
    "QAItem",
    "SyntheticSpec",
    "TensorFileError",
    "UNK",
    "Vocabulary",
    "decode_tensor",
    "encode_tensor",
    "generate_synthetic",
    "is_validation",
    "load_checkpoint",
    "load_dataset",
    "load_into",
    "read_tensor_file",
    "save_checkpoint",
    "save_module",
    "split_items",
    "tone_frequencies",
    "weak_label_corpus",
]
