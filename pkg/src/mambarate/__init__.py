"""MOS prediction from precomputed speech embeddings with RBF-coded targets."""

__version__ = "0.1.0"

from .data import (
    DatasetSplit,
    EmbeddingSequence,
    RatingRecord,
    aggregate_rating,
    load_embedding,
    load_manifest,
    make_split,
    write_embedding,
)
from .model import MambaRate, ModelConfig, parameter_count
from .rbf import RbfConfig, centers, decode, encode
from .train import TrainConfig, TrainingData, train
from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .metrics import MetricReport, ScorePair, kendall_tau, mse, pearson, spearman

__all__ = [
    "DatasetSplit", "EmbeddingSequence", "RatingRecord", "aggregate_rating", "load_embedding",
    "load_manifest", "make_split", "write_embedding", "MambaRate", "ModelConfig",
    "parameter_count", "RbfConfig", "centers", "decode", "encode", "TrainConfig",
    "TrainingData", "train", "ModelCheckpoint", "load_checkpoint", "save_checkpoint",
    "MetricReport", "ScorePair", "kendall_tau", "mse", "pearson", "spearman",
]
