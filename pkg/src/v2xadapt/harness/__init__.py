"""Toy-scale end-to-end pipeline: synthetic data, toy encoders, training, exports."""
from .config import ABLATIONS, RunConfig, SyntheticConfig, load_config
from .data import SyntheticDataset, decode_tokens, generate_synthetic, split_holdout
from .exports import (
    attention_traces,
    diagonal_dominant,
    eval_samples,
    export_attention,
    export_embeddings,
    separation_statistic,
    timing_report,
)
from .model import Teacher, ToyModel
from .train import RunArtifacts, save_run, train

__all__ = [
    "ABLATIONS", "RunConfig", "SyntheticConfig", "load_config",
    "SyntheticDataset", "decode_tokens", "generate_synthetic", "split_holdout",
    "attention_traces", "diagonal_dominant", "eval_samples", "export_attention",
    "export_embeddings", "separation_statistic", "timing_report",
    "Teacher", "ToyModel", "RunArtifacts", "save_run", "train",
]
