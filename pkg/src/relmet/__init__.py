"""Metric-learning embeddings for open-set relation discovery.

Train a small convolutional sentence encoder with ranked list loss (plus
optional virtual adversarial training), cluster held-out novel classes, and
score the clustering with B-cubed precision/recall/F1.
"""

from .clustering import ClusterAssignment, estimate_bandwidth, kmeans, mean_shift
from .data import (
    Dataset,
    EncodedBatch,
    Instance,
    SamplerConfig,
    Vocabulary,
    build_vocab,
    encode_inputs,
    insert_entity_markers,
    load_jsonl,
    sample_episode,
    save_jsonl,
    synth_generate,
)
from .encoder import (
    EncoderConfig,
    EncoderParams,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .evaluation import B3Scores, b3_scores
from .metric_loss import (
    AnchorLossBreakdown,
    LossConfig,
    negative_weights,
    pairwise_distances,
    rll_anchor,
    rll_batch,
)
from .trainer import AdamState, DivergenceError, TrainConfig, adam_step, train
from .vat import VatConfig, random_probe, total_loss, vat_loss, worst_case_perturbation

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AnchorLossBreakdown",
    "B3Scores",
    "ClusterAssignment",
    "Dataset",
    "DivergenceError",
    "EncodedBatch",
    "EncoderConfig",
    "EncoderParams",
    "Instance",
    "LossConfig",
    "SamplerConfig",
    "TrainConfig",
    "VatConfig",
    "Vocabulary",
    "adam_step",
    "b3_scores",
    "backward",
    "build_vocab",
    "encode_inputs",
    "estimate_bandwidth",
    "forward",
    "init_params",
    "insert_entity_markers",
    "kmeans",
    "load_checkpoint",
    "load_jsonl",
    "mean_shift",
    "negative_weights",
    "pairwise_distances",
    "random_probe",
    "rll_anchor",
    "rll_batch",
    "sample_episode",
    "save_checkpoint",
    "save_jsonl",
    "synth_generate",
    "total_loss",
    "train",
    "vat_loss",
    "worst_case_perturbation",
]
