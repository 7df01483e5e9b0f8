"""Multi-prototype latent space refinement and latent augmentation for spoof detection."""
from .core_math import ConfigurationError, DomainError, RngStream, cosine_sim, softmax_weights
from .losses import (
    BONAFIDE,
    SPOOF,
    LossHyper,
    LossReport,
    PrototypeBank,
    inter_reg,
    intra_reg,
    lsr_loss,
    objective,
    proto_loss,
    renormalize,
    smoothed_max_cos,
    wce_loss,
)
from .augment import augment_batch, nearest_spoof_prototype
from .data import DatasetSpec, generate, split_unseen
from .metrics import ScoreRecord, compute_eer, proto_diagnostics, roc_points, score_sample
from .encoder import Trainer, TrainConfig, train, train_step
from .experiments import ExperimentConfig, ablate_aug, ablate_loss, sweep_prototypes

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DomainError", "RngStream", "cosine_sim", "softmax_weights",
    "BONAFIDE", "SPOOF", "LossHyper", "LossReport", "PrototypeBank", "inter_reg", "intra_reg", "lsr_loss",
    "objective", "proto_loss", "renormalize", "smoothed_max_cos", "wce_loss",
    "augment_batch", "nearest_spoof_prototype",
    "DatasetSpec", "generate", "split_unseen",
    "ScoreRecord", "compute_eer", "proto_diagnostics", "roc_points", "score_sample",
    "Trainer", "TrainConfig", "train", "train_step",
    "ExperimentConfig", "ablate_aug", "ablate_loss", "sweep_prototypes",
]
