"""Contrastive video graph transformer for video question answering."""

from .model import CoVGT, ModelConfig
from .training import TrainConfig, evaluate, pretrain, train

__all__ = ["CoVGT", "ModelConfig", "TrainConfig", "evaluate", "pretrain", "train"]
__version__ = "0.1.0"
