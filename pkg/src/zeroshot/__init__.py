"""Zero-shot image classifiers whose weights are predicted from class text."""

__version__ = "0.1.0"

from .datasets import FeatureStore, SplitSpec, load_features, make_split, save_features
from .evaluation import EvalReport, evaluate_protocol, pr_auc, roc_auc, top_k_accuracy
from .model import ModelConfig, ZeroShotModel, load_checkpoint, save_checkpoint
from .optim import TrainConfig, train

__all__ = [
    "EvalReport", "FeatureStore", "ModelConfig", "SplitSpec", "TrainConfig", "ZeroShotModel",
    "evaluate_protocol", "load_checkpoint", "load_features", "make_split", "pr_auc", "roc_auc",
    "save_checkpoint", "save_features", "top_k_accuracy", "train",
]
