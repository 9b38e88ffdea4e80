"""Decision-level fusion of a text CNN and an image CNN for multi-label
product classification, built on a small numpy autodiff core."""

from .datagen import Dataset, GenSpec, gen_synthetic, load_dataset, save_dataset, split
from .evalkit import CorrectnessVectors, EvalReport, oracle_accuracy, quadrant_report
from .fusion import (
    Policy,
    PolicyConfig,
    PredictionPairs,
    fixed_max,
    fixed_mean,
    fused_accuracy,
    make_policy_dataset,
    train_policy,
)
from .image_net import ImageNetConfig, VGGNet
from .losses import weighted_sigmoid_ce
from .tensor import Tensor
from .text_net import TextCNN, TextNetConfig

__version__ = "0.1.0"

__all__ = [
    "CorrectnessVectors",
    "Dataset",
    "EvalReport",
    "GenSpec",
    "ImageNetConfig",
    "Policy",
    "PolicyConfig",
    "PredictionPairs",
    "Tensor",
    "TextCNN",
    "TextNetConfig",
    "VGGNet",
    "fixed_max",
    "fixed_mean",
    "fused_accuracy",
    "gen_synthetic",
    "load_dataset",
    "make_policy_dataset",
    "oracle_accuracy",
    "quadrant_report",
    "save_dataset",
    "split",
    "train_policy",
    "weighted_sigmoid_ce",
]
