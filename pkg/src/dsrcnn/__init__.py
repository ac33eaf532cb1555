"""Deeply supervised recurrent convolutional network for salient object detection."""

from .metrics import evaluate_dataset, evaluate_image, mae, weighted_f
from .model import ModelConfig, build_model, forward, load_weights, predict, save_weights
from .rcl import RclParams, rcl_forward
from .tensor import ConvParams, Tensor, backward
from .training import SgdConfig, train

__version__ = "0.1.0"

__all__ = [
    "ConvParams", "ModelConfig", "RclParams", "SgdConfig", "Tensor",
    "backward", "build_model", "evaluate_dataset", "evaluate_image", "forward",
    "load_weights", "mae", "predict", "rcl_forward", "save_weights", "train", "weighted_f",
]
