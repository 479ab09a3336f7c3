from .model import (
    ARCHITECTURES,
    Model,
    ModelSpec,
    build_model,
    forward,
    loss_and_grads,
    per_example_grads,
    predict,
    softmax,
)
from .train import History, TrainConfig, evaluate, train

__all__ = [
    "ARCHITECTURES",
    "History",
    "Model",
    "ModelSpec",
    "TrainConfig",
    "build_model",
    "evaluate",
    "forward",
    "loss_and_grads",
    "per_example_grads",
    "predict",
    "softmax",
    "train",
]
