"""Multi-task mixture-of-experts multiple-instance learning (C++ core)."""

from ._core import *  # noqa: F401,F403
from ._core import (
    Bag,
    Model,
    ModelConfig,
    ShapeMode,
    TrainConfig,
    Variant,
    auc,
    generate_synthetic,
    gradcheck,
    train,
)

__all__ = [
    "Bag",
    "Model",
    "ModelConfig",
    "ShapeMode",
    "TrainConfig",
    "Variant",
    "auc",
    "generate_synthetic",
    "gradcheck",
    "train",
]
