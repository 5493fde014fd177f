from .network import (
    ModelConfig,
    ResidualClassifier,
    init_model,
    predict_multi,
    predict_volume_max,
)
from .loss import sigmoid, weighted_bce
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam",
    "ModelConfig",
    "ResidualClassifier",
    "init_model",
    "load_checkpoint",
    "predict_multi",
    "predict_volume_max",
    "save_checkpoint",
    "sigmoid",
    "weighted_bce",
]
