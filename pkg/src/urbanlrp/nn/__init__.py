from .checkpoint import load_model, model_bytes, save_model
from .layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, ReLU, Softmax
from .model import (NetworkModel, argmax_label, backward, build_dense_model, build_model, loss_and_grads,
                    validate_canonical)
from .optim import NadamState, nadam_step, nadam_update
from .training import EarlyStopping, TrainConfig, TrainReport, train

__all__ = [
    "BatchNorm", "Conv2D", "Dense", "Dropout", "EarlyStopping", "Flatten", "MaxPool", "NadamState",
    "NetworkModel", "ReLU", "Softmax", "TrainConfig", "TrainReport", "argmax_label", "backward",
    "build_dense_model", "build_model", "load_model", "loss_and_grads", "model_bytes", "nadam_step",
    "nadam_update", "save_model", "train", "validate_canonical",
]
