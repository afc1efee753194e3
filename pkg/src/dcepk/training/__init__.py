from .data import PatchSampler, Subject, TrainingSet, UnpairedBatch, sample_patches
from .losses import cycle_loss, lsgan_losses, physics_loss, supervised_loss
from .loop import (
    Inference, TrainConfig, TrainMode, TrainState, build_state, epoch_means, infer, load_state, read_loss_csv,
    save_state, train,
)
from .physics_ops import tk_signal

__all__ = [
    "Subject", "TrainingSet", "UnpairedBatch", "PatchSampler", "sample_patches",
    "cycle_loss", "lsgan_losses", "supervised_loss", "physics_loss", "tk_signal",
    "TrainConfig", "TrainMode", "TrainState", "build_state", "train", "infer", "Inference",
    "save_state", "load_state", "epoch_means", "read_loss_csv",
]
