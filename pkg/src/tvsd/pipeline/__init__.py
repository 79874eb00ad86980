"""Network assembly, training, inference and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, model_from_checkpoint, save_checkpoint
from .config import ABLATIONS, AblationFlags, Config, DataConfig, TrainConfig, fixture_config, load_config
from .inference import infer_dataset, infer_frame, partner_indices, predict_index, running_mean
from .model import ForwardOutput, TVSDNet, compute_losses, forward_triple
from .train import lr_factor, read_loss_log, train

__all__ = [
    "ABLATIONS",
    "AblationFlags",
    "Checkpoint",
    "Config",
    "DataConfig",
    "ForwardOutput",
    "TVSDNet",
    "TrainConfig",
    "compute_losses",
    "fixture_config",
    "forward_triple",
    "infer_dataset",
    "infer_frame",
    "load_checkpoint",
    "load_config",
    "lr_factor",
    "model_from_checkpoint",
    "partner_indices",
    "predict_index",
    "read_loss_log",
    "running_mean",
    "save_checkpoint",
    "train",
]
