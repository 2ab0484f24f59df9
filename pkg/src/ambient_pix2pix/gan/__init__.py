from .checkpoint import load_checkpoint, save_checkpoint
from .losses import generator_adv, loss_cgan, loss_l1, total_loss
from .networks import DimensionError, Generator, NetConfig, PatchDiscriminator, build_networks
from .training import (TrainConfig, TrainState, TrainingDivergedError, init_state, train,
                       train_step, translate)

__all__ = [
    "DimensionError", "Generator", "NetConfig", "PatchDiscriminator", "TrainConfig", "TrainState",
    "TrainingDivergedError", "build_networks", "generator_adv", "init_state", "load_checkpoint",
    "loss_cgan", "loss_l1", "save_checkpoint", "total_loss", "train", "train_step", "translate",
]
