"""Predictive core: GT layers, multi-head graph attention, GRU, and training."""

from .layers import (GraphError, gat_backward, gat_forward, gru_backward, gru_forward,
                     gt_compose, gt_soft_select, gtn_backward, gtn_forward, lift_features,
                     mse_loss, predict_last)
from .network import (PARAM_ORDER, Forward, TrainConfig, forward_batch, init_params,
                      loss_and_grads, modality_index, permute_channels)
from .train import (ModelState, TrainingError, adam_step, channel_scaling, forward, load_checkpoint,
                    save_checkpoint, train, training_windows)

loss = mse_loss

__all__ = [
    "GraphError", "gat_backward", "gat_forward", "gru_backward", "gru_forward", "gt_compose",
    "gt_soft_select", "gtn_backward", "gtn_forward", "lift_features", "mse_loss", "loss",
    "predict_last", "PARAM_ORDER", "Forward", "TrainConfig", "forward_batch", "init_params",
    "loss_and_grads", "modality_index", "permute_channels", "ModelState", "TrainingError",
    "adam_step", "channel_scaling", "forward", "load_checkpoint", "save_checkpoint", "train", "training_windows",
]
