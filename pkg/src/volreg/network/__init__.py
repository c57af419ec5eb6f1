"""Volume-to-surface registration network and its training loop."""

from .check import network_gradcheck, op_gradchecks, synthetic_sample
from .config import ConfigError, NetworkConfig, TrainConfig, load_config, toy_network
from .layers import (Neighborhood, attention_weights, deformation_aware_cross_attention, edge_conv,
                     relative_point_attention, upsampling_cross_attention)
from .loss import level_targets, mse, multilevel_loss
from .model import ModelInputError, Plan, VolRegNet, build_plan
from .params import ParamError, Params
from .train import Trainer, TrainingError, TrainingSample, load_model, sample_loss, train

__all__ = [
    "ConfigError", "ModelInputError", "Neighborhood", "NetworkConfig", "ParamError", "Params", "Plan",
    "TrainConfig", "Trainer", "TrainingError", "TrainingSample", "VolRegNet", "attention_weights", "build_plan",
    "deformation_aware_cross_attention", "edge_conv", "level_targets", "load_config", "load_model", "mse",
    "multilevel_loss", "network_gradcheck", "op_gradchecks", "relative_point_attention", "sample_loss", "synthetic_sample", "toy_network", "train",
    "upsampling_cross_attention",
]
