"""Trainable recurrent mask refiner: targets, network, optimizer, training."""

from .targets import ideal_amplitude_mask, logit_transform  # noqa: F401
from .network import (  # noqa: F401
    RefinerParams,
    forward,
    gradients,
    init_params,
    loss,
)
from .optimizer import OptimizerState, nadam_step  # noqa: F401
from .training import TrainConfig, TrainingBatch, TrainingDiverged, train  # noqa: F401
from .serialize import load_model, save_model  # noqa: F401
