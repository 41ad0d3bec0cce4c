"""Denoise noisy images and detect salient objects with two coupled GANs."""

from .config import RunConfig, TrainConfig, load_config
from .data import NoiseModel, SampleTriplet, corrupt_gaussian, make_shapes_corpus
from .estimator import DSALGAN, GaussianNoise
from .evaluation import MetricsReport, evaluate_model
from .losses import LossReport, LossWeights
from .nets import LayerSpec, NetworkSpec
from .train import Checkpoint, run_schedule

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "DSALGAN", "GaussianNoise", "LayerSpec", "LossReport", "LossWeights",
    "MetricsReport", "NetworkSpec", "NoiseModel", "RunConfig", "SampleTriplet", "TrainConfig",
    "corrupt_gaussian", "evaluate_model", "load_config", "make_shapes_corpus", "run_schedule",
]
