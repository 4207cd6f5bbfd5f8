"""Desk-scale training laboratory for the Alpha-Net architecture family:
alpha blocks with stochastic inter-block connectivity, combined-kernel
convolutions, stochastic pooling, AM-Softmax loss variants, and the
three comparable input normalizations, plus a training/evaluation
harness and experiment sweep CLI."""

from .rng import PrngStream
from .losses import LossConfig
from .graph import build_network, Network, NetworkSpec
from .trainer import TrainConfig, train, evaluate_top1
from .experiment import ExperimentConfig, run_experiment, sweep

__version__ = "0.1.0"

__all__ = [
    "PrngStream",
    "LossConfig",
    "build_network",
    "Network",
    "NetworkSpec",
    "TrainConfig",
    "train",
    "evaluate_top1",
    "ExperimentConfig",
    "run_experiment",
    "sweep",
]
