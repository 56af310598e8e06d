"""Desk-scale federated training that produces real gradient message matrices."""

from .data import NodeDataset, generate_synthetic, load_idx, load_fashion_mnist, partition
from .model import MLP, SoftmaxLinear, make_model
from .sim import FLConfig, RunLog, momentum_step, run_federated, train_centralized

__all__ = [
    "FLConfig", "MLP", "NodeDataset", "RunLog", "SoftmaxLinear", "generate_synthetic",
    "load_fashion_mnist", "load_idx", "make_model", "momentum_step", "partition",
    "run_federated", "train_centralized",
]
