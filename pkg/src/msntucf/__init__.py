"""Sparse 3-mode tensor completion with attention-augmented Tucker factorization."""

from . import autodiff, cli, metrics, model, ops, preprocess, sparse, synthetic, training
from .autodiff import Node, Parameter, Tape, backward
from .errors import ConfigError, DataError, ParseError, TrainingError, ValidationError
from .metrics import MetricsReport
from .model import ModelConfig, MsntucfParams, NeutucfParams, init_params
from .preprocess import NormalizationParams
from .sparse import DataSplit, Entry, SparseTensor, TensorShape, load_wsdream
from .synthetic import GeneratorSpec, generate
from .training import TrainConfig, TrainTrace

__version__ = "0.1.0"

__all__ = [
    "autodiff", "cli", "metrics", "model", "ops", "preprocess", "sparse",
    "synthetic", "training",
    "Node", "Parameter", "Tape", "backward",
    "ConfigError", "DataError", "ParseError", "TrainingError", "ValidationError",
    "MetricsReport", "ModelConfig", "MsntucfParams", "NeutucfParams", "init_params",
    "NormalizationParams", "DataSplit", "Entry", "SparseTensor", "TensorShape",
    "load_wsdream", "GeneratorSpec", "generate", "TrainConfig", "TrainTrace",
]
