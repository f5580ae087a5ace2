"""Operator learning with multiple input functions."""

from .dataset import Dataset, GenerationParams, batch_iter, generate, split
from .models import KINDS, ModelSpec, OperatorModel, build, match_parameter_counts, parameter_count
from .training import CompareConfig, TrainConfig, compare, evaluate_field, mse, train

__version__ = "0.1.0"
