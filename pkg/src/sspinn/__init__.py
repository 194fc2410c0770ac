"""Physics-informed solver for backwards self-similar blow-up profiles."""

__version__ = "0.1.0"

from .field_model import (ConfigurationError, ParameterLayout, ParityTag, eval_jet2, eval_jets,
                          init_model, load_checkpoint, save_checkpoint)
from .problems import get_problem
from .sampling import build_collocation
from .optim import Schedule, train
from .loss import LossAssembler, total_cost

__all__ = [
    "ConfigurationError", "LossAssembler", "ParameterLayout", "ParityTag", "Schedule",
    "build_collocation", "eval_jet2", "eval_jets", "get_problem", "init_model",
    "load_checkpoint", "save_checkpoint", "total_cost", "train",
]
