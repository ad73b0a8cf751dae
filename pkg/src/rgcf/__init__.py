"""One-class collaborative filtering with variational Bayes over random hidden graphs."""

from .bpr import BprConfig, BprModel, bpr_train
from .estimators import BPR, RandomGraphVB
from .evaluation import EvalReport, evaluate, rank_score
from .exceptions import (
    ConfigurationError, ContractError, GenerationError, GraphParseError, IdMapError, NumericalError, RGCFError,
)
from .graph import BipartiteGraph, leave_one_out_split, load_edges, read_edges
from .inference import TrainConfig, VBTrainer, train
from .model import Posterior, load_posterior, save_posterior
from .prediction import ScoreMode, like_probability
from .sampling import build_histogram, sample_hidden_graph
from .synthetic import simulate_from_model

__version__ = "0.1.0"

__all__ = [
    "BPR", "RandomGraphVB", "BprConfig", "BprModel", "bpr_train", "EvalReport", "evaluate", "rank_score",
    "RGCFError", "ConfigurationError", "ContractError", "GenerationError", "GraphParseError", "IdMapError",
    "NumericalError", "BipartiteGraph", "leave_one_out_split", "load_edges", "read_edges", "TrainConfig",
    "VBTrainer", "train", "Posterior", "load_posterior", "save_posterior", "ScoreMode", "like_probability",
    "build_histogram", "sample_hidden_graph", "simulate_from_model",
]
