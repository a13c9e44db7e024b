"""Sparse gradient descent for shifted-ReLU networks via half-space reporting."""

__version__ = "0.1.0"

from .data import Dataset, export_csv, gen_separated, ingest_csv, normalize_rows
from .geometry import HsrIndex, hsr_delete, hsr_init, hsr_insert, hsr_query
from .model import NetworkState, ShiftPolicy, forward, init_network
from .numerics import Rng
from .trainer import TrainConfig, TrainTrace, train

__all__ = [
    "Dataset",
    "HsrIndex",
    "NetworkState",
    "Rng",
    "ShiftPolicy",
    "TrainConfig",
    "TrainTrace",
    "export_csv",
    "forward",
    "gen_separated",
    "hsr_delete",
    "hsr_init",
    "hsr_insert",
    "hsr_query",
    "ingest_csv",
    "init_network",
    "normalize_rows",
    "train",
]
