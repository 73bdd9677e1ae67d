"""Feature selection by evolving the input layer of a sparse MLP."""

from .data import Dataset, SyntheticSpec, gen_synthetic, load_csv, load_idx, scale_minmax, scale_standard, split
from .evolution import EvolutionConfig, SelectionResult, run
from .network import NetConfig
from .sparse import Topology, er_init, param_count, training_flops

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EvolutionConfig", "NetConfig", "SelectionResult", "SyntheticSpec", "Topology",
    "er_init", "gen_synthetic", "load_csv", "load_idx", "param_count", "run",
    "scale_minmax", "scale_standard", "split", "training_flops",
]
