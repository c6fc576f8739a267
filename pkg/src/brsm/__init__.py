"""Boosted recurrent sparse memory (bRSM) in numpy."""

from .config import RunConfig, preset
from .estimator import BRSMSequenceClassifier, BRSMTransformer
from .grammar import Grammar, ceiling_exact, ceiling_montecarlo
from .layer import LayerGeometry, LayerState, LayerWeights, PartitionSpec, RSMLayer

__version__ = "0.1.0"

__all__ = [
    "BRSMSequenceClassifier",
    "BRSMTransformer",
    "Grammar",
    "LayerGeometry",
    "LayerState",
    "LayerWeights",
    "PartitionSpec",
    "RSMLayer",
    "RunConfig",
    "ceiling_exact",
    "ceiling_montecarlo",
    "preset",
]
