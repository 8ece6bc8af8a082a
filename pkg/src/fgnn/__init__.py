"""Session-based next-item recommendation with weighted graph attention."""

from .baselines import ItemKNNRecommender, PopRecommender, SPopRecommender
from .estimator import FGNNRecommender
from .session_graph import SessionGraph, build_graph

__all__ = [
    "FGNNRecommender",
    "ItemKNNRecommender",
    "PopRecommender",
    "SPopRecommender",
    "SessionGraph",
    "build_graph",
]

__version__ = "0.1.0"
