"""Heterogeneous-graph embeddings for cross-language citation recommendation."""

from .embed import EmbeddingTable, TrainConfig, train
from .evaluate import MetricsReport, SplitSpec, make_split, metrics
from .hetgraph import GraphSchema, HetGraph, load_graph, load_schema, parse_schema, sample_neighbor
from .recommend import RankedList, rank_candidates, recommend, score
from .rtud import Rtud, init_rtud, k_shortest_paths, m_step, train_rtud
from .synthetic import SyntheticSpec, generate_synthetic
from .walks import WalkConfig, WalkCorpus, generate_corpus, hierarchical_walk

__version__ = "0.1.0"

__all__ = [
    "EmbeddingTable", "TrainConfig", "train",
    "MetricsReport", "SplitSpec", "make_split", "metrics",
    "GraphSchema", "HetGraph", "load_graph", "load_schema", "parse_schema", "sample_neighbor",
    "RankedList", "rank_candidates", "recommend", "score",
    "Rtud", "init_rtud", "k_shortest_paths", "m_step", "train_rtud",
    "SyntheticSpec", "generate_synthetic",
    "WalkConfig", "WalkCorpus", "generate_corpus", "hierarchical_walk",
]
