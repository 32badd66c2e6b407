"""Debiased self-training for class-imbalanced node classification."""

from iceberg.graph import (
    GraphFormatError,
    NormalizedAdjacency,
    SparseGraph,
    generate_sbm,
    load_graph,
    normalize_adjacency,
    save_graph,
)
from iceberg.kernels import BACKEND
from iceberg.propagation import DiffusedFeatures, PropagationConfig, diffuse, diffuse_graph
from iceberg.selftrain import TrainConfig, multistage_selftrain, train
from iceberg.splits import SplitMasks, make_fewshot, make_step_imbalance

__version__ = "0.1.0"
