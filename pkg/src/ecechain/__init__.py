"""Temporal knowledge-graph reasoning over evolutionary chains of events.

Each query is expanded into a chain: the query branch plus up to ``k``
chronologically ordered neighbour events of its subject. Every branch is
encoded by a small post-norm Transformer, the branch embeddings are mixed
by column/row MLPs, and the pooled vector scores all entities (link
prediction) and all timestamps (masked time prediction).
"""
from .data import DatasetSplit, Quadruple, Vocabularies, augment_reciprocal, load_dataset
from .graph import ECE, EventTriple, NeighborIndex, build_ece, build_ece_batch, build_index, mask_batch
from .kernels import BACKEND
from .model import ECEformer, ModelConfig
from .training import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DatasetSplit",
    "ECE",
    "ECEformer",
    "EventTriple",
    "ModelConfig",
    "NeighborIndex",
    "Quadruple",
    "TrainConfig",
    "Vocabularies",
    "augment_reciprocal",
    "build_ece",
    "build_ece_batch",
    "build_index",
    "fit",
    "load_checkpoint",
    "load_dataset",
    "mask_batch",
    "save_checkpoint",
]
