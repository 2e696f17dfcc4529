"""Event-relation-graph sentence-level media bias detection on a numpy autodiff core."""

from .autodiff import Tensor, backward
from .corpus import Corpus, Document, load_corpus
from .graph import EventRelationGraph, RelationKind, SoftLabelTables, build_graph
from .training import BiasModel, RunConfig, crossval, train

__all__ = [
    "BiasModel", "Corpus", "Document", "EventRelationGraph", "RelationKind", "RunConfig",
    "SoftLabelTables", "Tensor", "backward", "build_graph", "crossval", "load_corpus", "train",
]
__version__ = "0.1.0"
