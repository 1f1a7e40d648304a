"""Path-based inductive link prediction with siamese recurrent encoders."""

from siailp.errors import (
    DataError,
    InductiveContractError,
    NumericError,
    ParseError,
    VocabularyError,
)
from siailp.kg_core import KnowledgeGraph, Vocab, build_graph, load_graph, load_triples

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "InductiveContractError",
    "KnowledgeGraph",
    "NumericError",
    "ParseError",
    "Vocab",
    "VocabularyError",
    "build_graph",
    "load_graph",
    "load_triples",
]
