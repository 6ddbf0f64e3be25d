"""Vertex embeddings for text-attributed graphs via diffusion maps."""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, NumericalError
from .graph import (
    TextualGraph,
    TransitionTensor,
    build_transition,
    diffuse,
    diffuse_row,
    load_graph,
    save_graph,
)

__all__ = [
    "ConfigError",
    "DataError",
    "NumericalError",
    "TextualGraph",
    "TransitionTensor",
    "build_transition",
    "diffuse",
    "diffuse_row",
    "load_graph",
    "save_graph",
]
