"""Roof primitives as rasters and vectors: rasterization, algebraic
vectorization, relation enforcement, a set-to-set polygon metric and a
seeded procedural sampler."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    PrimitiveType,
    RasterBundle,
    RelationVector,
    RoofGraph,
    RoofkitError,
    RoofModel,
    RoofPrimitive,
    Facet,
    validate_graph,
)

__all__ = [
    "Facet",
    "PrimitiveType",
    "RasterBundle",
    "RelationVector",
    "RoofGraph",
    "RoofModel",
    "RoofPrimitive",
    "RoofkitError",
    "validate_graph",
    "__version__",
]
