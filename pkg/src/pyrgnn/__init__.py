"""Pyramidal reservoir graph neural networks.

Untrained reservoir layers iterated to their fixed point, interleaved with
pre-computed topological pooling, produce unsupervised graph embeddings that
a ridge readout classifies.
"""

from .graph import Graph, NormalizedAdjacency, SpectralEstimate, graph_stats, normalize, spectral_radius
from .reservoir import (
    FixedPointResult,
    ReservoirConfig,
    ReservoirLayer,
    embed_stack,
    init_layer,
    init_layers,
    iterate_to_fixed_point,
)
from .pooling import GraphPyramid, NdpConfig, PoolMethod, apply_pool, build_pyramid

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "SpectralEstimate",
    "graph_stats",
    "normalize",
    "spectral_radius",
    "FixedPointResult",
    "ReservoirConfig",
    "ReservoirLayer",
    "embed_stack",
    "init_layer",
    "init_layers",
    "iterate_to_fixed_point",
    "GraphPyramid",
    "NdpConfig",
    "PoolMethod",
    "apply_pool",
    "build_pyramid",
]

__version__ = "0.1.0"
