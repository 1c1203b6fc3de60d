"""Untrained reservoir layers iterated to their fixed point and stacked over a pyramid."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateSpectrum, DimensionMismatch, PreconditionViolated
from .graph import NormalizedAdjacency, operator_norm
from .rng import derive_rng

MAX_RESAMPLES = 16
DEGENERATE_RADIUS = 1e-12


@dataclass(frozen=True)
class ReservoirConfig:
    """Reservoir hyper-parameters shared by every layer of a stack.

    Attributes:
        hidden_units: number of reservoir units H, equal in every layer.
        rho_target: spectral radius W is rescaled to, in (0, 1).
        omega_in: input scaling of the first layer.
        omega_hid: input scaling of the deeper layers.
        epsilon: stop when the Frobenius norm of successive state differences drops below this.
        max_iter: hard cap on the number of map applications.
        seed: master seed; layer weights are derived from it per layer index.
    """

    hidden_units: int = 50
    rho_target: float = 0.9
    omega_in: float = 0.5
    omega_hid: float = 0.5
    epsilon: float = 1e-5
    max_iter: int = 50
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rho_target < 1:
            raise PreconditionViolated(f"rho_target must lie in (0, 1), got {self.rho_target}")
        if self.epsilon <= 0:
            raise PreconditionViolated("epsilon must be positive")
        if self.max_iter < 1:
            raise PreconditionViolated("max_iter must be at least 1")
        if self.hidden_units < 1:
            raise PreconditionViolated("hidden_units must be at least 1")
        if self.omega_in < 0 or self.omega_hid < 0:
            raise PreconditionViolated("input scalings must be non-negative")

    def input_scaling(self, layer_index: int) -> float:
        return self.omega_in if layer_index == 1 else self.omega_hid


def matrix_spectral_radius(W) -> float:
    """Largest eigenvalue modulus of a general square matrix."""
    W = np.asarray(W, dtype=np.float64)
    if W.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(W))))


@dataclass(frozen=True)
class ReservoirLayer:
    """Recurrent weights ``W`` (H x H) and input weights ``V`` (H_in x H) of layer ``l``.

    ``rho_w`` and ``norm_w`` (largest singular value) are computed on
    construction when not supplied; the convergence analysis needs both.
    """

    W: np.ndarray
    V: np.ndarray
    layer_index: int = 1
    rho_w: Optional[float] = None
    norm_w: Optional[float] = None

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        V = np.array(self.V, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise DimensionMismatch(f"W must be square, got {W.shape}")
        if V.ndim != 2 or V.shape[1] != W.shape[0]:
            raise DimensionMismatch(f"V must be H_in x {W.shape[0]}, got {V.shape}")
        W.flags.writeable = False
        V.flags.writeable = False
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)
        if self.rho_w is None:
            object.__setattr__(self, "rho_w", matrix_spectral_radius(W))
        if self.norm_w is None:
            object.__setattr__(self, "norm_w", operator_norm(W).value)

    @property
    def hidden_units(self) -> int:
        return self.W.shape[0]

    @property
    def input_dim(self) -> int:
        return self.V.shape[0]


def init_layer(config: ReservoirConfig, input_dim: int, layer_index: int) -> ReservoirLayer:
    """Sample layer ``layer_index`` (1-based) of a reservoir stack.

    W is drawn uniform in (-1, 1) and rescaled to ``config.rho_target``; V is
    drawn uniform in (-1, 1) and multiplied by the layer's input scaling. A draw
    whose W is numerically nilpotent is replaced by the next derived stream.
    """
    if input_dim < 1:
        raise PreconditionViolated("input_dim must be at least 1")
    H = config.hidden_units
    for attempt in range(MAX_RESAMPLES):
        try:
            return _sample_layer(config, input_dim, layer_index, attempt)
        except DegenerateSpectrum:
            continue
    raise DegenerateSpectrum(
        f"could not draw a {H}x{H} recurrent matrix with non-zero spectral radius"
    )


def _sample_layer(config, input_dim, layer_index, attempt):
    rng = derive_rng(config.seed, "reservoir", layer_index, attempt)
    H = config.hidden_units
    W = rng.uniform(-1.0, 1.0, size=(H, H))
    V = rng.uniform(-1.0, 1.0, size=(input_dim, H)) * config.input_scaling(layer_index)
    radius = matrix_spectral_radius(W)
    if radius < DEGENERATE_RADIUS:
        raise DegenerateSpectrum(f"sampled W has spectral radius {radius:.3e}")
    W *= config.rho_target / radius
    return ReservoirLayer(W, V, layer_index, rho_w=matrix_spectral_radius(W))


def init_layers(config: ReservoirConfig, input_dim: int, levels: int) -> list[ReservoirLayer]:
    """Layers 1..levels; the first reads ``input_dim`` features, the rest read H."""
    layers = [init_layer(config, input_dim, 1)]
    for l in range(2, levels + 1):
        layers.append(init_layer(config, config.hidden_units, l))
    return layers


@dataclass
class FixedPointResult:
    """Outcome of one fixed-point run.

    ``iterations`` counts map applications, so a run whose first update already
    satisfies the stopping rule reports 1.
    """

    states: np.ndarray
    iterations: int
    converged: bool
    final_delta: float
    deltas: list = field(default_factory=list)
    wall_s: float = 0.0


def reservoir_step(layer: ReservoirLayer, norm_adj: NormalizedAdjacency, H, XV):
    """One application of ``H -> tanh(A_norm H W + X V)`` with ``XV`` precomputed."""
    return np.tanh(norm_adj.matrix @ (H @ layer.W) + XV)


def iterate_to_fixed_point(
    layer: ReservoirLayer,
    norm_adj: NormalizedAdjacency,
    inputs,
    config: ReservoirConfig,
    initial=None,
) -> FixedPointResult:
    """Iterate the layer's state map from ``H[0]`` (zero by default) until it settles.

    Stops as soon as the Frobenius norm of ``H[t+1] - H[t]`` falls below
    ``config.epsilon`` or after ``config.max_iter`` applications. Never raises
    on non-convergence; the result carries ``converged=False`` instead.
    """
    X = np.asarray(inputs, dtype=np.float64)
    n = norm_adj.n_vertices
    if X.ndim != 2 or X.shape[0] != n:
        raise DimensionMismatch(f"inputs must have {n} rows, got shape {X.shape}")
    if X.shape[1] != layer.input_dim:
        raise DimensionMismatch(
            f"layer {layer.layer_index} expects {layer.input_dim} input columns, got {X.shape[1]}"
        )
    start = time.perf_counter()
    XV = X @ layer.V
    if initial is None:
        H = np.zeros((n, layer.hidden_units))
    else:
        H = np.array(initial, dtype=np.float64)
        if H.shape != (n, layer.hidden_units):
            raise DimensionMismatch(f"initial state must be {(n, layer.hidden_units)}, got {H.shape}")
    deltas = []
    delta = np.inf
    for t in range(1, config.max_iter + 1):
        H_next = reservoir_step(layer, norm_adj, H, XV)
        delta = float(np.linalg.norm(H_next - H))
        deltas.append(delta)
        H = H_next
        if delta < config.epsilon:
            return FixedPointResult(H, t, True, delta, deltas, time.perf_counter() - start)
    return FixedPointResult(H, config.max_iter, False, delta, deltas, time.perf_counter() - start)


def pad_features(features, n_rows: int):
    """Append zero rows so that ``features`` covers ``n_rows`` vertices (fake vertices are inert)."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape[0] == n_rows:
        return features
    if features.shape[0] > n_rows:
        raise DimensionMismatch(f"{features.shape[0]} feature rows for {n_rows} vertices")
    pad = np.zeros((n_rows - features.shape[0], features.shape[1]))
    return np.vstack([features, pad])


def embed_stack(
    layers: Sequence[ReservoirLayer],
    pyramid,
    features,
    config: ReservoirConfig,
) -> tuple[np.ndarray, list[FixedPointResult]]:
    """Run the stacked reservoir over a pooling pyramid and sum-aggregate the top states.

    Layer l runs on the l-th coarsened adjacency; its fixed point is pooled with
    ``S^(l)^T H`` to form the next layer's input. The embedding is the column-wise
    sum of the last layer's vertex states. Feature rows for padded (fake)
    vertices may be omitted; they are zero-filled.
    """
    if len(layers) != pyramid.levels:
        raise DimensionMismatch(f"{len(layers)} layers for a {pyramid.levels}-level pyramid")
    X = pad_features(features, pyramid.n_vertices[0])
    results = []
    for l, layer in enumerate(layers):
        if layer.input_dim != X.shape[1]:
            raise DimensionMismatch(
                f"layer {l + 1} expects {layer.input_dim} input columns, level input has {X.shape[1]}"
            )
        res = iterate_to_fixed_point(layer, pyramid.normalized[l], X, config)
        results.append(res)
        if l + 1 < len(layers):
            X = np.asarray(pyramid.pool_matrices[l].T @ res.states)
    embedding = results[-1].states.sum(axis=0)
    return embedding, results
