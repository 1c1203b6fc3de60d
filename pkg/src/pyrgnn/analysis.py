"""Convergence theory checks and cost model for reservoir fixed-point runs.

For a layer with contraction coefficient ``K = rho(A_norm) * ||W||_2 < 1`` the
state map is a contraction, and starting from zero the iterate is within
``epsilon`` of the fixed point after

    T = ceil((ln epsilon + ln(1 - K) - ln H1) / ln K),   H1 = ||tanh(X V)||_F

applications. The cost of one application is ``O(M H + N H^2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import PreconditionViolated
from .graph import NormalizedAdjacency, spectral_radius_lenient
from .reservoir import FixedPointResult, ReservoirLayer, pad_features, reservoir_step

ANALYSIS_COLUMNS = (
    "graph_id",
    "level",
    "N",
    "M",
    "rho",
    "K",
    "T_bound",
    "T_observed",
    "est_cost",
    "wall_ms",
)


@dataclass(frozen=True)
class ConvergenceBound:
    """Contraction coefficient, first-step norm and iteration bound of one layer.

    ``T`` is None when the bound does not apply (``K`` outside (0, 1) or a zero
    first step).
    """

    K: float
    H1: float
    T: Optional[int]
    epsilon: float

    @property
    def applicable(self) -> bool:
        return self.T is not None


def iteration_bound(K: float, H1: float, epsilon: float) -> Optional[int]:
    """Number of iterations after which a contraction started at zero is epsilon-close.

    Returns None when the bound is inapplicable. The result is at least 1.
    """
    if epsilon <= 0:
        raise PreconditionViolated("epsilon must be positive")
    if not 0 < K < 1 or H1 <= 0:
        return None
    T = math.ceil((math.log(epsilon) + math.log1p(-K) - math.log(H1)) / math.log(K))
    return max(int(T), 1)


def contraction_coefficient(layer: ReservoirLayer, norm_adj: NormalizedAdjacency, rho_adj=None) -> float:
    if rho_adj is None:
        rho_adj = spectral_radius_lenient(norm_adj.matrix).value
    return float(rho_adj * layer.norm_w)


def compute_bound(
    layer: ReservoirLayer,
    norm_adj: NormalizedAdjacency,
    X,
    epsilon: float,
    rho_adj: Optional[float] = None,
) -> ConvergenceBound:
    """Bound for running ``layer`` on ``norm_adj`` with inputs ``X``.

    ``rho_adj`` may be passed when the spectral radius of the normalized
    adjacency is already known.
    """
    if epsilon <= 0:
        raise PreconditionViolated("epsilon must be positive")
    K = contraction_coefficient(layer, norm_adj, rho_adj)
    H1 = float(np.linalg.norm(np.tanh(np.asarray(X, dtype=np.float64) @ layer.V)))
    return ConvergenceBound(K, H1, iteration_bound(K, H1, epsilon), epsilon)


def verify_bound(bound: ConvergenceBound, observed: FixedPointResult) -> bool:
    """True when a converged run stopped within ``T + 1`` iterations.

    The extra iteration accounts for the stopping rule measuring successive
    iterates rather than the distance to the fixed point: the t-th difference
    is at most ``K^(t-1) H1``, which drops below epsilon by step ``T + 1``.
    """
    if not bound.applicable:
        raise PreconditionViolated(
            f"bound inapplicable (K={bound.K:.4g}, H1={bound.H1:.4g})"
        )
    if not observed.converged:
        raise PreconditionViolated("the observed run did not converge")
    return observed.iterations <= bound.T + 1


def step_contraction_ratio(layer, norm_adj, X, H, Z) -> float:
    """``||F(H) - F(Z)|| / ||H - Z||`` for the layer's state map F."""
    XV = np.asarray(X, dtype=np.float64) @ layer.V
    num = np.linalg.norm(reservoir_step(layer, norm_adj, H, XV) - reservoir_step(layer, norm_adj, Z, XV))
    den = np.linalg.norm(np.asarray(H) - np.asarray(Z))
    return float(num / den)


@dataclass(frozen=True)
class CostEstimate:
    """Operation count of one layer: ``M H + N H^2`` per iteration, times the iterations run."""

    layer_index: int
    n_vertices: int
    n_edges: int
    iterations: int
    per_iteration_flops: float
    total: float


def layer_cost(n_vertices: int, n_edges: int, hidden_units: int, iterations: int, layer_index: int = 1) -> CostEstimate:
    per_iteration = float(n_edges * hidden_units + n_vertices * hidden_units**2)
    return CostEstimate(layer_index, n_vertices, n_edges, iterations, per_iteration, iterations * per_iteration)


def estimate_cost(pyramid, per_layer_results: Sequence[FixedPointResult], H: int) -> list[CostEstimate]:
    if len(per_layer_results) != pyramid.levels:
        raise PreconditionViolated(
            f"{len(per_layer_results)} results for a {pyramid.levels}-level pyramid"
        )
    return [
        layer_cost(n, m, H, res.iterations, l + 1)
        for l, (n, m, res) in enumerate(zip(pyramid.n_vertices, pyramid.n_edges, per_layer_results))
    ]


def layer_inputs(pyramid, features, results: Sequence[FixedPointResult]) -> list[np.ndarray]:
    """Inputs each layer saw during an ``embed_stack`` run, rebuilt from its results."""
    inputs = [pad_features(features, pyramid.n_vertices[0])]
    for l in range(pyramid.levels - 1):
        inputs.append(np.asarray(pyramid.pool_matrices[l].T @ results[l].states))
    return inputs


def analysis_rows(graph_id, pyramid, layers, features, results, epsilon) -> list[dict]:
    """One analysis record per pyramid level of an embedded graph."""
    rows = []
    inputs = layer_inputs(pyramid, features, results)
    costs = estimate_cost(pyramid, results, layers[0].hidden_units)
    for l, (layer, res, cost) in enumerate(zip(layers, results, costs)):
        norm_adj = pyramid.normalized[l]
        rho = spectral_radius_lenient(norm_adj.matrix).value
        bound = compute_bound(layer, norm_adj, inputs[l], epsilon, rho_adj=rho)
        rows.append(
            {
                "graph_id": graph_id,
                "level": l + 1,
                "N": cost.n_vertices,
                "M": cost.n_edges,
                "rho": rho,
                "K": bound.K,
                "T_bound": "" if bound.T is None else bound.T,
                "T_observed": res.iterations,
                "est_cost": cost.total,
                "wall_ms": 1000.0 * res.wall_s,
            }
        )
    return rows


def write_analysis_csv(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ANALYSIS_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()}
            )
