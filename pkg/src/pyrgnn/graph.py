"""Graph container, symmetric normalization and spectral-radius estimation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from .errors import NonConvergence, PreconditionViolated

log = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-10


def as_csr(matrix) -> sp.csr_matrix:
    """Canonical CSR form: float64, duplicates summed, sorted indices, explicit zeros dropped."""
    out = sp.csr_matrix(matrix, dtype=np.float64, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def _freeze(array):
    array.flags.writeable = False
    return array


def is_symmetric(matrix, rtol=SYMMETRY_RTOL) -> bool:
    diff = abs(matrix - matrix.T)
    if diff.nnz == 0:
        return True
    scale = max(abs(matrix).max(), 1.0)
    return diff.max() <= rtol * scale


def check_adjacency(adjacency: sp.spmatrix) -> None:
    n, m = adjacency.shape
    if n != m:
        raise PreconditionViolated(f"adjacency must be square, got {adjacency.shape}")
    if adjacency.nnz and adjacency.data.min() < 0:
        raise PreconditionViolated("adjacency weights must be non-negative")
    if adjacency.diagonal().any():
        raise PreconditionViolated("adjacency must not contain self-loops")
    if not is_symmetric(adjacency):
        raise PreconditionViolated("adjacency must be symmetric")


def count_edges(adjacency: sp.spmatrix) -> int:
    """Undirected edge count M; each edge once, so the degree sum of a 0/1 graph is 2M."""
    upper = sp.triu(adjacency, k=1)
    return int(upper.count_nonzero())


@dataclass(frozen=True)
class Graph:
    """An undirected vertex-featured graph ``(A, X)``.

    ``adjacency`` is a symmetric non-negative N x N matrix with empty diagonal,
    ``features`` an N x F array whose row i belongs to vertex i.
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    label: Optional[int] = None

    def __post_init__(self):
        adjacency = as_csr(self.adjacency)
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features[:, None]
        n = adjacency.shape[0]
        if n < 1:
            raise PreconditionViolated("a graph needs at least one vertex")
        check_adjacency(adjacency)
        if features.ndim != 2 or features.shape[0] != n or features.shape[1] < 1:
            raise PreconditionViolated(
                f"features must be {n} x F with F >= 1, got {features.shape}"
            )
        for arr in (adjacency.data, adjacency.indices, adjacency.indptr):
            _freeze(arr)
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "features", _freeze(features))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @classmethod
    def from_edges(cls, n, edges, features, weights=None, label=None) -> "Graph":
        """Build from an undirected edge list; each pair may be listed in one or both directions."""
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            adjacency = sp.coo_matrix(
                (np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n, n)
            )
            adjacency = ((adjacency + adjacency.T) > 0).astype(np.float64)
        else:
            w = np.asarray(weights, dtype=np.float64)
            adjacency = sp.coo_matrix((w, (edges[:, 0], edges[:, 1])), shape=(n, n))
            adjacency = adjacency + adjacency.T
        return cls(adjacency, features, label)

    @property
    def n_vertices(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return count_edges(self.adjacency)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def permuted(self, perm) -> "Graph":
        """Relabel vertices so that new vertex i is old vertex ``perm[i]``."""
        perm = np.asarray(perm)
        adjacency = self.adjacency[perm][:, perm]
        return Graph(adjacency, self.features[perm], self.label)


@dataclass(frozen=True)
class NormalizedAdjacency:
    """``D^{-1/2} A D^{-1/2}`` together with the degree vector that produced it."""

    matrix: sp.csr_matrix
    source_degrees: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.matrix.shape[0]


def normalize(graph, degrees=None) -> NormalizedAdjacency:
    """Symmetric normalization of a graph or a bare adjacency matrix.

    By default D holds the weighted row sums of A. A different degree vector
    can be supplied (pooled graphs keep their pre-sparsification degrees).
    Zero degrees are treated with the pseudo-inverse convention, so isolated
    vertices get all-zero rows and columns.
    """
    adjacency = graph.adjacency if isinstance(graph, Graph) else as_csr(graph)
    if degrees is None:
        degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    else:
        degrees = np.asarray(degrees, dtype=np.float64)
        if degrees.shape != (adjacency.shape[0],):
            raise PreconditionViolated("degree vector does not match the adjacency size")
        if np.any(degrees < 0):
            raise PreconditionViolated("degrees must be non-negative")
    inv_sqrt = np.zeros_like(degrees, dtype=np.float64)
    positive = degrees > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degrees[positive])
    scale = sp.diags(inv_sqrt)
    matrix = as_csr(scale @ adjacency @ scale)
    for arr in (matrix.data, matrix.indices, matrix.indptr):
        _freeze(arr)
    return NormalizedAdjacency(matrix, _freeze(degrees.copy()))


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    residual: float
    iterations_used: int
    converged: bool = True


def _symmetric_power_iteration(matvec, n, tol, max_iter, seed):
    """Power iteration for the largest |eigenvalue| of a symmetric operator.

    The estimate after step k is ``lam_k = ||A v_k||``. Iterating on A (not A^2)
    keeps one product per step; the error bound comes from the A^2 eigen-residual,
    ``||A^2 v_k - lam_k^2 v_k|| / lam_k = ||lam_{k+1} v_{k+2} - lam_k v_k||``,
    which bounds the distance from ``lam_k`` to some |eigenvalue| of A and
    handles +-rho pairs (bipartite graphs) that make v itself oscillate.
    Returns ``(value, vector, residual, iterations, converged)``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    history = []  # (lam_k, v_k) for the two most recent steps
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = matvec(v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 0.0, v, 0.0, it, True
        history.append((lam, v))
        if len(history) == 3:
            (lam0, v0), (lam1, _), (_, v2) = history
            residual = float(np.linalg.norm(lam1 * v2 - lam0 * v0))
            if residual <= tol:
                return lam0, v0, residual, it, True
            history.pop(0)
        v = w / lam
    lam0, v0 = history[0]
    return lam0, v0, residual, max_iter, False


def _blockwise_radius(matrix, tol, max_iter, seed):
    # The spectrum of a block-diagonal matrix is the union of its blocks'
    # spectra. Iterating per connected block keeps the convergence rate tied to
    # each block's own spectral gap instead of the ratio between the leading
    # eigenvalues of different blocks, which can be arbitrarily close.
    n_blocks, block = csgraph.connected_components(matrix, directed=False)
    if n_blocks == 1:
        value, _, residual, iters, converged = _symmetric_power_iteration(
            matrix.dot, matrix.shape[0], tol, max_iter, seed
        )
        return SpectralEstimate(value, residual, iters, converged)
    order = np.argsort(block, kind="stable")
    bounds = np.searchsorted(block[order], np.arange(n_blocks + 1))
    best = SpectralEstimate(0.0, 0.0, 0, True)
    used, all_converged, worst = 0, True, 0.0
    for b in range(n_blocks):
        members = order[bounds[b]:bounds[b + 1]]
        if len(members) == 1:
            value, residual, iters, converged = abs(matrix[members[0], members[0]]), 0.0, 0, True
        else:
            sub = matrix[members][:, members]
            value, _, residual, iters, converged = _symmetric_power_iteration(
                sub.dot, len(members), tol, max_iter, seed
            )
        used = max(used, iters)
        all_converged &= converged
        worst = max(worst, residual)
        if value > best.value:
            best = SpectralEstimate(value, residual, iters, converged)
    return SpectralEstimate(best.value, worst, used, all_converged)


def spectral_radius(matrix, tolerance=1e-8, max_power_iterations=10_000, seed=0) -> SpectralEstimate:
    """Largest absolute eigenvalue of a symmetric (sparse or dense) matrix.

    Raises ``NonConvergence`` (estimate attached) if the residual bound is still
    above ``tolerance`` after ``max_power_iterations`` steps.
    """
    if tolerance <= 0:
        raise PreconditionViolated("tolerance must be positive")
    if isinstance(matrix, NormalizedAdjacency):
        matrix = matrix.matrix
    n = matrix.shape[0]
    if n == 0:
        return SpectralEstimate(0.0, 0.0, 0)
    if sp.issparse(matrix):
        estimate = _blockwise_radius(matrix.tocsr(), tolerance, max_power_iterations, seed)
    else:
        matrix = np.asarray(matrix, dtype=np.float64)
        value, _, residual, iters, converged = _symmetric_power_iteration(
            matrix.dot, n, tolerance, max_power_iterations, seed
        )
        estimate = SpectralEstimate(value, residual, iters, converged)
    if not estimate.converged:
        raise NonConvergence(
            f"power iteration residual {estimate.residual:.3e} > {tolerance:.1e} "
            f"after {max_power_iterations} iterations",
            estimate,
        )
    return estimate


def spectral_radius_lenient(matrix, tolerance=1e-8, max_power_iterations=10_000, seed=0) -> SpectralEstimate:
    """Like :func:`spectral_radius` but returns the flagged estimate instead of raising."""
    try:
        return spectral_radius(matrix, tolerance, max_power_iterations, seed)
    except NonConvergence as exc:
        warnings.warn(str(exc), RuntimeWarning, stacklevel=2)
        return exc.estimate


def operator_norm(matrix, tolerance=1e-10, max_power_iterations=10_000, seed=0) -> SpectralEstimate:
    """Largest singular value of a dense matrix, via power iteration on ``M^T M``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    gram = matrix.T @ matrix
    # sigma = sqrt(lambda); an error d on lambda is about d / (2 sigma) on sigma
    est = spectral_radius_lenient(gram, tolerance, max_power_iterations, seed)
    sigma = float(np.sqrt(est.value))
    residual = est.residual / (2 * sigma) if sigma > 0 else 0.0
    return SpectralEstimate(sigma, residual, est.iterations_used, est.converged)


def top_eigenvector(matrix, tolerance=1e-10, max_iter=2_000, seed=0) -> np.ndarray:
    """Unit eigenvector for the largest eigenvalue of a symmetric PSD matrix.

    Used for sign partitions, where only the sign pattern matters, so running
    out of iterations is not an error. The sign is fixed so that the first
    clearly nonzero entry is positive.
    """
    n = matrix.shape[0]
    _, v, _, _, _ = _symmetric_power_iteration(matrix.dot, n, tolerance, max_iter, seed)
    v = np.asarray(matrix.dot(v)).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        return np.zeros(n)
    v /= norm
    big = np.flatnonzero(np.abs(v) > 1e-12)
    if big.size and v[big[0]] < 0:
        v = -v
    return v


def graph_stats(graph: Graph, tolerance=1e-8) -> tuple[int, int, float]:
    """``(N, M, rho(normalized adjacency))`` for one graph."""
    rho = spectral_radius_lenient(normalize(graph), tolerance).value
    return graph.n_vertices, graph.n_edges, rho
