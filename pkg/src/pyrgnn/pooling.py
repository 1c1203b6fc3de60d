"""Topological pooling: Graclus matching, NMF soft clustering and node decimation.

Every pooling level maps an N x N adjacency to an N' x N' one together with a
pooling matrix S (N x N') such that vertex features pool as ``S^T H``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch, FactorizationFailure, PoolCollapse, PreconditionViolated, SingularReduction
from .graph import Graph, NormalizedAdjacency, as_csr, normalize, top_eigenvector

log = logging.getLogger(__name__)

NMF_ITERATIONS = 200
NMF_RESTARTS = 3
KRON_DIRECT_LIMIT = 2000
WEIGHT_FLOOR = 1e-12
DENSE_EIGEN_LIMIT = 500


class PoolMethod(str, enum.Enum):
    GRACLUS = "graclus"
    NMF = "nmf"
    NDP = "ndp"
    NOPOOL = "nopool"

    @classmethod
    def parse(cls, value) -> "PoolMethod":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown pooling method {value!r}; choose from {[m.value for m in cls]}")


@dataclass(frozen=True)
class NdpConfig:
    """Node decimation settings.

    ``delta`` is relative: after Kron reduction, edges lighter than
    ``delta * max_weight`` are removed.
    """

    delta: float = 0.1
    partition_method: str = "spectral_sign"

    def __post_init__(self):
        if not 0 <= self.delta < 1:
            raise PreconditionViolated(f"delta must lie in [0, 1), got {self.delta}")
        if self.partition_method not in ("spectral_sign", "greedy_swap"):
            raise PreconditionViolated(f"unknown partition method {self.partition_method!r}")


@dataclass(frozen=True)
class GraphPyramid:
    """Coarsened adjacencies ``A^(1)..A^(L)`` and pooling matrices ``S^(1)..S^(L-1)``.

    ``degrees[l]`` is the degree vector used to normalize level l, or None for
    plain row sums. Node decimation keeps the degrees from before edge
    sparsification so that the removed weight still damps the propagation.
    For Graclus, ``A^(1)`` is the input padded with isolated fake vertices
    appended after the ``n_input`` real ones.
    """

    adjacencies: tuple
    pool_matrices: tuple
    method: PoolMethod
    degrees: tuple
    n_input: int

    @property
    def levels(self) -> int:
        return len(self.adjacencies)

    @property
    def n_vertices(self) -> list[int]:
        return [a.shape[0] for a in self.adjacencies]

    @property
    def n_edges(self) -> list[int]:
        return [int(sp.triu(a, k=1).count_nonzero()) for a in self.adjacencies]

    @cached_property
    def normalized(self) -> tuple[NormalizedAdjacency, ...]:
        return tuple(normalize(a, d) for a, d in zip(self.adjacencies, self.degrees))


def apply_pool(S, H):
    """Pool vertex states: ``S^T H``."""
    H = np.asarray(H)
    if S.shape[0] != H.shape[0]:
        raise DimensionMismatch(f"pooling matrix has {S.shape[0]} rows, states have {H.shape[0]}")
    return np.asarray(S.T @ H)


def _zero_diagonal(matrix):
    matrix = sp.csr_matrix(matrix)
    matrix.setdiag(0)
    return as_csr(matrix)


# --- Graclus -----------------------------------------------------------------


def graclus_match(A, seed=0) -> np.ndarray:
    """Greedy normalized heavy-edge matching.

    Vertices are visited in a seeded random order; an unmatched vertex pairs with
    the unmatched neighbour maximizing ``w_ij (1/d_i + 1/d_j)``, or stays a
    singleton. Returns the cluster id of every vertex, numbered in visiting order.
    """
    A = as_csr(A)
    n = A.shape[0]
    degrees = np.asarray(A.sum(axis=1)).ravel()
    inv_deg = np.zeros(n)
    inv_deg[degrees > 0] = 1.0 / degrees[degrees > 0]
    order = np.random.default_rng(seed).permutation(n)
    cluster = np.full(n, -1, dtype=np.int64)
    n_clusters = 0
    indptr, indices, data = A.indptr, A.indices, A.data
    for i in order:
        if cluster[i] >= 0:
            continue
        cluster[i] = n_clusters
        nbrs = indices[indptr[i]:indptr[i + 1]]
        weights = data[indptr[i]:indptr[i + 1]]
        free = cluster[nbrs] < 0
        if free.any():
            nbrs, weights = nbrs[free], weights[free]
            score = weights * (inv_deg[i] + inv_deg[nbrs])
            # argmax takes the first maximum; neighbours are sorted by index
            cluster[nbrs[np.argmax(score)]] = n_clusters
        n_clusters += 1
    return cluster


def _assignment(cluster, n_clusters):
    n = len(cluster)
    return sp.csr_matrix((np.ones(n), (np.arange(n), cluster)), shape=(n, n_clusters))


def _pad_to_pairs(cluster, n_clusters):
    """Padded assignment with exactly two children per cluster.

    Fake vertices are appended after the real ones, ordered by cluster id.
    """
    counts = np.bincount(cluster, minlength=n_clusters)
    fake_cluster = np.repeat(np.arange(n_clusters), 2 - counts)
    rows = np.concatenate([cluster, fake_cluster])
    n_padded = len(rows)
    return sp.csr_matrix(
        (np.ones(n_padded), (np.arange(n_padded), rows)), shape=(n_padded, n_clusters)
    )


def pad_isolated(A, n_total):
    """Embed ``A`` in the top-left corner of an ``n_total`` square matrix."""
    A = as_csr(A)
    n = A.shape[0]
    if n_total == n:
        return A
    return as_csr(sp.block_diag([A, sp.csr_matrix((n_total - n, n_total - n))]))


def pool_graclus(A, seed=0):
    """One Graclus level.

    Returns ``(A_pool, S)`` where S maps the padded vertex set (the input
    vertices followed by one fake isolated vertex per unmatched vertex) to the
    clusters, so ``S.shape[0] == 2 * S.shape[1]``. ``A_pool = S^T A S`` with a
    zeroed diagonal.
    """
    A = as_csr(A)
    cluster = graclus_match(A, seed)
    n_clusters = int(cluster.max()) + 1 if len(cluster) else 0
    P = _assignment(cluster, n_clusters)
    A_pool = _zero_diagonal(P.T @ A @ P)
    S = _pad_to_pairs(cluster, n_clusters)
    return A_pool, S


def _graclus_pyramid(A, levels, seed):
    # match on the real coarsened graphs first, then pad top-down so that every
    # vertex of level l+1 has exactly two children on level l
    real_adj = [A]
    clusters = []
    for l in range(levels - 1):
        cluster = graclus_match(real_adj[-1], seed + l)
        n_clusters = int(cluster.max()) + 1
        P = _assignment(cluster, n_clusters)
        real_adj.append(_zero_diagonal(P.T @ real_adj[-1] @ P))
        clusters.append(cluster)
    n_padded = [0] * levels
    n_padded[-1] = real_adj[-1].shape[0]
    pools = [None] * (levels - 1)
    for l in range(levels - 2, -1, -1):
        n_real_coarse = real_adj[l + 1].shape[0]
        n_coarse = n_padded[l + 1]
        cluster = clusters[l]
        # fake coarse vertices (indices >= n_real_coarse) need two fake children
        counts = np.zeros(n_coarse, dtype=np.int64)
        counts[:n_real_coarse] = np.bincount(cluster, minlength=n_real_coarse)
        fake_cluster = np.repeat(np.arange(n_coarse), 2 - counts)
        rows = np.concatenate([cluster, fake_cluster])
        n_padded[l] = len(rows)
        pools[l] = sp.csr_matrix(
            (np.ones(len(rows)), (np.arange(len(rows)), rows)), shape=(len(rows), n_coarse)
        )
    adjacencies = [pad_isolated(a, n) for a, n in zip(real_adj, n_padded)]
    return adjacencies, pools


# --- NMF ---------------------------------------------------------------------


def nmf_factorize(A, K, seed=0, n_iter=NMF_ITERATIONS, eps=1e-12):
    """Frobenius NMF ``A ~ Q Sf`` by multiplicative updates.

    Q is N x K, Sf is K x N, both initialized uniform in (0, 1] from ``seed``.
    Returns ``(Q, Sf, error)`` with ``error = ||A - Q Sf||_F``.
    """
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
    if np.any(A < 0):
        raise PreconditionViolated("NMF needs a non-negative matrix")
    n = A.shape[0]
    rng = np.random.default_rng(seed)
    Q = 1.0 - rng.random((n, K))
    Sf = 1.0 - rng.random((K, n))
    for _ in range(n_iter):
        Q *= (A @ Sf.T) / (Q @ (Sf @ Sf.T) + eps)
        Sf *= (Q.T @ A) / ((Q.T @ Q) @ Sf + eps)
    error = float(np.linalg.norm(A - Q @ Sf))
    if not np.isfinite(error):
        raise FactorizationFailure(f"NMF reconstruction error is {error}")
    return Q, Sf, error


def pool_nmf(A, K=None, seed=0, n_iter=NMF_ITERATIONS):
    """One NMF pooling level with ``K`` soft clusters (default ``ceil(N/2)``).

    The pooling matrix is ``S = Sf^T`` with each row rescaled to sum to one, so
    every vertex distributes unit mass over the clusters. The pooled adjacency
    is the symmetrized ``S^T A S`` with zero diagonal.
    """
    A = as_csr(A)
    n = A.shape[0]
    if K is None:
        K = math.ceil(n / 2)
    if K < 1:
        raise PreconditionViolated("K must be at least 1")
    for attempt in range(NMF_RESTARTS + 1):
        try:
            _, Sf, _ = nmf_factorize(A, K, seed + attempt, n_iter)
            break
        except FactorizationFailure:
            if attempt == NMF_RESTARTS:
                raise
            log.warning("NMF failed with seed %d, restarting", seed + attempt)
    S = Sf.T.copy()
    row_sums = S.sum(axis=1, keepdims=True)
    np.divide(S, row_sums, out=S, where=row_sums > 0)
    pooled = S.T @ (A @ S)
    pooled = 0.5 * (pooled + pooled.T)
    np.fill_diagonal(pooled, 0.0)
    pooled[pooled < WEIGHT_FLOOR] = 0.0
    return as_csr(pooled), as_csr(S)


# --- Node decimation ---------------------------------------------------------


def laplacian(A):
    A = as_csr(A)
    return as_csr(sp.diags(np.asarray(A.sum(axis=1)).ravel()) - A)


def _component_top_vector(L):
    n = L.shape[0]
    if n <= DENSE_EIGEN_LIMIT:
        _, vecs = scipy.linalg.eigh(L.toarray(), subset_by_index=[n - 1, n - 1])
        v = vecs[:, 0]
        big = np.flatnonzero(np.abs(v) > 1e-12)
        if big.size and v[big[0]] < 0:
            v = -v
        return v
    return top_eigenvector(L)


def _cut_gain(A, side):
    # gain of flipping each vertex: weight to its own side minus weight across
    signs = np.where(side, 1.0, -1.0)
    return signs * np.asarray(A @ signs).ravel()


def maxcut_partition(A, method="spectral_sign") -> np.ndarray:
    """Approximate MAXCUT bipartition; returns a boolean mask of one side.

    Each connected component is split by the sign of the top eigenvector of its
    Laplacian (entries >= 0 on one side). ``greedy_swap`` then moves single
    vertices while the cut weight grows. Isolated vertices stay on the True side.
    """
    A = as_csr(A)
    n = A.shape[0]
    side = np.ones(n, dtype=bool)
    n_comp, comp = csgraph.connected_components(A, directed=False)
    for c in range(n_comp):
        members = np.flatnonzero(comp == c)
        if len(members) < 2:
            continue
        sub = A[members][:, members]
        u = _component_top_vector(laplacian(sub))
        side[members] = u >= 0
    if method == "greedy_swap":
        while True:
            gain = _cut_gain(A, side)
            best = int(np.argmax(gain))
            if gain[best] <= 1e-12:
                break
            side[best] = ~side[best]
    return side


def _stranded_components(A, keep):
    """Components of the dropped subgraph that have no edge to a kept vertex."""
    drop = np.flatnonzero(~keep)
    if drop.size == 0:
        return []
    sub = A[drop][:, drop]
    n_comp, comp = csgraph.connected_components(sub, directed=False)
    touches = np.asarray(A[drop][:, np.flatnonzero(keep)].sum(axis=1)).ravel() > 0
    stranded = []
    for c in range(n_comp):
        members = comp == c
        if not touches[members].any():
            stranded.append(drop[members])
    return stranded


def kron_reduction(L, keep):
    """Schur complement of the Laplacian ``L`` onto the vertices in ``keep``.

    ``L[k,k] - L[k,d] L[d,d]^{-1} L[d,k]`` with d the dropped vertices, returned
    dense. Raises ``SingularReduction`` naming a dropped component with no
    kept neighbour, since ``L[d,d]`` is singular exactly then.
    """
    L = as_csr(L)
    keep = np.asarray(keep, dtype=bool)
    kept, drop = np.flatnonzero(keep), np.flatnonzero(~keep)
    L_kk = L[kept][:, kept].toarray()
    if drop.size == 0:
        return L_kk
    stranded = _stranded_components(-L + sp.diags(L.diagonal()), keep)
    if stranded:
        raise SingularReduction(
            f"{len(stranded)} dropped component(s) have no kept neighbour", stranded[0]
        )
    L_dd = L[drop][:, drop].tocsc()
    L_dk = L[drop][:, kept].toarray()
    if drop.size <= KRON_DIRECT_LIMIT:
        solved = spla.splu(L_dd).solve(L_dk)
    else:
        solved = np.column_stack([_cg_solve(L_dd, L_dk[:, j]) for j in range(L_dk.shape[1])])
    return L_kk - L_dk.T @ solved


def _cg_solve(M, b):
    x, info = spla.cg(M, b, rtol=1e-12, atol=0.0, maxiter=10 * M.shape[0])
    if info != 0:
        raise SingularReduction(f"conjugate gradient did not converge (info={info})")
    return x


@dataclass(frozen=True)
class NdpLevel:
    """One decimation step.

    ``adjacency`` is the sparsified pooled graph, ``laplacian`` the Kron-reduced
    Laplacian before sparsification and ``degrees`` its diagonal (the weighted
    degrees before sparsification).
    """

    adjacency: sp.csr_matrix
    selection: sp.csr_matrix
    laplacian: np.ndarray
    degrees: np.ndarray
    keep: np.ndarray


def ndp_reduce(A, config: Optional[NdpConfig] = None) -> NdpLevel:
    """Node decimation: drop one side of a MAXCUT partition, Kron-reduce, sparsify."""
    config = config or NdpConfig()
    A = as_csr(A)
    n = A.shape[0]
    if A.nnz == 0:
        keep = np.ones(n, dtype=bool)
    else:
        side = maxcut_partition(A, config.partition_method)
        keep = side if side.sum() >= n - side.sum() else ~side
    # a dropped component with no kept neighbour would make the reduction
    # singular; promote its lowest-index vertex, which reconnects the rest
    for component in _stranded_components(A, keep):
        keep[int(np.min(component))] = True
    L = laplacian(A)
    while True:
        try:
            L_red = kron_reduction(L, keep)
            break
        except SingularReduction as exc:
            if len(exc.component) == 0:
                raise
            keep[int(np.min(exc.component))] = True
    L_red = 0.5 * (L_red + L_red.T)
    pooled = -L_red
    np.fill_diagonal(pooled, 0.0)
    pooled[pooled < WEIGHT_FLOOR] = 0.0
    degrees = pooled.sum(axis=1)
    if pooled.size and pooled.max() > 0 and config.delta > 0:
        pooled[pooled < config.delta * pooled.max()] = 0.0
    kept = np.flatnonzero(keep)
    selection = sp.csr_matrix(
        (np.ones(len(kept)), (kept, np.arange(len(kept)))), shape=(n, len(kept))
    )
    return NdpLevel(as_csr(pooled), selection, L_red, degrees, keep)


def pool_ndp(A, config: Optional[NdpConfig] = None):
    """One node-decimation level; returns ``(A_pool, S)``."""
    level = ndp_reduce(A, config)
    return level.adjacency, level.selection


# --- pyramids ----------------------------------------------------------------


def build_pyramid(
    graph,
    method,
    levels: int,
    ndp_config: Optional[NdpConfig] = None,
    seed: int = 0,
    nmf_iterations: int = NMF_ITERATIONS,
) -> GraphPyramid:
    """Apply the chosen pooling ``levels - 1`` times."""
    method = PoolMethod.parse(method)
    if levels < 1:
        raise PreconditionViolated("levels must be at least 1")
    A = graph.adjacency if isinstance(graph, Graph) else as_csr(graph)
    n = A.shape[0]
    if n < 1:
        raise PoolCollapse("cannot pool an empty graph")
    degrees = [None] * levels
    if method is PoolMethod.NOPOOL or levels == 1:
        adjacencies = [A] * levels
        pools = [as_csr(sp.identity(n))] * (levels - 1)
    elif method is PoolMethod.GRACLUS:
        adjacencies, pools = _graclus_pyramid(A, levels, seed)
    elif method is PoolMethod.NMF:
        adjacencies, pools = [A], []
        for l in range(levels - 1):
            A_next, S = pool_nmf(adjacencies[-1], seed=seed + l, n_iter=nmf_iterations)
            adjacencies.append(A_next)
            pools.append(S)
    else:
        config = ndp_config or NdpConfig()
        adjacencies, pools = [A], []
        for l in range(levels - 1):
            level = ndp_reduce(adjacencies[-1], config)
            adjacencies.append(level.adjacency)
            pools.append(level.selection)
            degrees[l + 1] = level.degrees
    for a in adjacencies:
        if a.shape[0] < 1:
            raise PoolCollapse("pooling produced a level without vertices")
    return GraphPyramid(tuple(adjacencies), tuple(pools), method, tuple(degrees), n)
