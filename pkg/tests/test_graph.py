import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pyrgnn.errors import NonConvergence, PreconditionViolated
from pyrgnn.graph import (
    Graph,
    count_edges,
    graph_stats,
    normalize,
    operator_norm,
    spectral_radius,
    spectral_radius_lenient,
)

from graph_factories import adjacency_from_edges, connected_erdos_renyi, erdos_renyi, path, star


def dense_radius(M):
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    return float(np.max(np.abs(np.linalg.eigvalsh(M))))


def ones(n, d=1):
    return np.ones((n, d))


class TestGraphValidation:
    def test_rejects_asymmetric(self):
        A = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(PreconditionViolated, match="symmetric"):
            Graph(A, ones(2))

    def test_rejects_self_loops(self):
        with pytest.raises(PreconditionViolated, match="self-loops"):
            Graph(sp.identity(2), ones(2))

    def test_rejects_negative_weights(self):
        A = adjacency_from_edges(2, [(0, 1)], [-1.0])
        with pytest.raises(PreconditionViolated, match="non-negative"):
            Graph(A, ones(2))

    def test_rejects_feature_row_mismatch(self):
        with pytest.raises(PreconditionViolated, match="features"):
            Graph(path(3), ones(2))

    def test_rejects_empty_graph(self):
        with pytest.raises(PreconditionViolated):
            Graph(sp.csr_matrix((0, 0)), np.zeros((0, 1)))

    def test_arrays_are_read_only(self):
        g = Graph(path(3), ones(3))
        with pytest.raises(ValueError):
            g.features[0, 0] = 5.0
        with pytest.raises(ValueError):
            g.adjacency.data[0] = 5.0

    def test_from_edges_accepts_one_or_both_directions(self):
        X = ones(3)
        one_way = Graph.from_edges(3, [(0, 1), (1, 2)], X)
        both = Graph.from_edges(3, [(0, 1), (1, 0), (1, 2), (2, 1)], X)
        np.testing.assert_array_equal(one_way.adjacency.toarray(), both.adjacency.toarray())
        assert one_way.n_edges == 2

    def test_permuted_relabels_vertices(self):
        X = np.arange(3.0)[:, None]
        g = Graph.from_edges(3, [(0, 1)], X)
        p = g.permuted([2, 0, 1])
        np.testing.assert_array_equal(p.features.ravel(), [2.0, 0.0, 1.0])
        assert p.adjacency[1, 2] == 1.0 and p.adjacency[0, 1] == 0.0


class TestNormalize:
    def test_single_edge(self):
        np.testing.assert_array_equal(normalize(path(2)).matrix.toarray(), [[0, 1], [1, 0]])

    def test_triangle_is_half_adjacency(self):
        A = adjacency_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        np.testing.assert_allclose(normalize(A).matrix.toarray(), A.toarray() / 2, rtol=0, atol=1e-15)

    def test_star_center_leaf_entries(self):
        # center degree 3, leaf degree 1: 1 / sqrt(3 * 1)
        M = normalize(star(3)).matrix.toarray()
        np.testing.assert_allclose(M[0, 1:], 1 / np.sqrt(3), rtol=1e-15)
        np.testing.assert_allclose(M[1:, 0], 1 / np.sqrt(3), rtol=1e-15)
        np.testing.assert_array_equal(M[1:, 1:], 0.0)

    def test_isolated_vertex_gets_zero_row(self):
        A = adjacency_from_edges(3, [(0, 1)])
        M = normalize(A).matrix.toarray()
        np.testing.assert_array_equal(M[2], 0.0)
        np.testing.assert_array_equal(M[:, 2], 0.0)

    def test_accepts_graph_and_matrix(self):
        A = path(4)
        np.testing.assert_array_equal(
            normalize(Graph(A, ones(4))).matrix.toarray(), normalize(A).matrix.toarray()
        )

    def test_custom_degrees(self):
        A = path(2)
        M = normalize(A, degrees=np.array([4.0, 4.0])).matrix.toarray()
        np.testing.assert_allclose(M, [[0, 0.25], [0.25, 0]])

    def test_custom_degrees_validated(self):
        with pytest.raises(PreconditionViolated):
            normalize(path(2), degrees=np.ones(3))
        with pytest.raises(PreconditionViolated):
            normalize(path(2), degrees=np.array([1.0, -1.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 12), st.floats(0.1, 0.9), st.integers(0, 2**31 - 1))
    def test_zero_pattern_is_preserved(self, n, p, seed):
        A = erdos_renyi(n, p, np.random.default_rng(seed), weighted=True)
        M = normalize(A).matrix
        np.testing.assert_array_equal(M.toarray() != 0, A.toarray() != 0)


class TestSpectralRadius:
    def test_zero_matrix(self):
        assert spectral_radius(sp.csr_matrix((5, 5))).value == 0.0
        assert spectral_radius(np.zeros((3, 3))).value == 0.0

    def test_empty_matrix(self):
        assert spectral_radius(sp.csr_matrix((0, 0))).value == 0.0

    def test_rejects_bad_tolerance(self):
        with pytest.raises(PreconditionViolated):
            spectral_radius(path(3), tolerance=0.0)

    def test_six_vertex_graph_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        A = connected_erdos_renyi(6, 0.4, rng)
        M = normalize(A).matrix
        assert abs(spectral_radius(M).value - dense_radius(M)) <= 1e-8

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_random_symmetric_matches_dense_oracle(self, n, seed):
        B = np.random.default_rng(seed).standard_normal((n, n))
        S = (B + B.T) / 2
        assert abs(spectral_radius(S).value - dense_radius(S)) <= 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.floats(0.1, 0.9), st.integers(0, 2**31 - 1))
    def test_sparse_weighted_graphs_match_dense_oracle(self, n, p, seed):
        # covers disconnected inputs, which go block by block
        A = erdos_renyi(n, p, np.random.default_rng(seed), weighted=True)
        assert abs(spectral_radius(A).value - dense_radius(A)) <= 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 30), st.integers(0, 2**31 - 1))
    def test_normalized_connected_graph_has_unit_radius(self, n, seed):
        A = connected_erdos_renyi(n, 0.2, np.random.default_rng(seed))
        assert abs(spectral_radius(normalize(A)).value - 1.0) <= 1e-8

    def test_bipartite_graph_with_plus_minus_pair(self):
        # even cycles have eigenvalues +1 and -1 after normalization
        A = adjacency_from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
        assert abs(spectral_radius(normalize(A)).value - 1.0) <= 1e-8

    def test_graph_without_isolated_vertices_but_disconnected(self):
        A = sp.block_diag([path(3), path(4)]).tocsr()
        assert abs(spectral_radius(normalize(A)).value - 1.0) <= 1e-8

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 8), st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
    def test_homogeneity(self, n, c, seed):
        B = np.random.default_rng(seed).standard_normal((n, n))
        S = (B + B.T) / 2
        tol = 1e-8
        np.testing.assert_allclose(
            spectral_radius(c * S, tolerance=tol * c).value,
            c * spectral_radius(S, tolerance=tol).value,
            rtol=0,
            atol=2 * tol * c,
        )

    def test_deterministic(self):
        A = normalize(connected_erdos_renyi(20, 0.2, np.random.default_rng(1))).matrix
        a, b = spectral_radius(A, seed=3), spectral_radius(A, seed=3)
        assert a == b

    def test_nonconvergence_carries_estimate(self):
        A = normalize(connected_erdos_renyi(30, 0.2, np.random.default_rng(2))).matrix
        with pytest.raises(NonConvergence) as info:
            spectral_radius(A, tolerance=1e-14, max_power_iterations=3)
        est = info.value.estimate
        assert not est.converged and est.iterations_used == 3
        assert 0.0 < est.value <= 1.0 + 1e-12

    def test_lenient_warns_and_returns(self):
        A = normalize(connected_erdos_renyi(30, 0.2, np.random.default_rng(2))).matrix
        with pytest.warns(RuntimeWarning):
            est = spectral_radius_lenient(A, tolerance=1e-14, max_power_iterations=3)
        assert not est.converged


class TestOperatorNorm:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_matches_dense_svd(self, n, seed):
        W = np.random.default_rng(seed).uniform(-1, 1, (n, n))
        np.testing.assert_allclose(operator_norm(W).value, np.linalg.norm(W, 2), rtol=1e-7)

    def test_zero(self):
        assert operator_norm(np.zeros((4, 4))).value == 0.0


class TestGraphStats:
    def test_single_edge(self):
        n, m, rho = graph_stats(Graph(path(2), ones(2)))
        assert (n, m) == (2, 1)
        assert abs(rho - 1.0) <= 1e-8

    def test_triangle(self):
        A = adjacency_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        n, m, rho = graph_stats(Graph(A, ones(3)))
        assert (n, m) == (3, 3)
        assert abs(rho - 1.0) <= 1e-8

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.floats(0.0, 1.0), st.integers(0, 2**31 - 1))
    def test_degree_sum_is_twice_edge_count(self, n, p, seed):
        A = erdos_renyi(n, p, np.random.default_rng(seed))
        g = Graph(A, ones(n))
        assert g.degrees().sum() == 2 * g.n_edges
        assert count_edges(A) == g.n_edges
