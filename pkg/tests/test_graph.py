import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legs.errors import (
    DimensionMismatch,
    DuplicateEdge,
    GraphTooLargeForDenseOracle,
    IndexOutOfRange,
    IsolatedNode,
    NonPositiveWeight,
    SelfLoop,
)
from legs.graph import (
    build_graph,
    dense_diffusion_matrix,
    diffusion_cascade,
    from_adjacency,
    lazy_step,
    permute_graph,
    spectral_oracle,
    union_graphs,
    weighted_norm_sq,
)

from conftest import er_graph, path_graph


def test_single_node_self_loop_policy():
    g = build_graph(1, [], isolated_policy="self_loop")
    np.testing.assert_array_equal(g.degree, [1.0])
    assert g.has_self_loops()


def test_degrees_from_weights():
    np.testing.assert_array_equal(build_graph(2, [(0, 1, 1.0)]).degree, [1, 1])
    np.testing.assert_array_equal(build_graph(3, [(0, 1, 2.0), (1, 2, 3.0)]).degree, [2, 5, 3])


def test_adjacency_symmetric():
    g = er_graph(15, 0.3, 1)
    W = g.adjacency.toarray()
    np.testing.assert_array_equal(W, W.T)


@pytest.mark.parametrize("edges, err", [
    ([(0, 3, 1.0)], IndexOutOfRange),
    ([(0, 1, 0.0)], NonPositiveWeight),
    ([(0, 1, -1.0)], NonPositiveWeight),
    ([(0, 1, 1.0), (1, 0, 1.0)], DuplicateEdge),
    ([(1, 1, 1.0)], SelfLoop),
])
def test_build_graph_errors(edges, err):
    with pytest.raises(err):
        build_graph(3, edges + [(1, 2, 1.0)])


def test_isolated_node_rejected():
    with pytest.raises(IsolatedNode):
        build_graph(3, [(0, 1, 1.0)], isolated_policy="reject")


def test_from_adjacency_roundtrip():
    g = er_graph(10, 0.4, 3)
    h = from_adjacency(g.adjacency.toarray())
    np.testing.assert_array_equal(h.adjacency.toarray(), g.adjacency.toarray())


def test_lazy_step_self_loop_identity():
    g = build_graph(1, [], isolated_policy="self_loop")
    np.testing.assert_allclose(lazy_step(g, 0.5, np.array([3.7])), [3.7])


def test_lazy_step_k2(k2):
    np.testing.assert_allclose(lazy_step(k2, 0.5, np.array([1.0, 0.0])), [0.5, 0.5])


def test_lazy_step_path_matches_dense():
    g = path_graph(3)
    x = np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(lazy_step(g, 0.5, x), dense_diffusion_matrix(g, 0.5) @ x, atol=1e-12)


def test_lazy_step_dimension_mismatch(k2):
    with pytest.raises(DimensionMismatch):
        lazy_step(k2, 0.5, np.ones(3))


def test_cascade_degree_fixed_point():
    g = er_graph(12, 0.4, 5)
    c = diffusion_cascade(g, 0.5, g.degree, 6)
    for t in range(7):
        np.testing.assert_allclose(c.power(t)[:, 0], g.degree, rtol=1e-12)


def test_cascade_single_node():
    g = build_graph(1, [], isolated_policy="self_loop")
    c = diffusion_cascade(g, 0.5, np.array([2.5]), 4)
    np.testing.assert_allclose(c.powers[:, 0, 0], 2.5)


def test_cascade_matches_dense_powers():
    g = er_graph(20, 0.3, 7)
    x = np.random.default_rng(0).standard_normal(20)
    c = diffusion_cascade(g, 0.5, x, 8)
    ref = np.linalg.matrix_power(dense_diffusion_matrix(g, 0.5), 8) @ x
    assert np.max(np.abs(c.power(8)[:, 0] - ref)) <= 1e-10 * np.max(np.abs(x))
    assert c.steps.shape[0] == 8


def test_weighted_norm_examples(k2):
    g3 = build_graph(3, [(0, 1, 2.0), (1, 2, 3.0)])
    assert weighted_norm_sq(g3, np.zeros(3)) == 0.0
    assert weighted_norm_sq(k2, np.array([1.0, 0.0])) == pytest.approx(1.0)
    assert weighted_norm_sq(g3, np.array([2.0, 5.0, 3.0])) == pytest.approx(10.0, abs=1e-14)


def test_spectral_oracle_small_cases(k2):
    M, lam, Q = spectral_oracle(build_graph(1, [], isolated_policy="self_loop"))
    np.testing.assert_allclose(M, [[1.0]])
    np.testing.assert_allclose(lam, [1.0])
    _, lam, _ = spectral_oracle(k2, 0.5)
    np.testing.assert_allclose(lam, [1.0, 0.0], atol=1e-14)


def test_spectral_oracle_reconstruction_and_symmetry():
    g = er_graph(10, 0.5, 11)
    M, lam, Q = spectral_oracle(g, 0.5)
    assert np.max(np.abs(M - M.T)) <= 1e-12
    assert np.max(np.abs(Q @ np.diag(lam) @ Q.T - M)) <= 1e-10
    assert np.all(np.diff(lam) <= 0)


def test_spectral_oracle_cap():
    with pytest.raises(GraphTooLargeForDenseOracle):
        spectral_oracle(path_graph(20), 0.5, cap=10)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 25), p=st.floats(0.1, 0.9), alpha=st.floats(0.5, 0.95), seed=st.integers(0, 10_000))
def test_spectrum_in_lazy_interval(n, p, alpha, seed):
    g = er_graph(n, p, seed)
    _, lam, _ = spectral_oracle(g, alpha)
    assert lam.min() >= 2 * alpha - 1 - 1e-10
    assert lam.max() <= 1 + 1e-10


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 30), p=st.floats(0.1, 0.9), alpha=st.floats(0.01, 0.99), seed=st.integers(0, 10_000))
def test_mass_conservation(n, p, alpha, seed):
    g = er_graph(n, p, seed)
    x = np.random.default_rng(seed).standard_normal(n)
    assert abs(lazy_step(g, alpha, x).sum() - x.sum()) <= 1e-10 * np.abs(x).sum()


def test_permute_graph_relabels():
    g = path_graph(4)
    perm = np.array([2, 0, 3, 1])
    h = permute_graph(g, perm)
    W, Wp = g.adjacency.toarray(), h.adjacency.toarray()
    np.testing.assert_array_equal(Wp, W[np.ix_(perm, perm)])


def test_union_graph_block_diagonal():
    a, b = path_graph(3), er_graph(5, 0.5, 2)
    batch = union_graphs([a, b])
    np.testing.assert_array_equal(batch.offsets, [0, 3, 8])
    W = batch.graph.adjacency.toarray()
    np.testing.assert_array_equal(W[:3, :3], a.adjacency.toarray())
    np.testing.assert_array_equal(W[3:, 3:], b.adjacency.toarray())
    assert not W[:3, 3:].any()
