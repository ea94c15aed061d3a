import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legs.errors import PathIndexOutOfRange, UnsupportedOrder
from legs.filter_bank import ScaleSequence, dyadic_scales
from legs.graph import LazyWalk, permute_graph
from legs.learnable import SelectionParams, bank_coefficients, selection_matrix
from legs.scattering import (
    PHI,
    BankOperator,
    ScatteringConfig,
    enumerate_paths,
    feature_count,
    moments,
    scatter_nodes,
    transform,
    transform_batch,
)

from conftest import er_graph


def test_enumerate_paths_counts():
    assert enumerate_paths(2, 1) == [(), (0,), (1,)]
    inc = enumerate_paths(3, 2, "increasing")
    assert len(inc) == 7 and (0, 1) in inc and (1, 0) not in inc
    assert len(enumerate_paths(3, 2, "all_ordered")) == 13
    assert inc == sorted(inc)


def test_enumerate_paths_order_error():
    with pytest.raises(UnsupportedOrder):
        enumerate_paths(3, 4)


def _k2_bank(k2):
    return BankOperator(LazyWalk(k2, 0.5), bank_coefficients(ScaleSequence((1,), 1).selection()))


def test_scatter_nodes_k2(k2):
    bank = _k2_bank(k2)
    x = np.array([1.0, 0.0])
    np.testing.assert_array_equal(scatter_nodes(bank, (), x), x)
    np.testing.assert_allclose(scatter_nodes(bank, (0,), x), [0.5, -0.5], atol=1e-15)
    np.testing.assert_allclose(scatter_nodes(bank, (0, 0), x), [0.0, 0.0], atol=1e-15)
    with pytest.raises(PathIndexOutOfRange):
        scatter_nodes(bank, (1,), x)


def test_moments_examples():
    np.testing.assert_array_equal(moments(np.zeros(3), 3), np.zeros(3))
    u = np.array([0.5, -0.5])
    np.testing.assert_allclose(moments(u, 2, normalize=False), [1.0, 0.5])
    np.testing.assert_allclose(moments(u, 2, normalize=True), [0.5, 0.25])


def test_transform_k2_composition(k2):
    cfg = ScatteringConfig(J=1, m=1, q_max=2, order=1, normalize_moments=False)
    feats = transform(k2, np.array([1.0, 0.0]), ScaleSequence((1,), 1), cfg)
    # x = (1, 0); Psi_0 x = (0.5, -0.5); Phi x = (0.5, 0.5)
    np.testing.assert_allclose(feats.values, [1.0, 1.0, 1.0, 0.5, 1.0, 0.5], atol=1e-15)
    assert feats.index == [((), 1, 0), ((), 2, 0), ((0,), 1, 0), ((0,), 2, 0), (PHI, 1, 0), (PHI, 2, 0)]


def test_zero_signal_zero_features():
    g = er_graph(9, 0.4, 2)
    feats = transform(g, np.zeros((9, 2)), dyadic_scales(3, 16), ScatteringConfig())
    assert not feats.values.any()


def test_feature_count():
    cfg = ScatteringConfig(J=4, m=16, q_max=4, order=2)
    g = er_graph(10, 0.4, 1)
    f = transform(g, np.ones((10, 3)), dyadic_scales(3, 16), cfg)
    assert f.values.size == feature_count(4, cfg, 3) == (len(enumerate_paths(4, 2)) + 1) * 4 * 3
    cfg1 = ScatteringConfig(J=1, m=1, q_max=1, order=1)
    assert feature_count(1, cfg1, 1) == 3


def test_batch_matches_single_graphs():
    cfg = ScatteringConfig(J=3, m=8, q_max=3, order=2)
    gs = [er_graph(n, 0.4, n) for n in (5, 9, 13)]
    xs = [np.random.default_rng(n).standard_normal((g.n, 2)) for n, g in enumerate(gs)]
    F = selection_matrix(SelectionParams(np.random.default_rng(0).normal(size=(3, 8))))
    batch, _, _ = transform_batch(gs, xs, F, cfg)
    for k, (g, x) in enumerate(zip(gs, xs)):
        np.testing.assert_allclose(batch[k], transform(g, x, F, cfg).values, rtol=1e-13, atol=1e-15)


def test_deterministic_bitwise():
    cfg = ScatteringConfig()
    g = er_graph(20, 0.3, 4)
    x = np.random.default_rng(1).standard_normal((20, 2))
    a = transform(g, x, dyadic_scales(3, 16), cfg).values
    b = transform(g, x, dyadic_scales(3, 16), cfg).values
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 30), seed=st.integers(0, 10_000), rule=st.sampled_from(["increasing", "all_ordered"]))
def test_permutation_invariance(n, seed, rule):
    rng = np.random.default_rng(seed)
    g = er_graph(n, 0.35, seed)
    perm = rng.permutation(n)
    x = rng.standard_normal((n, 2))
    cfg = ScatteringConfig(J=3, m=8, q_max=4, order=2, path_rule=rule)
    F = selection_matrix(SelectionParams(rng.normal(size=(3, 8))))
    a = transform(g, x, F, cfg, keep_cache=True)
    b = transform(permute_graph(g, perm), x[perm], F, cfg, keep_cache=True)
    scale = np.max(np.abs(a.values))
    assert np.max(np.abs(a.values - b.values)) <= 1e-10 * scale
    for p in a.per_node:
        if p == "_cache":
            continue
        u, v = a.per_node[p], b.per_node[p]
        assert np.max(np.abs(u[perm] - v)) <= 1e-10 * max(np.max(np.abs(u)), 1e-300)
