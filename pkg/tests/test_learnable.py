import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from legs.errors import InvalidShape, NonFiniteParameter
from legs.filter_bank import ScaleSequence, apply_bank
from legs.graph import diffusion_cascade
from legs.learnable import (
    SelectionParams,
    check_nonexpansive,
    has_ordered_disjoint_support,
    init_theta,
    inject_fault,
    legs_apply,
    selection_matrix,
    softmax_rows,
    sparsify,
)
from legs.verification import sample_disjoint_F

from conftest import er_graph


def test_init_uniform():
    F = selection_matrix(init_theta(2, 4, "uniform")).F
    np.testing.assert_allclose(F, 0.25)


def test_init_dyadic_warm_argmax():
    F = selection_matrix(init_theta(3, 8, "dyadic_warm")).F
    assert list(np.argmax(F, axis=1) + 1) == [1, 2, 4]


def test_init_random_deterministic():
    a = init_theta(3, 8, "random", seed=7).theta
    b = init_theta(3, 8, "random", seed=7).theta
    assert np.array_equal(a, b)


def test_init_errors():
    with pytest.raises(InvalidShape):
        init_theta(5, 4, "uniform")
    with pytest.raises(InvalidShape):
        init_theta(5, 8, "dyadic_warm")


def test_selection_reorders_rows():
    theta = np.zeros((2, 4))
    theta[0, 2] = 5.0
    theta[1, 0] = 5.0
    sel = selection_matrix(SelectionParams(theta))
    assert list(sel.row_order) == [1, 0]
    assert np.argmax(sel.F[0]) == 0 and np.argmax(sel.F[1]) == 2


def test_selection_stable_ties():
    theta = np.zeros((3, 4))
    theta[:, 1] = 2.0
    theta[0, 3] = 0.5
    sel = selection_matrix(SelectionParams(theta))
    assert list(sel.row_order) == [0, 1, 2]


def test_softmax_brute_force_row():
    F = selection_matrix(SelectionParams(np.array([[10.0, 0.0, 0.0, 0.0]]))).F
    e = np.exp(10.0)
    np.testing.assert_allclose(F[0], [e / (e + 3), 1 / (e + 3), 1 / (e + 3), 1 / (e + 3)], rtol=1e-14)


def test_softmax_extreme_values():
    theta = np.array([[700.0, -700.0, 0.0], [-700.0, -700.0, -700.0]])
    F = softmax_rows(theta)
    assert np.all(np.isfinite(F))
    np.testing.assert_allclose(F.sum(axis=1), 1.0, atol=1e-12)


def test_non_finite_theta():
    with pytest.raises(NonFiniteParameter):
        selection_matrix(SelectionParams(np.array([[np.nan, 0.0]])))


@settings(max_examples=50, deadline=None)
@given(J=st.integers(1, 6), m=st.integers(6, 16), seed=st.integers(0, 10_000))
def test_argmax_nondecreasing(J, m, seed):
    theta = np.random.default_rng(seed).normal(scale=3, size=(J, m))
    sel = selection_matrix(SelectionParams(theta))
    assert np.all(np.diff(np.argmax(sel.F, axis=1)) >= 0)
    np.testing.assert_allclose(sel.F.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(sel.F, softmax_rows(theta)[sel.row_order])


def test_one_hot_reduction():
    g = er_graph(16, 0.3, 3)
    x = np.random.default_rng(3).standard_normal((16, 2))
    scales = ScaleSequence((1, 3, 4, 9), 12)
    c = diffusion_cascade(g, 0.5, x, 12)
    for a, b in zip(apply_bank(c, scales).all(), legs_apply(scales.selection(), c).all()):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_degree_signal_legs():
    g = er_graph(14, 0.4, 8)
    F = softmax_rows(np.random.default_rng(0).normal(size=(3, 8)))
    r = legs_apply(F, diffusion_cascade(g, 0.5, g.degree, 8))
    for psi in r.psi:
        assert np.max(np.abs(psi)) <= 1e-12 * g.degree.max()
    np.testing.assert_allclose(r.phi[:, 0], g.degree, rtol=1e-12)


def test_telescoping_random_F():
    g = er_graph(20, 0.3, 6)
    x = np.random.default_rng(6).standard_normal(20)
    F = softmax_rows(np.random.default_rng(1).normal(size=(4, 16)))
    r = legs_apply(F, diffusion_cascade(g, 0.5, x, 16))
    assert np.max(np.abs(sum(r.all())[:, 0] - x)) <= 1e-10 * np.max(np.abs(x))


def test_fault_hook_breaks_telescoping():
    g = er_graph(10, 0.4, 2)
    x = np.random.default_rng(2).standard_normal(10)
    F = softmax_rows(np.random.default_rng(5).normal(scale=3, size=(3, 8)))
    with inject_fault("flip_psi_sign"):
        r = legs_apply(F, diffusion_cascade(g, 0.5, x, 8))
    assert np.max(np.abs(sum(r.all())[:, 0] - x)) > 1e-3
    r = legs_apply(F, diffusion_cascade(g, 0.5, x, 8))
    assert np.max(np.abs(sum(r.all())[:, 0] - x)) <= 1e-10


def test_sparsify_and_support():
    F = np.array([[0.6, 0.3999, 0.0001, 0.0], [0.0, 0.0, 0.5, 0.5]])
    Fs = sparsify(F, 1e-3)
    np.testing.assert_allclose(Fs.sum(axis=1), 1.0)
    assert Fs[0, 2] == 0.0
    assert has_ordered_disjoint_support(Fs)
    assert not has_ordered_disjoint_support(np.array([[0.5, 0.5, 0], [0, 0.5, 0.5]]))


def test_nonexpansive_one_hot():
    g = er_graph(30, 0.2, 1)
    rep = check_nonexpansive(ScaleSequence((1, 2, 5, 9), 12).selection(), 1e-3, g, trials=200)
    assert rep.support_ok and rep.max_energy_ratio <= 1 + 1e-10


def test_nonexpansive_shared_column_flagged():
    g = er_graph(12, 0.3, 1)
    F = np.array([[0.5, 0.5, 0, 0], [0, 0.5, 0.5, 0]])
    assert not check_nonexpansive(F, 1e-3, g, trials=10).support_ok


def test_nonexpansive_split_mass():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(100):
        g = er_graph(30, rng.uniform(0.1, 0.5), k)
        F = np.zeros((4, 16))
        for j in range(4):
            F[j, 4 * j:4 * j + 2] = 0.5
        rep = check_nonexpansive(F, 1e-3, g, trials=10, seed=k)
        assert rep.support_ok
        worst = max(worst, rep.max_energy_ratio)
    assert worst <= 1 + 1e-10


@settings(max_examples=60, deadline=None)
@given(J=st.integers(1, 6), m=st.integers(6, 16), seed=st.integers(0, 10_000))
def test_nonexpansive_random_disjoint(J, m, seed):
    rng = np.random.default_rng(seed)
    F = sample_disjoint_F(rng, J, m)
    assert has_ordered_disjoint_support(F)
    rep = check_nonexpansive(F, 1e-12, er_graph(int(rng.integers(3, 30)), 0.3, seed), trials=8, seed=seed)
    assert rep.max_energy_ratio <= 1 + 1e-10
