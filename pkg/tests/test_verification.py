import numpy as np
import pytest

from legs.data import eccentricity
from legs.graph import Graph
from legs.learnable import has_ordered_disjoint_support, inject_fault
from legs.verification import (
    DEFAULT_SUITE,
    PROPERTIES,
    PropertySpec,
    run_property,
    run_suite,
    sample_disjoint_F,
    sample_graph,
    sample_signal,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        PropertySpec("frame_bounds", 0.0)
    with pytest.raises(ValueError):
        PropertySpec("frame_bounds", 1e-9, trials=50)
    with pytest.raises(ValueError):
        PropertySpec("no_such_property", 1e-9)
    with pytest.raises(ValueError):
        PropertySpec("frame_bounds", 1e-9, fault="bogus")


def test_suite_covers_required_properties():
    names = {s.name for s in DEFAULT_SUITE}
    assert names == set(PROPERTIES)
    assert all(s.trials >= 100 for s in DEFAULT_SUITE)


def test_samplers_connected_and_sized():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = sample_graph(rng)
        assert isinstance(g, Graph) and 5 <= g.n <= 50
        assert np.all(eccentricity(g) < g.n)  # one component: every node reaches every other
        x = sample_signal(rng, g)
        assert x.shape == (g.n, 1) and np.all(np.isfinite(x))
    for _ in range(200):
        J = int(rng.integers(1, 6))
        F = sample_disjoint_F(rng, J, int(rng.integers(J, 17)))
        assert has_ordered_disjoint_support(F)
        np.testing.assert_allclose(F.sum(axis=1), 1.0, atol=1e-12)


def test_run_property_deterministic():
    a = run_property(PropertySpec("frame_bounds", 1e-9, trials=100, seed=9))
    b = run_property(PropertySpec("frame_bounds", 1e-9, trials=100, seed=9))
    assert a.worst_value == b.worst_value and a.passed


@pytest.mark.parametrize("name", ["telescoping_fixed", "telescoping_legs"])
def test_row_sum_fault_is_named(name):
    spec = next(s for s in DEFAULT_SUITE if s.name == name)
    report = run_property(PropertySpec(name, spec.tolerance, trials=100, fault="row_sum"))
    assert not report.passed and report.worst_value > 1e-3
    assert report.name == name


def test_sign_flip_fault_breaks_identity():
    specs = [s for s in DEFAULT_SUITE if s.name in ("telescoping_legs", "one_hot_reduction", "frame_bounds")]
    with inject_fault("flip_psi_sign"):
        reports = {r.name: r for r in run_suite(specs)}
    assert not reports["telescoping_legs"].passed
    assert not reports["one_hot_reduction"].passed
    # energy is blind to a sign flip
    assert reports["frame_bounds"].passed


def test_non_finite_report_fails():
    from legs.verification import PropertyReport
    assert not PropertyReport("x", float("nan"), 1.0, 100, 0.0).passed
