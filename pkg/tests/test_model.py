import numpy as np
import pytest

from legs.autograd import fd_gradient
from legs.data import gen_synthetic
from legs.model import LegsModel
from legs.scattering import ScatteringConfig

CFG = ScatteringConfig(J=3, m=6, q_max=3, order=2)


def _model(variant, ds, seed=0):
    m = LegsModel(variant, CFG, ds.channels, 2, hidden=12, n_anchors=6, theta_init="random", seed=seed)
    m.setup(ds)
    return m


@pytest.mark.parametrize("variant", ["LEGS-FCN", "LEGS-RBF"])
def test_end_to_end_gradients_match_fd(variant):
    ds = gen_synthetic("er_density", 8, (6, 9), seed=4)
    model = _model(variant, ds)
    _, grads = model.loss_and_grads(ds)
    for name, p in model.params().items():
        def f(v, p=p):
            old = p.copy()
            p[...] = v
            val = model.loss_and_grads(ds)[0]
            p[...] = old
            return val
        fd = fd_gradient(f, p.copy(), 1e-6)
        # norm-wise comparison: a handful of entries sit at the roundoff floor
        err = np.linalg.norm(grads[name] - fd) / np.linalg.norm(fd)
        assert err <= 1e-5, (name, err)


def test_fixed_variant_has_no_theta():
    ds = gen_synthetic("cycle_vs_tree", 6, (6, 8), seed=0)
    model = _model("LEGS-FIXED", ds)
    assert "theta" not in model.params()
    F = model.selection().F
    assert [int(np.argmax(r)) + 1 for r in F] == [1, 2, 4]
    assert np.array_equal(F, (F == 1).astype(float))


def test_state_dict_round_trip():
    ds = gen_synthetic("cycle_vs_tree", 6, (6, 8), seed=0)
    a = _model("LEGS-RBF", ds, seed=1)
    b = LegsModel("LEGS-RBF", CFG, ds.channels, 2, hidden=12, n_anchors=6, seed=2)
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a.predict_raw(ds), b.predict_raw(ds))


def test_rbf_anchor_count_clamped():
    ds = gen_synthetic("cycle_vs_tree", 4, (6, 8), seed=0)
    model = LegsModel("LEGS-RBF", CFG, ds.channels, 2, n_anchors=64)
    model.setup(ds)
    assert model.head.anchors.shape[0] == 4
    assert model.predict(ds).shape == (4,)
