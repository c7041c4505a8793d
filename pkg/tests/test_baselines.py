import numpy as np
import pytest

from fogpr.baselines import FrozenModel, LinearModel, freeze, make_model
from fogpr.errors import InputError
from fogpr.fo_gpr import OnlineGP
from fogpr.gp_core import Hyperparams


def test_linear_update_rule():
    m = LinearModel(2, 1, learning_rate=0.5)
    m.W[:] = [[1.0, 2.0]]
    m.observe([1.0, -1.0], [3.0])
    # W + 0.5 * (3 - (-1)) * [1, -1]
    assert np.allclose(m.W, [[3.0, 0.0]])
    assert m.predict([1.0, 1.0]).var == 0.0


def test_linear_converges_on_linear_data(rng):
    W_true = rng.normal(size=(3, 4))
    m = LinearModel(4, 3, learning_rate=0.1)
    for _ in range(3000):
        x = rng.normal(size=4)
        m.observe(x, W_true @ x)
    assert np.max(np.abs(m.W - W_true)) < 1e-6


def test_linear_rejects_bad_rate_and_shape():
    with pytest.raises(InputError):
        LinearModel(2, 1, learning_rate=0.0)
    with pytest.raises(InputError):
        LinearModel(2, 1).predict([1.0])


def test_frozen_stops_learning():
    m = FrozenModel(OnlineGP(1, 1, Hyperparams()), freeze_at=3)
    for v in range(5):
        m.observe([float(v)], [float(v)])
    assert len(m) == 3 and m.n_seen == 5 and m.frozen


def test_frozen_before_any_data_is_prior_controller():
    m = FrozenModel(OnlineGP(2, 1, Hyperparams()), freeze_at=0)
    m.observe([0.5, 0.5], [1.0])
    post = m.predict([0.5, 0.5])
    assert post.var == 1.0 and np.all(post.mu == 0.0)


def test_freeze_snapshot_is_independent():
    live = OnlineGP(1, 1, Hyperparams())
    live.observe([0.0], [1.0])
    snap = freeze(live)
    live.observe([1.0], [5.0])
    snap.observe([2.0], [7.0])
    assert len(snap) == 1 and len(live) == 2


@pytest.mark.parametrize("kind", ["fo_gpr", "standard_gpr", "offline_gpr", "linear"])
def test_make_model(kind):
    m = make_model(kind, 3, 2)
    m.observe(np.ones(3), np.ones(2))
    assert m.predict(np.ones(3)).mu.shape == (2,)


def test_make_model_unknown():
    with pytest.raises(InputError):
        make_model("svm", 1, 1)
