import numpy as np
import pytest

from brsm.dense import finite_diff_grad, make_rng, relative_error
from brsm.layer import LayerGeometry, LayerWeights, RSMLayer
from brsm.learning import (
    Adam,
    LocalTrainer,
    TrainConfig,
    backward_step,
    boost_schedule,
    maybe_forget,
    mse_grad,
    mse_loss,
    train_loop,
)
from brsm.readout import Classifier


def test_mse_examples():
    assert mse_loss([0.3, 0.2], [0.3, 0.2]) == 0.0
    assert mse_loss([1.0, 0.0], [0.0, 0.0]) == 0.5
    a, b = make_rng(0).normal(size=(2, 5))
    assert mse_loss(a, b) == mse_loss(b, a)
    with pytest.raises(ValueError):
        mse_loss([1.0], [1.0, 2.0])


def _setup(m=4, n=1, k=2, d=3, batch=1, seed=0, trainable=False):
    rng = make_rng(seed)
    geom = LayerGeometry(m, n, k, d)
    w = LayerWeights.initialize(geom, rng, trainable_decay=trainable)
    layer = RSMLayer(geom, w)
    state = layer.new_state(batch)
    state.psi_prev[:] = rng.random(state.psi_prev.shape)
    return layer, state, rng


def test_zero_loss_gradient_gives_zero_grads():
    layer, state, rng = _setup(trainable=True)
    out, _ = layer.step(rng.normal(size=3), state)
    grads = backward_step(out, layer, np.zeros_like(out.x_hat))
    assert all(not g.any() for g in grads.values())


def test_decoder_gradient_closed_form():
    layer, state, rng = _setup(m=2, k=1, d=2)
    out, _ = layer.step(rng.normal(size=2), state)
    g = rng.normal(size=(1, 2))
    grads = backward_step(out, layer, g)
    np.testing.assert_allclose(grads["w_d"], np.outer(g[0], out.y_group[0]))


def test_missing_step_output_is_an_error():
    layer, _, _ = _setup()
    with pytest.raises(ValueError):
        backward_step(None, layer, np.zeros((1, 3)))


@pytest.mark.parametrize("trainable", [False, True])
def test_gradients_match_finite_differences(trainable):
    layer, state, rng = _setup(m=4, n=1, k=2, d=3, seed=11, trainable=trainable)
    x = rng.normal(size=(1, 3))
    target = rng.normal(size=(1, 3))
    out, _ = layer.step(x, state, update_duty_cycle=False)
    grads = backward_step(out, layer, mse_grad(out.x_hat, target))
    for name, param in layer.weights.as_dict().items():

        def loss(value, name=name):
            saved = getattr(layer.weights, name)
            setattr(layer.weights, name, value)
            o, _ = layer.step(x, state, update_duty_cycle=False)
            setattr(layer.weights, name, saved)
            np.testing.assert_array_equal(o.winners, out.winners)
            return mse_loss(o.x_hat, target)

        assert relative_error(grads[name], finite_diff_grad(loss, param), 1e-7) <= 1e-4


def test_gradients_ignore_older_history():
    # two states that agree on the last step's inputs but not on anything older
    layer, state, rng = _setup(trainable=True, batch=2)
    other = state.copy()
    other.psi[:] = rng.random(other.psi.shape)
    other.inhibition[:] = 0.3
    x = rng.normal(size=(2, 3))
    t = rng.normal(size=(2, 3))
    o1, _ = layer.step(x, state, update_duty_cycle=False)
    o2, _ = layer.step(x, other, update_duty_cycle=False)
    g1 = backward_step(o1, layer, mse_grad(o1.x_hat, t))
    g2 = backward_step(o2, layer, mse_grad(o2.x_hat, t))
    for name in g1:
        np.testing.assert_array_equal(g1[name], g2[name])


def test_adam_zero_gradient_and_first_step():
    opt = Adam(lr=0.1)
    p = {"a": np.array([1.0, -2.0]), "b": np.array([3.0])}
    opt.step(p, {"a": np.array([0.5, -0.5]), "b": np.zeros(1)})
    np.testing.assert_allclose(p["a"], [0.9, -1.9], atol=1e-6)
    assert p["b"][0] == 3.0
    before = opt.m["a"].copy()
    opt.step(p, {"a": np.zeros(2), "b": np.zeros(1)})
    np.testing.assert_allclose(opt.m["a"], 0.9 * before)
    assert opt.t == 2


def test_adam_state_round_trip():
    opt = Adam(lr=0.01)
    p = {"w": np.ones(3)}
    opt.step(p, {"w": np.array([1.0, 2.0, 3.0])})
    clone = Adam()
    clone.load_state_dict(opt.state_dict())
    q = {"w": p["w"].copy()}
    g = {"w": np.array([0.3, -0.1, 0.2])}
    opt.step(p, g)
    clone.step(q, g)
    np.testing.assert_array_equal(p["w"], q["w"])


def test_boost_schedule():
    assert boost_schedule(1.2, 0.85, True) == pytest.approx(1.02)
    assert boost_schedule(1.2, 0.85, False) == 1.2
    assert boost_schedule(1.2, 1.0, True) == 1.2
    beta = 1.2
    for _ in range(200):
        beta = boost_schedule(beta, 0.85, True)
    assert beta < 1e-12
    with pytest.raises(ValueError):
        boost_schedule(1.0, 1.5, True)


def test_forgetting_rates():
    layer, _, rng = _setup(batch=4)
    state = layer.new_state(4)
    state.psi[:] = 0.5
    assert not maybe_forget(state, 0.0, rng).any()
    assert (state.psi == 0.5).all()
    assert maybe_forget(state, 1.0, rng).all()
    assert not state.psi.any()
    big = layer.new_state(100)
    cleared = sum(int(maybe_forget(big, 0.025, rng).sum()) for _ in range(100))
    assert abs(cleared / 10_000 - 0.025) <= 0.005


def test_forgetting_keeps_duty():
    layer, state, rng = _setup(batch=3)
    layer.step(rng.normal(size=(3, 3)), state)
    duty = layer.duty.copy()
    maybe_forget(state, 1.0, rng)
    np.testing.assert_array_equal(layer.duty, duty)
    assert not state.x_b.any() and not state.psi.any()


def _trainer(freeze=None, seed=0, m=8, k=2, d=4, lr=5e-3):
    rng = make_rng(seed)
    geom = LayerGeometry(m, 1, k, d)
    layer = RSMLayer(geom, LayerWeights.initialize(geom, rng))
    clf = Classifier(m, 6, 3, rng)
    cfg = TrainConfig(learning_rate=lr, rsm_freeze_step=freeze, boost_factor=0.5, epoch_steps=10)
    return LocalTrainer(layer, cfg, rng, clf), rng


def test_freeze_at_zero_leaves_layer_untouched():
    trainer, rng = _trainer(freeze=0)
    before = trainer.layer.weights.copy()
    clf_before = {k: v.copy() for k, v in trainer.readout.params.items()}
    state = trainer.layer.new_state(2)
    for _ in range(20):
        state, _, _ = trainer.step(state, rng.normal(size=(2, 4)), rng.normal(size=(2, 4)), [0, 1])
    for name, value in before.as_dict().items():
        np.testing.assert_array_equal(getattr(trainer.layer.weights, name), value)
    assert any(not np.array_equal(clf_before[k], v) for k, v in trainer.readout.params.items())


def test_readout_training_never_touches_layer():
    trainer, rng = _trainer()
    before = trainer.layer.weights.copy()
    hidden = rng.normal(size=(2, 8))
    for _ in range(5):
        trainer.readout.train_step(hidden, [0, 2], trainer.readout_optimizer)
    for name, value in before.as_dict().items():
        np.testing.assert_array_equal(getattr(trainer.layer.weights, name), value)


def test_boost_decays_at_epoch_boundaries():
    trainer, rng = _trainer()
    beta = trainer.layer.boost_strength
    state = trainer.layer.new_state(1)
    for _ in range(25):
        state, _, _ = trainer.step(state, rng.normal(size=4), rng.normal(size=4))
    assert trainer.layer.boost_strength == pytest.approx(beta * 0.25)


def test_constant_stream_mse_goes_to_zero():
    trainer, rng = _trainer(lr=1e-2)
    x = rng.normal(size=(1, 4))
    x /= np.linalg.norm(x)
    state = trainer.layer.new_state(1)
    losses = []
    for _ in range(500):
        state, _, rec = trainer.step(state, x, x)
        losses.append(rec["mse"])
    assert losses[-1] < 1e-3 * losses[0]


def test_loss_decreases_on_learnable_stream():
    trainer, rng = _trainer(seed=3, lr=5e-3)
    protos = rng.normal(size=(3, 4)) / 2
    state = trainer.layer.new_state(4)
    labels = rng.integers(3, size=4)
    losses = []
    for _ in range(1000):
        nxt = (labels + 1) % 3
        state, _, rec = trainer.step(state, protos[labels], protos[nxt], nxt)
        losses.append(rec["mse"])
        labels = nxt
    assert np.mean(losses[-100:]) < np.mean(losses[:100])


def test_train_loop_stops_cleanly():
    trainer, rng = _trainer()
    items = [(rng.normal(size=(1, 4)), np.array([i % 3])) for i in range(12)]
    steps = [s for s, _, _ in train_loop(items, trainer, trainer.layer.new_state(1))]
    assert steps == list(range(1, 12))
    trainer2, _ = _trainer()
    out = list(train_loop(items, trainer2, trainer2.layer.new_state(1), max_steps=5, emit_every=2))
    assert [s for s, _, _ in out] == [2, 4]
    assert list(train_loop([], trainer2, None)) == []


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(forget_prob=1.5)
    with pytest.raises(ValueError):
        TrainConfig(boost_factor=0.0)
    with pytest.raises(ValueError):
        TrainConfig(readout_input="z")
