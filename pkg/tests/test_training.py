import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from myodyn import autodiff as ad
from myodyn.config import two_muscle_config
from myodyn.data import synthesize_trial
from myodyn.joint import JointModel
from myodyn.training import (TrainConfig, TrainableParams, TrainingError, adam_init, adam_step, dynamics_residual,
                             envelope_derivatives, hill_forces, identify_report, loss_grad_check, loss_q,
                             pool_samples, residual_dynamics, residual_force, split_indices, train)

CFG = two_muscle_config()


@pytest.fixture(scope="module")
def toy():
    prof = CFG.profile()
    prof.duration, prof.settle = 0.6, 0.5
    trial, _ = synthesize_trial(prof, CFG.joint_model(), CFG.true_params(), CFG.data.true_A)
    return trial


def _net(**kw):
    return dataclasses.replace(CFG.network, hidden_widths=(8, 8, 8, 8), **kw)


# loss terms

def test_loss_q_worked_example():
    assert loss_q(np.array([0.0, 0.0]), np.array([5.0, 0.0])) == pytest.approx(12.5)
    with pytest.raises(ValueError):
        loss_q(np.zeros(3), np.zeros(2))


def test_dynamics_residual_trivial_cases():
    model = JointModel()
    assert dynamics_residual(np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3), model) == pytest.approx(0)
    q = np.linspace(-1, 1, 5)
    hold = model.gravity_torque * np.sin(q)
    np.testing.assert_allclose(dynamics_residual(q, 0 * q, 0 * q, hold, model), 0, atol=1e-15)
    # one unit of torque imbalance reads as 1 / (m g L)
    assert dynamics_residual(0.0, 0.0, 0.0, -1.0, model) == pytest.approx(1 / model.gravity_torque)


def test_residual_dynamics_is_mean_square():
    model = JointModel()
    F, r = np.array([[1.0, 2.0], [0.0, 0.0]]), np.array([[0.01, 0.02], [0.01, 0.02]])
    z = np.zeros(2)
    expected = np.mean((-(F * r).sum(1) / model.gravity_torque) ** 2)
    assert residual_dynamics(z, z, z, F, r, model) == pytest.approx(expected)


def test_residual_force_scaling():
    F_hat = np.array([[110.0, 40.0]])
    F = np.array([[100.0, 50.0]])
    assert residual_force(F_hat, F, np.array([100.0, 50.0])) == pytest.approx((0.01 + 0.04) / 2)


def test_oracle_residual_true_parameters(toy):
    tp = CFG.trainable_params()
    truth = {"F0m": np.array([p.F0m for p in CFG.true_params()]),
             "l0m": np.array([p.l0m for p in CFG.true_params()]), "A": np.array([CFG.data.true_A])}
    # recompute the simulator's own kinematics
    traj_qd = np.gradient(toy.q, toy.t)
    F, r = hill_forces(toy.e, toy.q, traj_qd, CFG.physics(), truth)
    np.testing.assert_allclose(F, toy.forces, rtol=1e-3, atol=1e-2)
    assert tp.values()["A"][0] < 0.0101


# optimizer

def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    st_ = adam_init(p)
    adam_step(p, {"w": np.array([0.5, -4.0, 1e-3])}, st_, lr=0.1)
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 2.9], rtol=1e-6)


def test_adam_zero_gradient_keeps_params():
    p = {"w": np.array([1.0, 2.0])}
    st_ = adam_init(p)
    for _ in range(3):
        adam_step(p, {"w": np.zeros(2)}, st_, lr=0.1)
    np.testing.assert_array_equal(p["w"], [1.0, 2.0])


def test_adam_per_key_rate_and_shape_check():
    p = {"a": np.array([0.0]), "b": np.array([0.0])}
    st_ = adam_init(p)
    adam_step(p, {"a": np.array([1.0]), "b": np.array([1.0])}, st_, lr={"a": 0.1, "b": 0.01})
    assert p["a"][0] == pytest.approx(-0.1) and p["b"][0] == pytest.approx(-0.01)
    with pytest.raises(ValueError):
        adam_step(p, {"a": np.ones(2)}, st_, lr=0.1)


# bounded parameters

@given(raw=st.lists(st.floats(-50, 50), min_size=5, max_size=5))
def test_mapped_parameters_stay_in_bounds(raw):
    tp = CFG.trainable_params()
    raw = np.array(raw)
    tp.raw = {"F0m": raw[:2], "l0m": raw[2:4], "A": raw[4:]}
    v = tp.values()
    for k in tp.KEYS:
        assert np.all(v[k] >= tp.lo[k]) and np.all(v[k] <= tp.hi[k])


def test_bounds_follow_initial_guess():
    tp = TrainableParams.from_initial([400.0, 200.0], [0.06, 0.05], 0.01)
    np.testing.assert_allclose(tp.lo["F0m"], [200, 100])
    np.testing.assert_allclose(tp.hi["l0m"], [0.061, 0.051])
    np.testing.assert_allclose(tp.values()["F0m"], [400, 200])
    # A = 0.01 sits on its upper bound and starts just inside
    assert tp.lo["A"][0] < tp.values()["A"][0] < 0.01


# data plumbing

def test_envelope_derivatives_exact_on_quadratic(toy):
    t = np.linspace(0, 1, 101)
    tr = dataclasses.replace(toy.subset(np.arange(101)), t=t, e=np.column_stack([t ** 2, 0.5 * t]))
    d1, d2 = envelope_derivatives(tr)
    np.testing.assert_allclose(d1[1:-1, 0], 2 * t[1:-1], atol=1e-12)
    np.testing.assert_allclose(d2[2:-2, 0], 2.0, atol=1e-9)
    np.testing.assert_allclose(d1[:, 1], 0.5, atol=1e-12)


def test_pool_and_split(toy):
    s = pool_samples([toy, toy], stride=10)
    assert len(s["t"]) == 2 * len(range(0, len(toy), 10))
    tr, va = split_indices(s, "tail", 0.2)
    assert np.all(s["pos"][va] >= 0.8) and len(tr) + len(va) == len(s["t"])
    tr, va = split_indices(s, "interleaved", 0.25)
    assert np.all(va % 4 == 3)
    tr, va = split_indices(s, "none")
    assert len(va) == 0
    with pytest.raises(ValueError):
        split_indices(s, "random")


def test_identify_report_variation():
    rows = identify_report({"F0m": [475.2]}, {"F0m": [407.0]}, ["FCR"])
    assert rows[0]["variation_pct"] == pytest.approx(100 * 475.2 / 407)
    assert identify_report({"A": [-2.0]}, {"A": [0.0]}, ["FCR"])[0]["variation_pct"] is None


# training loop

def test_train_report_rows_and_bounds(toy):
    tc = TrainConfig(lr=1e-3, epochs=3, batch_size=16, stride=20, w1=1.0, w2=1.0)
    w, tp, rep = train([toy], CFG.physics(), CFG.trainable_params(), _net(dropout_rate=0.3), tc)
    assert [r["epoch"] for r in rep.epochs] == [1, 2, 3]
    assert rep.mode == "pinn" and 1 <= rep.best_epoch <= 3
    for k in tp.KEYS:
        v = rep.identified[k]
        assert np.all(v >= tp.lo[k]) and np.all(v <= tp.hi[k])
    assert len(rep.variation) == 5


def test_baseline_equals_zero_weight_physics_run(toy):
    common = dict(lr=1e-3, epochs=2, batch_size=8, stride=20, w1=0.0, w2=0.0, seed=3)
    a = train([toy], CFG.physics(), CFG.trainable_params(), _net(dropout_rate=0.3), TrainConfig(**common))
    b = train([toy], CFG.physics(), CFG.trainable_params(), _net(dropout_rate=0.3),
              TrainConfig(force_physics=True, **common))
    assert a[2].mode == "baseline" and b[2].mode == "pinn"
    for k in a[0].arrays:
        np.testing.assert_array_equal(a[0].arrays[k], b[0].arrays[k])


def test_deterministic_given_seed(toy):
    tc = TrainConfig(lr=1e-3, epochs=2, batch_size=8, stride=20, seed=7)
    a = train([toy], CFG.physics(), CFG.trainable_params(), _net(), tc)
    b = train([toy], CFG.physics(), CFG.trainable_params(), _net(), tc)
    for k in a[0].arrays:
        np.testing.assert_array_equal(a[0].arrays[k], b[0].arrays[k])
    np.testing.assert_array_equal(a[1].raw["F0m"], b[1].raw["F0m"])


def test_warmup_freezes_parameters(toy):
    tc = TrainConfig(lr=1e-3, param_lr=1e-1, epochs=3, batch_size=8, stride=20, warmup_epochs=2)
    _, _, rep = train([toy], CFG.physics(), CFG.trainable_params(), _net(), tc)
    np.testing.assert_array_equal(rep.epochs[0]["params"]["F0m"], rep.initial["F0m"])
    assert rep.epochs[1]["L_r1"] == 0.0 and rep.epochs[2]["L_r1"] > 0.0
    assert not np.array_equal(rep.epochs[2]["params"]["F0m"], rep.initial["F0m"])
    assert rep.best_epoch == 3


def test_non_finite_loss_aborts_with_location(toy):
    bad = dataclasses.replace(toy, q=np.full_like(toy.q, 1e200))
    with pytest.raises(TrainingError, match="non-finite .* epoch 1"):
        train([bad], None, CFG.trainable_params(), _net(), TrainConfig(epochs=1, batch_size=8, stride=20))


def test_train_input_validation(toy):
    with pytest.raises(ValueError):
        train([], None, CFG.trainable_params(), _net(), TrainConfig())
    other = dataclasses.replace(toy, names=["A", "B"])
    with pytest.raises(ValueError):
        train([toy, other], None, CFG.trainable_params(), _net(), TrainConfig(epochs=1))


@settings(max_examples=3, deadline=None)
@given(seed=st.integers(0, 100))
def test_full_loss_gradients(toy, seed):
    from myodyn.network import init
    w = init(_net(), seed)
    w.scaling.force_scale = CFG.trainable_params().midpoint["F0m"]
    w.scaling.duration = float(toy.t[-1])
    samples = pool_samples([toy], 200)
    reps = loss_grad_check(w, CFG.trainable_params(), CFG.physics(), samples, weight_fraction=0.05, seed=seed)
    for term, rep in reps.items():
        assert rep.passed, (term, rep.failures[:3])


def test_batch_loss_rejects_unknown_pass(toy):
    from myodyn.network import init
    from myodyn.training import batch_loss
    w = init(_net(), 0)
    s = pool_samples([toy], 200)
    with pytest.raises(ValueError):
        batch_loss(w, CFG.trainable_params(), CFG.physics(), s, [None] * 6, 1, 1, physics_pass="other")
    parts = batch_loss(w, CFG.trainable_params(), None, s, [None] * 6, 1, 1)
    assert parts.L_r1 == 0.0 and ad.value(parts.L_total) == ad.value(parts.L_q)
