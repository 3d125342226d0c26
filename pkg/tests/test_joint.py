import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from myodyn.autodiff import DomainError
from myodyn.config import default_config
from myodyn.joint import (JointModel, JointState, MuscleGeometry, RangeError, SimulationError,
                          angular_acceleration, joint_torque, moment_arm, muscle_forces,
                          muscle_state, musculotendon_length, simulate, stack_params)
from myodyn.muscle import force_passive, table_params
from myodyn.training import dynamics_residual

CFG = default_config()
GEO = MuscleGeometry("X", [0.015, -0.008, -0.002], 0.3)


def test_polynomial_moment_arm():
    assert moment_arm(0.5, GEO) == pytest.approx(0.015 - 0.004 - 0.0005)
    assert moment_arm(0.0, GEO) == 0.015


@given(q=st.floats(-1.5, 1.5))
def test_moment_arm_is_minus_length_derivative(q):
    h = 1e-6
    dl = (musculotendon_length(q + h, GEO, check=False) - musculotendon_length(q - h, GEO, check=False)) / (2 * h)
    assert -dl == pytest.approx(moment_arm(q, GEO, check=False), abs=1e-9)


def test_length_at_zero_is_reference():
    assert musculotendon_length(0.0, GEO) == 0.3


def test_range_checked():
    with pytest.raises(RangeError):
        moment_arm(2.0, GEO)
    with pytest.raises(RangeError):
        musculotendon_length(-1.6, GEO)


def test_equation_of_motion():
    model = JointModel()
    s = JointState(0.3, -0.2)
    want = (0.01 - model.m * model.g * model.L * math.sin(0.3) - model.C * -0.2) / (model.m * model.L ** 2 + model.Ip)
    assert angular_acceleration(0.01, s, model) == pytest.approx(want)


def test_inertia_validation():
    with pytest.raises(ValueError):
        JointModel(m=0.0, Ip=0.0)
    with pytest.raises(ValueError):
        JointModel(C=-1.0)


def test_fibers_at_optimum_in_neutral_pose():
    model, params = CFG.joint_model(), CFG.initial_params()
    p = stack_params(params)
    _, kin = muscle_state(0.0, 0.0, model.stacked(), p)
    np.testing.assert_allclose(kin.lm, p.l0m, rtol=1e-12)
    np.testing.assert_allclose(kin.phi, p.phi0, atol=1e-12)
    F, r = muscle_forces(np.ones(5), 0.0, 0.0, model.stacked(), p, 0.01)
    # full activation, isometric, at l0m: F0m cos(phi0), plus the passive step
    # wherever rounding lands the fiber a hair past l0m
    passive = force_passive(kin.lm, p) * np.cos(kin.phi)
    np.testing.assert_allclose(F, p.F0m * np.cos(p.phi0) + passive, rtol=1e-9)
    np.testing.assert_allclose(r, [c[0] for c in (g.arm_coeffs for g in model.muscles)])


def test_torque_sign_convention():
    model, params = CFG.joint_model(), CFG.initial_params()
    flex = np.array([1.0, 1.0, 0.0, 0.0, 0.0])
    tau_f, _ = joint_torque(flex, JointState(0.0, 0.0), params, -1.0, model)
    tau_e, _ = joint_torque(flex[::-1], JointState(0.0, 0.0), params, -1.0, model)
    assert tau_f > 0 > tau_e


def test_batched_forces_match_scalar():
    model, params = CFG.joint_model(), CFG.initial_params()
    p = stack_params(params)
    rng = np.random.default_rng(0)
    e = rng.uniform(0, 1, size=(4, 5))
    q = rng.uniform(-0.5, 0.5, size=4)
    qd = rng.uniform(-0.5, 0.5, size=4)
    F, r = muscle_forces(e, q[:, None], qd[:, None], model.stacked(), p, -1.2)
    for i in range(4):
        Fi, ri = muscle_forces(e[i], q[i], qd[i], model.stacked(), p, -1.2)
        np.testing.assert_allclose(F[i], Fi, rtol=1e-12)
        np.testing.assert_allclose(r[i], ri, rtol=1e-12)


def test_validate_rejects_slack_geometry():
    params = [table_params("FCR")]
    model = JointModel(muscles=[MuscleGeometry("FCR", [0.05], params[0].lst + 0.01)])
    with pytest.raises(DomainError):
        model.validate(params)


def _flexor_pull(dt, t_end=0.2):
    # one flexor, constant drive, starting flexed: no velocity sign change and
    # the fiber stays shorter than optimal, so the right-hand side is smooth
    cfg = CFG.with_muscles(["FCR"])
    return simulate(lambda t: np.array([0.3]), cfg.joint_model(), cfg.true_params(), -1.0, 0.3, 0.0, dt, t_end)


def test_rk4_self_convergence():
    q = [_flexor_pull(dt).q[-1] for dt in (4e-3, 2e-3, 1e-3)]
    ratio = (q[0] - q[1]) / (q[1] - q[2])
    assert 12 <= ratio <= 20


def test_simulation_residual_vanishes():
    cfg = CFG
    prof = cfg.profile()
    traj = simulate(prof.excitation, cfg.joint_model(), cfg.true_params(), cfg.data.true_A, 0.0, 0.0, 1e-3, 0.5)
    rho = dynamics_residual(traj.q, traj.qdot, traj.qddot, traj.torque, cfg.joint_model())
    assert np.max(np.abs(rho)) < 1e-9
    assert traj.excitations.shape == traj.forces.shape == (501, 5)


def test_simulation_reports_range_exit():
    cfg = CFG.with_muscles(["FCR"])
    with pytest.raises(SimulationError, match=r"t=.*left motion range"):
        simulate(lambda t: np.array([1.0]), cfg.joint_model(), cfg.true_params(), 0.01, 1.5, 30.0, 1e-3, 2.0)


def test_simulation_rejects_bad_excitation():
    cfg = CFG.with_muscles(["FCR"])
    with pytest.raises(SimulationError, match="excitation of FCR"):
        simulate(lambda t: np.array([1.5]), cfg.joint_model(), cfg.true_params(), -1.0, 0.0, 0.0, 1e-3, 0.01)
    with pytest.raises(ValueError):
        simulate(lambda t: np.array([0.5]), cfg.joint_model(), cfg.true_params(), -1.0, 0.0, 0.0, 0.0, 0.01)


def test_passive_pendulum_energy_decays():
    # zero excitation keeps the flexor short and slack; damping only removes energy
    cfg = CFG.with_muscles(["FCR"])
    model = cfg.joint_model()
    traj = simulate(lambda t: np.array([0.0]), model, cfg.true_params(), -1.0, 0.4, 0.0, 1e-3, 0.5)
    energy = 0.5 * model.inertia * traj.qdot ** 2 + model.gravity_torque * (1 - np.cos(traj.q))
    assert np.all(np.diff(energy) <= 1e-12)
