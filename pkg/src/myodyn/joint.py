"""Single-hinge wrist: muscle geometry, torque and forward simulation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError
from .muscle import (MuscleConstants, MuscleKinematics, MuscleParams, activation,
                     fiber_length, force_length_active, force_passive, force_velocity)


class RangeError(DomainError):
    """Joint angle outside the configured motion range."""


class SimulationError(RuntimeError):
    pass


@dataclass
class MuscleGeometry:
    """Moment-arm polynomial ``r(q) = sum c_i q**i`` and reference length.

    Extensors carry negative coefficients; ``lmt(q)`` is the analytic integral
    of ``-r`` so that ``r = -d(lmt)/dq`` holds exactly.
    """

    name: str
    arm_coeffs: Sequence[float]
    lmt_ref: float


@dataclass
class JointModel:
    m: float = 0.45
    L: float = 0.07
    Ip: float = 1e-4
    C: float = 0.05
    g: float = 9.81
    muscles: list[MuscleGeometry] = field(default_factory=list)
    q_range: tuple[float, float] = (-np.pi / 2, np.pi / 2)

    def __post_init__(self):
        if min(self.m, self.L, self.Ip) < 0 or self.C < 0:
            raise ValueError("m, L, Ip and C must be nonnegative")
        if self.inertia <= 0:
            raise ValueError("moment of inertia m*L**2 + Ip must be positive")

    @property
    def inertia(self) -> float:
        return self.m * self.L ** 2 + self.Ip

    @property
    def gravity_torque(self) -> float:
        """Peak gravitational torque ``m g L``."""
        return self.m * self.g * self.L

    @property
    def names(self) -> list[str]:
        return [geo.name for geo in self.muscles]

    def stacked(self) -> "GeometryStack":
        return GeometryStack.from_geometries(self.muscles)

    def validate(self, params: Sequence[MuscleParams], n_grid: int = 201):
        """Check ``lmt(q) > lst`` for every muscle over the motion range."""
        q = np.linspace(*self.q_range, n_grid)
        for geo, p in zip(self.muscles, params):
            lmt = musculotendon_length(q, geo, check=False)
            if np.any(lmt <= p.lst):
                raise DomainError(f"{geo.name}: muscle-tendon length reaches tendon slack within motion range")


@dataclass
class GeometryStack:
    """Geometry of N muscles as per-degree coefficient arrays, for broadcasting."""

    names: list[str]
    arm_coeffs: list[np.ndarray]  # degree i -> (N,)
    lmt_ref: np.ndarray

    @classmethod
    def from_geometries(cls, geos: Sequence[MuscleGeometry]):
        deg = max(len(g.arm_coeffs) for g in geos)
        coeffs = np.zeros((deg, len(geos)))
        for j, g in enumerate(geos):
            coeffs[:len(g.arm_coeffs), j] = g.arm_coeffs
        return cls([g.name for g in geos], list(coeffs), np.array([g.lmt_ref for g in geos], dtype=float))


@dataclass
class JointState:
    q: float
    qdot: float


@dataclass
class Trajectory:
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    excitations: np.ndarray  # (T, N)
    forces: np.ndarray  # (T, N)
    torque: np.ndarray

    @property
    def states(self) -> list[JointState]:
        return [JointState(float(a), float(b)) for a, b in zip(self.q, self.qdot)]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def stack_params(params: Sequence[MuscleParams]) -> MuscleParams:
    """Combine per-muscle parameters into one record of ``(N,)`` arrays."""
    return MuscleParams(**{k: np.array([getattr(p, k) for p in params], dtype=float)
                           for k in ("l0m", "v0", "F0m", "lst", "phi0")})


def _check_range(q, q_range):
    qv = np.asarray(ad.value(q))
    lo, hi = q_range
    if np.any(qv < lo) or np.any(qv > hi):
        raise RangeError(f"joint angle {qv.min():.4g}..{qv.max():.4g} outside motion range [{lo:.4g}, {hi:.4g}]")


def moment_arm(q, geo, check: bool = True, q_range=(-np.pi / 2, np.pi / 2)):
    if check:
        _check_range(q, q_range)
    coeffs = list(geo.arm_coeffs)
    r = coeffs[-1]
    for c in reversed(coeffs[:-1]):
        r = ad.add(ad.mul(r, q), c)
    return r


def musculotendon_length(q, geo, check: bool = True, q_range=(-np.pi / 2, np.pi / 2)):
    """``lmt_ref - integral_0^q r(u) du``, evaluated in Horner form."""
    if check:
        _check_range(q, q_range)
    integ = [np.divide(c, i + 1) for i, c in enumerate(geo.arm_coeffs)]
    s = integ[-1]
    for c in reversed(integ[:-1]):
        s = ad.add(ad.mul(s, q), c)
    return ad.sub(geo.lmt_ref, ad.mul(s, q))


def fiber_velocity(q, qdot, geo, p: MuscleParams, check: bool = True,
                   q_range=(-np.pi / 2, np.pi / 2)):
    """Fiber shortening velocity ``(lmt - lst)/lm * (-r(q)) * qdot``."""
    lmt = musculotendon_length(q, geo, check, q_range)
    kin = fiber_length(lmt, p)
    r = moment_arm(q, geo, False)
    return ad.mul(ad.mul(ad.div(ad.sub(lmt, p.lst), kin.lm), ad.neg(r)), qdot)


def muscle_state(q, qdot, geo, p: MuscleParams, check: bool = True,
                 q_range=(-np.pi / 2, np.pi / 2)):
    """Moment arm and full kinematics (lm, phi, v) at angle ``q``."""
    lmt = musculotendon_length(q, geo, check, q_range)
    kin = fiber_length(lmt, p)
    r = moment_arm(q, geo, False)
    kin.v = ad.mul(ad.mul(ad.div(ad.sub(lmt, p.lst), kin.lm), ad.neg(r)), qdot)
    return r, kin


def muscle_forces(e, q, qdot, geo, p: MuscleParams, A, c: MuscleConstants = MuscleConstants(),
                  check: bool = True, q_range=(-np.pi / 2, np.pi / 2), vbar_floor: float | None = None):
    """Tendon forces and moment arms for broadcast-compatible inputs.

    With stacked geometry/parameters of N muscles, a scalar ``q`` gives
    ``(N,)`` outputs and a ``(B, 1)`` column gives ``(B, N)``.
    ``vbar_floor`` clips normalized velocity from below instead of raising.
    """
    a = activation(e, A)
    r, kin = muscle_state(q, qdot, geo, p, check, q_range)
    vbar = ad.div(kin.v, p.v0)
    if vbar_floor is not None:
        low = np.asarray(ad.value(vbar)) < vbar_floor
        if np.any(low):
            vbar = ad.where(low, vbar_floor, vbar)
    fv = force_velocity(vbar)
    active = ad.mul(ad.mul(ad.mul(a, fv), force_length_active(kin.lm, a, p, c)), p.F0m)
    F = ad.mul(ad.add(active, force_passive(kin.lm, p)), ad.cos(kin.phi))
    return F, r


def joint_torque(e, state: JointState, params, A, model: JointModel,
                 c: MuscleConstants = MuscleConstants(), check: bool = True):
    """Net joint torque and the per-muscle tendon forces.

    ``params`` is a sequence of :class:`MuscleParams` (one per muscle in
    ``model.muscles``) or an already stacked record.
    """
    p = params if isinstance(params, MuscleParams) else stack_params(params)
    F, r = muscle_forces(np.asarray(e, dtype=float), state.q, state.qdot, model.stacked(), p, A, c,
                         check, model.q_range)
    return float(np.sum(F * r)), np.asarray(F, dtype=float)


def angular_acceleration(tau, state: JointState, model: JointModel):
    """Equation of motion ``(tau - m g L sin q - C qdot) / I``."""
    I = model.inertia
    if I <= 0:
        raise ValueError("moment of inertia must be positive")
    return (tau - model.gravity_torque * np.sin(state.q) - model.C * state.qdot) / I


def simulate(excitation_fn: Callable[[float], np.ndarray], model: JointModel,
             params: Sequence[MuscleParams], A, q0: float, qdot0: float, dt: float,
             t_end: float, c: MuscleConstants = MuscleConstants()) -> Trajectory:
    """Classical RK4 integration of the hinge driven by muscle excitations.

    Excitations are sampled at the RK stage times.  Any precondition failure
    (range, slack, velocity below ``-v0``) aborts with the time and muscle.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = params if isinstance(params, MuscleParams) else stack_params(params)
    geo = model.stacked()
    names = geo.names
    n = int(round(t_end / dt))
    times = np.arange(n + 1) * dt

    def rhs(t, q, qd):
        e = np.asarray(excitation_fn(t), dtype=float)
        if np.any(e < 0) or np.any(e > 1):
            j = int(np.argmax((e < 0) | (e > 1)))
            raise SimulationError(f"t={t:.6g}s: excitation of {names[j]} = {e[j]:.4g} outside [0, 1]")
        lo, hi = model.q_range
        if not lo <= q <= hi:
            raise SimulationError(f"t={t:.6g}s: q={q:.4g} rad left motion range [{lo:.4g}, {hi:.4g}]")
        lmt = musculotendon_length(q, geo, check=False)
        slack = lmt - p.lst
        if np.any(slack <= 0):
            j = int(np.argmin(slack))
            raise SimulationError(f"t={t:.6g}s: {names[j]} muscle-tendon length below tendon slack")
        try:
            F, r = muscle_forces(e, q, qd, geo, p, A, c, check=False)
        except DomainError as exc:
            # locate the offending muscle for the diagnostic
            r_all, kin = muscle_state(q, qd, geo, p, check=False)
            vbar = kin.v / p.v0
            j = int(np.argmin(vbar))
            raise SimulationError(f"t={t:.6g}s: {names[j]}: {exc} (vbar={vbar[j]:.4g})") from exc
        tau = float(np.dot(F, r))
        qdd = (tau - model.gravity_torque * np.sin(q) - model.C * qd) / model.inertia
        return qdd, F, tau

    q = np.empty(n + 1)
    qd = np.empty(n + 1)
    qdd = np.empty(n + 1)
    forces = np.empty((n + 1, len(names)))
    torque = np.empty(n + 1)
    exc = np.empty((n + 1, len(names)))
    q[0], qd[0] = q0, qdot0
    for i in range(n + 1):
        t = times[i]
        a1, F, tau = rhs(t, q[i], qd[i])
        qdd[i], forces[i], torque[i] = a1, F, tau
        exc[i] = excitation_fn(t)
        if i == n:
            break
        k1q, k1v = qd[i], a1
        a2 = rhs(t + dt / 2, q[i] + dt / 2 * k1q, qd[i] + dt / 2 * k1v)[0]
        k2q, k2v = qd[i] + dt / 2 * k1v, a2
        a3 = rhs(t + dt / 2, q[i] + dt / 2 * k2q, qd[i] + dt / 2 * k2v)[0]
        k3q, k3v = qd[i] + dt / 2 * k2v, a3
        a4 = rhs(t + dt, q[i] + dt * k3q, qd[i] + dt * k3v)[0]
        k4q, k4v = qd[i] + dt * k3v, a4
        q[i + 1] = q[i] + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd[i + 1] = qd[i] + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return Trajectory(times, q, qd, qdd, exc, forces, torque)


def default_geometry(params: Sequence[MuscleParams], names: Sequence[str],
                     arms: Sequence[Sequence[float]]) -> list[MuscleGeometry]:
    """Geometry whose reference length puts every fiber at ``l0m`` when ``q = 0``."""
    geos = []
    for name, p, coeffs in zip(names, params, arms):
        lmt_ref = p.lst + p.l0m * np.cos(p.phi0)
        geos.append(MuscleGeometry(name, list(coeffs), float(lmt_ref)))
    return geos
