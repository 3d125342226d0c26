"""Activation mapping and the rigid-tendon Hill-type muscle model.

Every function is written against :mod:`myodyn.autodiff`'s generic operations,
so arguments may be floats, numpy arrays (broadcast elementwise, e.g. a
``(T, N)`` block of samples by muscles), tape variables or :class:`Dual2`.
Domain checks look at forward values only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError

A_MIN, A_MAX = -3.0, 0.01
_A_LINEAR = 1e-6
_SLOP = 1e-9


@dataclass
class MuscleParams:
    """Per-muscle physiological parameters.

    Fields may hold arrays (one entry per muscle) or tape variables when the
    model is evaluated in batch or under differentiation.
    """

    l0m: float  # optimal fiber length, m
    v0: float  # max contraction velocity, m/s
    F0m: float  # max isometric force, N
    lst: float  # tendon slack length, m
    phi0: float  # pennation at optimal length, rad

    def __post_init__(self):
        l0m, v0, F0m = (np.asarray(ad.value(x)) for x in (self.l0m, self.v0, self.F0m))
        lst, phi0 = np.asarray(ad.value(self.lst)), np.asarray(ad.value(self.phi0))
        if np.any(l0m <= 0) or np.any(v0 <= 0) or np.any(F0m <= 0):
            raise DomainError("l0m, v0 and F0m must be positive")
        if np.any(lst < 0):
            raise DomainError("lst must be nonnegative")
        if np.any(phi0 < 0) or np.any(phi0 >= np.pi / 2):
            raise DomainError("phi0 must lie in [0, pi/2)")

    @classmethod
    def from_defaults(cls, l0m, F0m, lst, phi0):
        """Build with the usual ``v0 = 10 * l0m`` per second."""
        return cls(l0m=l0m, v0=10.0 * l0m, F0m=F0m, lst=lst, phi0=phi0)

    @property
    def height(self):
        """Constant fiber height ``l0m * sin(phi0)``."""
        return ad.mul(self.l0m, ad.sin(self.phi0))


@dataclass(frozen=True)
class MuscleConstants:
    lam: float = 0.15  # activation-dependent optimal-length shift
    k: float = 0.45  # force-length width


@dataclass
class MuscleKinematics:
    lm: object
    phi: object
    v: object = None


# Table I of the wrist model (order FCR, FCU, ECRL, ECRB, ECU).
MUSCLE_NAMES = ("FCR", "FCU", "ECRL", "ECRB", "ECU")
TABLE_F0M = (407.0, 479.0, 337.0, 252.0, 192.0)
TABLE_L0M = (0.062, 0.051, 0.081, 0.058, 0.062)
TABLE_V0 = (0.62, 0.51, 0.81, 0.58, 0.62)
TABLE_LST = (0.24, 0.26, 0.24, 0.22, 0.2285)
TABLE_PHI0 = (0.05, 0.2, 0.0, 0.16, 0.06)
TABLE_A = 0.01


def table_params(name: str) -> MuscleParams:
    i = MUSCLE_NAMES.index(name)
    return MuscleParams(l0m=TABLE_L0M[i], v0=TABLE_V0[i], F0m=TABLE_F0M[i],
                        lst=TABLE_LST[i], phi0=TABLE_PHI0[i])


def check_shape_factor(A):
    Av = np.asarray(ad.value(A))
    if np.any(Av < A_MIN - _SLOP) or np.any(Av > A_MAX + _SLOP):
        raise DomainError(f"shape factor A={Av} outside [{A_MIN}, {A_MAX}]")


def activation(e, A):
    """Map a normalized envelope to activation: (exp(A e) - 1) / (exp(A) - 1)."""
    ev = np.asarray(ad.value(e))
    if np.any(ev < -_SLOP) or np.any(ev > 1 + _SLOP):
        raise DomainError("envelope outside [0, 1]")
    check_shape_factor(A)
    linear = np.abs(np.asarray(ad.value(A))) < _A_LINEAR
    if np.all(linear):
        return e
    # keep the untaken branch finite so its (masked) adjoint stays finite
    A_safe = ad.where(linear, 1.0, A)
    shaped = ad.div(ad.sub(ad.exp(ad.mul(A_safe, e)), 1.0), ad.sub(ad.exp(A_safe), 1.0))
    if not np.any(linear):
        return shaped
    return ad.where(np.broadcast_to(linear, np.broadcast(linear, ev).shape), e, shaped)


def pennation(lm, p: MuscleParams):
    """Pennation angle at fiber length ``lm`` (constant-height arcsine)."""
    w = p.height
    ratio = ad.div(w, lm)
    rv = np.asarray(ad.value(ratio))
    if np.any(np.asarray(ad.value(lm)) <= 0) or np.any(rv > 1.0):
        raise DomainError("fiber shorter than its constant height")
    return ad.arcsin(ratio)


def fiber_length(lmt, p: MuscleParams) -> MuscleKinematics:
    """Fiber length and pennation from muscle-tendon length with a rigid tendon.

    Closed form of ``lm*cos(phi) = lmt - lst`` and ``lm*sin(phi) = l0m*sin(phi0)``.
    """
    proj = ad.sub(lmt, p.lst)
    pv = np.asarray(ad.value(proj))
    if np.any(pv <= 0):
        raise DomainError(f"muscle-tendon length does not exceed tendon slack (min excess {pv.min():.4g} m)")
    w = p.height
    lm = ad.sqrt(ad.add(ad.mul(proj, proj), ad.mul(w, w)))
    phi = ad.arctan2(w, proj)
    return MuscleKinematics(lm=lm, phi=phi)


def force_length_active(lm, a, p: MuscleParams, c: MuscleConstants = MuscleConstants()):
    """Gaussian active force-length curve with activation-dependent optimum."""
    if np.any(np.asarray(ad.value(lm)) <= 0):
        raise DomainError("fiber length must be positive")
    av = np.asarray(ad.value(a))
    if np.any(av < -_SLOP) or np.any(av > 1 + _SLOP):
        raise DomainError("activation outside [0, 1]")
    opt = ad.mul(p.l0m, ad.add(ad.mul(c.lam, ad.sub(1.0, a)), 1.0))
    dev = ad.sub(ad.div(lm, opt), 1.0)
    return ad.exp(ad.div(ad.neg(ad.mul(dev, dev)), c.k))


def force_velocity(vbar):
    """Hyperbolic force-velocity curve; shortening is negative ``vbar``."""
    vv = np.asarray(ad.value(vbar))
    if np.any(vv < -1.0):
        raise DomainError(f"normalized velocity {vv.min():.4g} below -1")
    shortening = vv <= 0
    # guard each branch's pole against the other branch's inputs
    v_lo = ad.where(shortening, vbar, 0.0)
    v_hi = ad.where(shortening, 0.0, vbar)
    lo = ad.div(ad.mul(0.3, ad.add(v_lo, 1.0)), ad.add(ad.neg(v_lo), 0.3))
    hi = ad.div(ad.add(ad.mul(2.34, v_hi), 0.039), ad.add(ad.mul(1.3, v_hi), 0.039))
    if np.all(shortening):
        return lo
    if not np.any(shortening):
        return hi
    return ad.where(shortening, lo, hi)


def force_passive(lm, p: MuscleParams):
    """Passive elastic force, zero up to the optimal length.

    Implemented exactly as the exponential law, so there is a jump of
    ``F0m * exp(-5)`` at ``lm == l0m``.
    """
    if np.any(np.asarray(ad.value(lm)) <= 0):
        raise DomainError("fiber length must be positive")
    lbar = ad.div(lm, p.l0m)
    stretched = np.asarray(ad.value(lbar)) > 1.0
    if not np.any(stretched):
        return ad.mul(lbar, 0.0)
    fp = ad.mul(p.F0m, ad.exp(ad.sub(ad.mul(10.0, ad.sub(lbar, 1.0)), 5.0)))
    if np.all(stretched):
        return fp
    return ad.where(stretched, fp, 0.0)


def muscle_tendon_force(a, kin: MuscleKinematics, p: MuscleParams,
                        c: MuscleConstants = MuscleConstants()):
    """Tendon force ``(a f_v f_a F0m + F_PE) cos(phi)``."""
    vbar = ad.div(kin.v, p.v0) if kin.v is not None else 0.0
    active = ad.mul(ad.mul(ad.mul(a, force_velocity(vbar)), force_length_active(kin.lm, a, p, c)), p.F0m)
    return ad.mul(ad.add(active, force_passive(kin.lm, p)), ad.cos(kin.phi))
