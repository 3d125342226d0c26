"""Physics-informed training of the surrogate with parameter identification.

The objective is ``L_q + w1 * L_r1 + w2 * L_r2``:

* ``L_q``: mean squared angle error;
* ``L_r1``: mean squared equation-of-motion residual of the predicted
  kinematics, in units of ``m g L``;
* ``L_r2``: mean squared gap between the force head and the Hill model
  evaluated at the predicted kinematics, per muscle in units of that muscle's
  ``F0m`` bound midpoint.

``F0m``, ``l0m`` and the shape factor ``A`` are optimized through a sigmoid
reparameterization so they never leave their bounds.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError
from .data import TrialMatrix
from .joint import GeometryStack, JointModel, muscle_forces
from .muscle import A_MAX, A_MIN, MuscleConstants, MuscleParams
from .network import (InputScaling, NetworkConfig, NetworkWeights, dropout_masks, forward,
                      forward_with_time_derivatives, init)


class TrainingError(RuntimeError):
    pass


def _logit(p):
    return np.log(p) - np.log1p(-p)


@dataclass
class TrainableParams:
    """Bounded physiological parameters ``lo + (hi - lo) * sigmoid(raw)``."""

    raw: dict[str, np.ndarray]
    lo: dict[str, np.ndarray]
    hi: dict[str, np.ndarray]
    trainable: dict[str, bool] = field(default_factory=dict)

    KEYS = ("F0m", "l0m", "A")

    @classmethod
    def from_initial(cls, F0m, l0m, A, F0m_frac=0.5, l0m_abs=0.001, A_bounds=(A_MIN, A_MAX),
                     per_muscle_A: bool = False, train_A: bool = True, margin: float = 1e-3):
        """Start at the initial guess; values sitting on a bound start ``margin`` inside it."""
        F0m, l0m = np.atleast_1d(np.asarray(F0m, dtype=float)), np.atleast_1d(np.asarray(l0m, dtype=float))
        n = len(F0m)
        F0m_frac = np.broadcast_to(np.asarray(F0m_frac, dtype=float), (n,))
        l0m_abs = np.broadcast_to(np.asarray(l0m_abs, dtype=float), (n,))
        A0 = np.full(n if per_muscle_A else 1, float(np.mean(A)) if np.ndim(A) else float(A))
        if per_muscle_A and np.ndim(A):
            A0 = np.asarray(A, dtype=float).copy()
        lo = {"F0m": F0m * (1 - F0m_frac), "l0m": l0m - l0m_abs, "A": np.full_like(A0, A_bounds[0])}
        hi = {"F0m": F0m * (1 + F0m_frac), "l0m": l0m + l0m_abs, "A": np.full_like(A0, A_bounds[1])}
        init_vals = {"F0m": F0m, "l0m": l0m, "A": A0}
        raw = {}
        for k in cls.KEYS:
            frac = np.clip((init_vals[k] - lo[k]) / (hi[k] - lo[k]), margin, 1 - margin)
            raw[k] = _logit(frac)
        return cls(raw, lo, hi, {"F0m": True, "l0m": True, "A": train_A})

    def copy(self) -> "TrainableParams":
        return TrainableParams({k: v.copy() for k, v in self.raw.items()}, self.lo, self.hi, dict(self.trainable))

    def mapped(self, raw=None) -> dict:
        """Bounded values; ``raw`` may hold tape variables."""
        raw = self.raw if raw is None else raw
        return {k: ad.add(self.lo[k], ad.mul(self.hi[k] - self.lo[k], ad.sigmoid(raw[k]))) for k in self.KEYS}

    def values(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=float) for k, v in self.mapped().items()}

    @property
    def midpoint(self) -> dict[str, np.ndarray]:
        return {k: 0.5 * (self.lo[k] + self.hi[k]) for k in self.KEYS}


@dataclass
class Physics:
    """Everything the residuals need besides the trainable parameters."""

    model: JointModel
    geometry: GeometryStack
    v0: np.ndarray
    lst: np.ndarray
    phi0: np.ndarray
    constants: MuscleConstants = MuscleConstants()
    vbar_floor: float | None = -0.999

    @classmethod
    def from_model(cls, model: JointModel, params: Sequence[MuscleParams], **kw):
        return cls(model, model.stacked(), np.array([p.v0 for p in params], dtype=float),
                   np.array([p.lst for p in params], dtype=float),
                   np.array([p.phi0 for p in params], dtype=float), **kw)

    @property
    def tau_scale(self) -> float:
        s = self.model.gravity_torque
        return s if s > 0 else 1.0

    def params(self, mapped: dict) -> MuscleParams:
        return MuscleParams(l0m=mapped["l0m"], v0=self.v0, F0m=mapped["F0m"], lst=self.lst, phi0=self.phi0)


@dataclass
class LossBreakdown:
    L_q: object
    L_r1: object
    L_r2: object
    L_total: object

    def values(self) -> dict[str, float]:
        return {k: float(np.asarray(ad.value(getattr(self, k)))) for k in ("L_q", "L_r1", "L_r2", "L_total")}


# ---------------------------------------------------------------------------
# loss terms
# ---------------------------------------------------------------------------

def loss_q(q_hat, q):
    """Mean squared angle error."""
    qv = np.asarray(q, dtype=float)
    if np.shape(ad.value(q_hat)) != qv.shape:
        raise ValueError(f"length mismatch: {np.shape(ad.value(q_hat))} vs {qv.shape}")
    d = ad.sub(q_hat, qv)
    return ad.mean(ad.mul(d, d))


def dynamics_residual(q, qdot, qddot, torque, model: JointModel, tau_scale: float | None = None):
    """Pointwise ``(I q'' + C q' + m g L sin q - tau) / tau_scale``."""
    if tau_scale is None:
        tau_scale = model.gravity_torque if model.gravity_torque > 0 else 1.0
    lhs = ad.add(ad.add(ad.mul(model.inertia, qddot), ad.mul(model.C, qdot)),
                 ad.mul(model.gravity_torque, ad.sin(q)))
    return ad.div(ad.sub(lhs, torque), tau_scale)


def hill_forces(e, q, qdot, physics: Physics, mapped: dict):
    """Hill-model forces ``(B, N)`` and moment arms at the given kinematics."""
    qc = ad.getitem(q, (slice(None), None))
    qdc = ad.getitem(qdot, (slice(None), None))
    return muscle_forces(e, qc, qdc, physics.geometry, physics.params(mapped), mapped["A"],
                         physics.constants, check=False, vbar_floor=physics.vbar_floor)


def residual_dynamics(q, qdot, qddot, forces, arms, model: JointModel, tau_scale: float | None = None):
    """Mean squared dynamics residual, given forces and moment arms ``(B, N)``."""
    tau = ad.sum(ad.mul(forces, arms), axis=1)
    rho = dynamics_residual(q, qdot, qddot, tau, model, tau_scale)
    return ad.mean(ad.mul(rho, rho))


def residual_force(F_hat, F_model, scale):
    """Mean squared force-head gap, per muscle in units of ``scale``."""
    d = ad.div(ad.sub(F_hat, F_model), scale)
    return ad.mean(ad.mul(d, d))


def batch_loss(weights: NetworkWeights, tp: TrainableParams, physics: Physics | None, batch: dict,
               masks, w1: float, w2: float, wl: dict | None = None, rl: dict | None = None,
               physics_pass: str = "same") -> LossBreakdown:
    """Loss on one minibatch; ``physics=None`` gives the plain angle-fit baseline.

    With ``physics_pass="mean"`` the angle loss sees the dropout masks while
    the residuals are taken on the unmasked network.
    """
    if physics is None or physics_pass == "mean":
        out = forward(weights, batch["t"], batch["e"], leaves=wl, masks=masks)
        lq = loss_q(out.q_hat, batch["q"])
        if physics is None:
            return LossBreakdown(lq, 0.0, 0.0, lq)
        masks = [None] * len(masks)
    out = forward_with_time_derivatives(weights, batch["t"], batch["e"], leaves=wl, masks=masks,
                                        e_dot=batch["e_dot"], e_ddot=batch["e_ddot"])
    if physics_pass == "same":
        lq = loss_q(out.q_hat, batch["q"])
    elif physics_pass != "mean":
        raise ValueError(f"physics_pass must be 'same' or 'mean', got {physics_pass!r}")
    mapped = tp.mapped(rl)
    F_model, r = hill_forces(batch["e"], out.q_hat, out.qdot_hat, physics, mapped)
    lr1 = residual_dynamics(out.q_hat, out.qdot_hat, out.qddot_hat, F_model, r, physics.model, physics.tau_scale)
    lr2 = residual_force(out.F_hat, F_model, tp.midpoint["F0m"])
    total = ad.add(ad.add(lq, ad.mul(w1, lr1)), ad.mul(w2, lr2))
    return LossBreakdown(lq, lr1, lr2, total)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def adam_init(params: dict) -> AdamState:
    return AdamState({k: np.zeros_like(v) for k, v in params.items()},
                     {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place Adam update with bias correction.  ``lr`` may be a per-key dict."""
    state.step += 1
    c1 = 1 - beta1 ** state.step
    c2 = 1 - beta2 ** state.step
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {params[k].shape}")
        m = state.m[k] = beta1 * state.m[k] + (1 - beta1) * g
        v = state.v[k] = beta2 * state.v[k] + (1 - beta2) * g * g
        step = lr[k] if isinstance(lr, dict) else lr
        params[k] -= step * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# ---------------------------------------------------------------------------
# data handling
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-4
    param_lr: float | None = None
    epochs: int = 1000
    batch_size: int = 1
    w1: float = 1.0
    w2: float = 1.0
    seed: int = 0
    val_split: str = "tail"  # tail | interleaved | none
    val_fraction: float = 0.2
    stride: int = 1
    force_physics: bool = False  # run the physics path even when w1 = w2 = 0
    warmup_epochs: int = 0  # angle-only epochs before the physics terms switch on
    physics_pass: str = "mean"  # "same": residuals on the dropout-masked pass; "mean": on the unmasked net

    @property
    def baseline(self) -> bool:
        return self.w1 == 0 and self.w2 == 0 and not self.force_physics


def envelope_derivatives(trial: TrialMatrix):
    """Per-second first and second derivatives of the envelopes (central differences)."""
    if len(trial) < 3:
        return np.zeros_like(trial.e), np.zeros_like(trial.e)
    ed = np.gradient(trial.e, trial.t, axis=0)
    return ed, np.gradient(ed, trial.t, axis=0)


def pool_samples(trials: Sequence[TrialMatrix], stride: int = 1) -> dict[str, np.ndarray]:
    """Stack (subsampled) samples of all trials; ``trial`` and ``pos`` index their origin."""
    cols = {k: [] for k in ("t", "e", "q", "e_dot", "e_ddot", "trial", "pos")}
    for i, tr in enumerate(trials):
        ed, edd = envelope_derivatives(tr)
        idx = np.arange(0, len(tr), stride)
        for k, v in (("t", tr.t), ("e", tr.e), ("q", tr.q), ("e_dot", ed), ("e_ddot", edd)):
            cols[k].append(v[idx])
        cols["trial"].append(np.full(len(idx), i))
        cols["pos"].append(idx / max(len(tr) - 1, 1))
    return {k: np.concatenate(v) for k, v in cols.items()}


def split_indices(samples: dict, how: str = "tail", fraction: float = 0.2):
    """Training and validation index arrays."""
    n = len(samples["t"])
    all_idx = np.arange(n)
    if how == "none" or fraction == 0:
        return all_idx, np.array([], dtype=int)
    if how == "tail":
        val = samples["pos"] >= 1 - fraction
    elif how == "interleaved":
        k = max(int(round(1 / fraction)), 2)
        val = (all_idx % k) == k - 1
    else:
        raise ValueError(f"unknown validation split {how!r}")
    return all_idx[~val], all_idx[val]


def take(samples: dict, idx) -> dict:
    return {k: v[idx] for k, v in samples.items()}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def identify_report(estimates: dict[str, Sequence[float]], initials: dict[str, Sequence[float]],
                    names: Sequence[str]) -> list[dict]:
    """Rows ``(muscle, parameter, estimate, initial, variation %)``; variation is
    ``None`` (N/A) when the initial value is zero."""
    rows = []
    for key in estimates:
        est, ini = np.atleast_1d(estimates[key]), np.atleast_1d(initials[key])
        labels = list(names) if len(est) == len(names) else ["shared"] * len(est)
        for n, e, i in zip(labels, est, ini):
            var = None if i == 0 else 100.0 * float(e) / float(i)
            rows.append({"muscle": n, "parameter": key, "estimate": float(e), "initial": float(i),
                         "variation_pct": var})
    return rows


@dataclass
class TrainReport:
    mode: str
    names: list[str]
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_L_q: float = math.inf
    identified: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    variation: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)

    def trace(self, key: str) -> np.ndarray:
        return np.array([r[key] for r in self.epochs])

    def param_trace(self, key: str) -> np.ndarray:
        return np.array([r["params"][key] for r in self.epochs])

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, default=_json_default)

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "TrainReport":
        return cls(**json.loads(Path(path).read_text()))


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------

def _finite_or_abort(parts: LossBreakdown, epoch, sample_idx):
    for k, v in parts.values().items():
        if not np.isfinite(v):
            raise TrainingError(f"non-finite {k} at epoch {epoch}, samples {list(map(int, sample_idx))[:8]}")


def evaluate_angle_loss(weights: NetworkWeights, samples: dict) -> float:
    if len(samples["t"]) == 0:
        return math.nan
    out = forward(weights, samples["t"], samples["e"])
    return float(np.mean((out.q_hat - samples["q"]) ** 2))


def default_scaling(trials: Sequence[TrialMatrix], force_scale) -> InputScaling:
    t0 = min(float(tr.t[0]) for tr in trials)
    t1 = max(float(tr.t[-1]) for tr in trials)
    return InputScaling(t0=t0, duration=max(t1 - t0, 1e-12), force_scale=np.asarray(force_scale, dtype=float))


def train(trials: Sequence[TrialMatrix], physics: Physics | None, tp: TrainableParams,
          net_config: NetworkConfig, config: TrainConfig, weights: NetworkWeights | None = None,
          log=None) -> tuple[NetworkWeights, TrainableParams, TrainReport]:
    """Minimize the PINN objective; returns the best state by validation ``L_q``.

    Each epoch shuffles the training samples and sweeps them in minibatches
    of ``batch_size``; network weights and raw parameters share one Adam
    state.  With ``w1 = w2 = 0`` (and ``force_physics`` off) the physics
    terms are never built and the run is the plain angle-fit baseline.
    """
    if not trials:
        raise ValueError("at least one trial is required")
    names = list(trials[0].names)
    if any(list(tr.names) != names for tr in trials):
        raise ValueError("all trials must share the muscle set")
    if physics is not None and len(physics.v0) != len(names):
        raise ValueError("physics model and trials disagree on the number of muscles")
    t_start = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    if weights is None:
        weights = init(net_config, seed=config.seed,
                       scaling=default_scaling(trials, tp.midpoint["F0m"]))
    weights = weights.copy()
    tp = tp.copy()
    use_physics = physics if not config.baseline else None

    samples = pool_samples(trials, config.stride)
    tr_idx, va_idx = split_indices(samples, config.val_split, config.val_fraction)
    train_set, val_set = take(samples, tr_idx), take(samples, va_idx)
    n_train = len(tr_idx)
    if n_train == 0:
        raise ValueError("no training samples after the validation split")

    raw_keys = [k for k in tp.KEYS if tp.trainable.get(k, True)] if use_physics is not None else []
    opt_params = dict(weights.arrays)
    opt_params.update({"raw_" + k: tp.raw[k] for k in raw_keys})
    state = adam_init(opt_params)
    plr = config.param_lr if config.param_lr is not None else config.lr
    lr = {k: (plr if k.startswith("raw_") else config.lr) for k in opt_params}

    report = TrainReport(mode="baseline" if use_physics is None else "pinn", names=names,
                         initial=tp.values(), bounds={"lo": tp.lo, "hi": tp.hi},
                         config=asdict(config))
    best = (weights.copy(), tp.copy())

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        sums = np.zeros(4)
        n_batches = 0
        for s in range(0, n_train, config.batch_size):
            idx = order[s:s + config.batch_size]
            batch = take(train_set, idx)
            masks = dropout_masks(net_config, len(idx), rng, train=True)
            tape = ad.Tape()
            wl = weights.on_tape(tape)
            rl = {k: (tape.var(tp.raw[k]) if k in raw_keys else tp.raw[k]) for k in tp.KEYS}
            phys = use_physics if epoch > config.warmup_epochs else None
            try:
                parts = batch_loss(weights, tp, phys, batch, masks, config.w1, config.w2, wl, rl,
                                   config.physics_pass)
            except DomainError as exc:
                raise TrainingError(f"epoch {epoch}, samples {list(map(int, tr_idx[idx]))[:8]}: {exc}") from exc
            _finite_or_abort(parts, epoch, tr_idx[idx])
            grads = ad.backward(parts.L_total)
            g = {k: grads[v] for k, v in wl.items()}
            g.update({"raw_" + k: grads[rl[k]] for k in raw_keys})
            for k, v in g.items():
                if not np.all(np.isfinite(v)):
                    raise TrainingError(f"non-finite gradient of {k} at epoch {epoch}, "
                                        f"samples {list(map(int, tr_idx[idx]))[:8]}")
            adam_step(opt_params, g, state, lr)
            sums += list(parts.values().values())
            n_batches += 1
        means = sums / n_batches
        val_lq = evaluate_angle_loss(weights, val_set) if len(va_idx) else means[0]
        vals = tp.values()
        rec = {"epoch": epoch, "L_q": means[0], "L_r1": means[1], "L_r2": means[2], "L_total": means[3],
               "val_L_q": val_lq, "params": vals}
        report.epochs.append(rec)
        # identification only starts after warm-up, so the best state is taken from there on
        tracking = epoch > config.warmup_epochs or config.warmup_epochs >= config.epochs
        if tracking and (val_lq < report.best_val_L_q or report.best_epoch < 0):
            report.best_val_L_q, report.best_epoch = val_lq, epoch
            best = (weights.copy(), tp.copy())
        if log is not None:
            log(rec)

    weights, tp = best
    report.identified = tp.values()
    report.variation = identify_report({k: report.identified[k] for k in ("F0m", "l0m", "A")},
                                       {k: report.initial[k] for k in ("F0m", "l0m", "A")}, names)
    report.wall_clock = time.perf_counter() - t_start
    return weights, tp, report


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

def loss_grad_check(weights: NetworkWeights, tp: TrainableParams, physics: Physics, samples: dict,
                    w1: float = 1.0, w2: float = 1.0, weight_fraction: float = 0.01, seed: int = 0,
                    h: float = 1e-5, tol: float = 1e-4, terms=("L_q", "L_r1", "L_r2", "L_total")):
    """Finite-difference check of each loss term against reverse mode.

    Every raw physiological parameter is checked, plus a random
    ``weight_fraction`` of the network weights (at least one entry per
    array).  Returns ``{term: GradCheckReport}``.
    """
    rng = np.random.default_rng(seed)
    wkeys = list(weights.arrays)
    point = [weights.arrays[k] for k in wkeys] + [tp.raw[k] for k in tp.KEYS]
    names = wkeys + ["raw_" + k for k in tp.KEYS]
    coords = {}
    for i, k in enumerate(wkeys):
        size = weights.arrays[k].size
        n = max(1, int(round(weight_fraction * size)))
        coords[i] = np.sort(rng.choice(size, size=n, replace=False))
    masks = [None] * 6
    reports = {}
    for term in terms:
        def f(tape, leaves, term=term):
            wl = dict(zip(wkeys, leaves[:len(wkeys)]))
            rl = dict(zip(tp.KEYS, leaves[len(wkeys):]))
            parts = batch_loss(weights, tp, physics, samples, masks, w1, w2, wl, rl, "same")
            return getattr(parts, term)
        reports[term] = ad.grad_check(f, point, h=h, tol=tol, names=names, coords=coords)
    return reports
