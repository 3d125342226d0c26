"""Toolkit configuration: ``key = value`` sections, validated strictly.

Sections::

    [joint]            m, L, Ip, C, g, q_min, q_max
    [muscle.<NAME>]    F0m, l0m, v0, lst, phi0, arm_coeffs, lmt_ref,
                       F0m_bound_frac, l0m_bound_abs   (one per muscle, in order)
    [activation]       A, A_min, A_max, per_muscle, trainable
    [network]          hidden_widths, dropout_rate, activation, smooth_angle_head
    [training]         lr, param_lr, epochs, batch_size, w1, w2, seed, val_split,
                       val_fraction, stride, force_physics, warmup_epochs,
                       physics_pass
    [data]             speed, duration, amplitude, baseline, phase, snr_db, q0,
                       settle, dt, true_F0m_scale, true_l0m_offset, true_A

Values are JSON literals (numbers, lists, ``true``/``false``); bare words are
taken as strings and ``inf`` as infinity.  ``lmt_ref = auto`` places each
fiber at its optimal length when ``q = 0``.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import MotionProfile
from .joint import JointModel, MuscleGeometry
from .muscle import (MUSCLE_NAMES, TABLE_A, TABLE_F0M, TABLE_L0M, TABLE_LST, TABLE_PHI0, TABLE_V0,
                     MuscleParams)
from .network import NetworkConfig
from .training import Physics, TrainableParams, TrainConfig


class ConfigError(ValueError):
    pass


# flexors shrink their arm when flexed, extensors when extended
DEFAULT_ARMS = {
    "FCR": [0.015, -0.008, -0.002],
    "FCU": [0.016, -0.008, -0.002],
    "ECRL": [-0.014, -0.008, 0.002],
    "ECRB": [-0.012, -0.008, 0.002],
    "ECU": [-0.016, -0.008, 0.002],
}


@dataclass
class JointConfig:
    m: float = 0.45
    L: float = 0.07
    Ip: float = 1e-4
    C: float = 0.05
    g: float = 9.81
    q_min: float = -math.pi / 2
    q_max: float = math.pi / 2


@dataclass
class MuscleConfig:
    name: str
    F0m: float
    l0m: float
    v0: float
    lst: float
    phi0: float
    arm_coeffs: list[float]
    lmt_ref: float | str = "auto"
    F0m_bound_frac: float = 0.5
    l0m_bound_abs: float = 0.001

    def params(self) -> MuscleParams:
        return MuscleParams(l0m=self.l0m, v0=self.v0, F0m=self.F0m, lst=self.lst, phi0=self.phi0)

    def geometry(self) -> MuscleGeometry:
        ref = self.lst + self.l0m * math.cos(self.phi0) if self.lmt_ref == "auto" else float(self.lmt_ref)
        return MuscleGeometry(self.name, list(self.arm_coeffs), ref)


@dataclass
class ActivationConfig:
    A: float = TABLE_A
    A_min: float = -3.0
    A_max: float = 0.01
    per_muscle: bool = False
    trainable: bool = True


@dataclass
class DataConfig:
    speed: float = 0.5
    duration: float = 8.0
    amplitude: list[float] = field(default_factory=lambda: [0.15] * 5)
    baseline: list[float] = field(default_factory=lambda: [0.05] * 5)
    phase: list[float] = field(default_factory=lambda: [0.0, 0.4, math.pi, math.pi + 0.3, math.pi - 0.3])
    snr_db: float = math.inf
    q0: float = 0.0
    settle: float = 2.0
    dt: float = 1e-3
    true_F0m_scale: list[float] = field(default_factory=lambda: [1.15, 0.9, 1.2, 0.85, 1.1])
    true_l0m_offset: list[float] = field(default_factory=lambda: [0.0005, -0.0004, 0.0006, -0.0005, 0.0003])
    true_A: float = -1.5


@dataclass
class ToolConfig:
    joint: JointConfig = field(default_factory=JointConfig)
    muscles: list[MuscleConfig] = field(default_factory=list)
    activation: ActivationConfig = field(default_factory=ActivationConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.muscles]

    def joint_model(self) -> JointModel:
        j = self.joint
        return JointModel(m=j.m, L=j.L, Ip=j.Ip, C=j.C, g=j.g,
                          muscles=[m.geometry() for m in self.muscles], q_range=(j.q_min, j.q_max))

    def initial_params(self) -> list[MuscleParams]:
        return [m.params() for m in self.muscles]

    def true_params(self) -> list[MuscleParams]:
        d = self.data
        return [MuscleParams(l0m=m.l0m + off, v0=m.v0, F0m=m.F0m * s, lst=m.lst, phi0=m.phi0)
                for m, s, off in zip(self.muscles, d.true_F0m_scale, d.true_l0m_offset)]

    def validate(self):
        n = len(self.muscles)
        if n == 0:
            raise ConfigError("at least one [muscle.*] section is required")
        if len(set(self.names)) != n:
            raise ConfigError("muscle names must be unique")
        for m in self.muscles:
            try:
                m.params()
            except ValueError as exc:
                raise ConfigError(f"[muscle.{m.name}] {exc}") from None
            if not 0 < m.F0m_bound_frac < 1 or m.l0m_bound_abs <= 0 or m.l0m_bound_abs >= m.l0m:
                raise ConfigError(f"[muscle.{m.name}] invalid parameter bounds")
        if self.network.n_muscles != n or self.network.input_dim != n + 1:
            raise ConfigError(f"[network] sized for {self.network.n_muscles} muscles, config has {n}")
        a = self.activation
        if not -3.0 <= a.A_min < a.A_max <= 0.01 or not a.A_min <= a.A <= a.A_max:
            raise ConfigError("[activation] need -3 <= A_min <= A <= A_max <= 0.01")
        t = self.training
        if t.lr <= 0 or (t.param_lr is not None and t.param_lr <= 0):
            raise ConfigError("[training] learning rates must be positive")
        if t.epochs < 1 or t.batch_size < 1 or t.stride < 1:
            raise ConfigError("[training] epochs, batch_size and stride must be >= 1")
        if t.val_split not in ("tail", "interleaved", "none"):
            raise ConfigError("[training] val_split must be tail, interleaved or none")
        if not 0 <= t.val_fraction < 1:
            raise ConfigError("[training] val_fraction must lie in [0, 1)")
        if t.warmup_epochs < 0:
            raise ConfigError("[training] warmup_epochs must be >= 0")
        if t.physics_pass not in ("same", "mean"):
            raise ConfigError("[training] physics_pass must be same or mean")
        d = self.data
        for key in ("amplitude", "baseline", "phase", "true_F0m_scale", "true_l0m_offset"):
            if len(getattr(d, key)) != n:
                raise ConfigError(f"[data] {key} needs {n} entries")
        for m, s, off in zip(self.muscles, d.true_F0m_scale, d.true_l0m_offset):
            if abs(s - 1) >= m.F0m_bound_frac or abs(off) >= m.l0m_bound_abs:
                raise ConfigError(f"[data] true parameters of {m.name} fall outside the trainer's bounds")
        if not a.A_min <= d.true_A <= a.A_max:
            raise ConfigError("[data] true_A outside activation bounds")
        try:
            self.joint_model().validate(self.true_params())
            self.joint_model().validate(self.initial_params())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def profile(self, speed: float | None = None) -> MotionProfile:
        d = self.data
        return MotionProfile(speed=d.speed if speed is None else speed, amplitude=list(d.amplitude),
                             baseline=list(d.baseline), phase=list(d.phase), duration=d.duration,
                             snr_db=d.snr_db, q0=d.q0, settle=d.settle)

    def physics(self) -> Physics:
        return Physics.from_model(self.joint_model(), self.initial_params())

    def trainable_params(self) -> TrainableParams:
        a = self.activation
        return TrainableParams.from_initial(
            [m.F0m for m in self.muscles], [m.l0m for m in self.muscles], a.A,
            F0m_frac=[m.F0m_bound_frac for m in self.muscles], l0m_abs=[m.l0m_bound_abs for m in self.muscles],
            A_bounds=(a.A_min, a.A_max), per_muscle_A=a.per_muscle, train_A=a.trainable)

    def with_muscles(self, names) -> "ToolConfig":
        """Copy restricted to a subset of muscles (per-muscle lists follow)."""
        idx = [self.names.index(n) for n in names]
        cfg = dataclasses.replace(self)
        cfg.muscles = [dataclasses.replace(self.muscles[i]) for i in idx]
        d = dataclasses.replace(self.data)
        for key in ("amplitude", "baseline", "phase", "true_F0m_scale", "true_l0m_offset"):
            setattr(d, key, [getattr(self.data, key)[i] for i in idx])
        cfg.data = d
        cfg.network = dataclasses.replace(self.network, n_muscles=len(idx), input_dim=len(idx) + 1)
        return cfg


def default_config() -> ToolConfig:
    muscles = [MuscleConfig(name=n, F0m=TABLE_F0M[i], l0m=TABLE_L0M[i], v0=TABLE_V0[i], lst=TABLE_LST[i],
                            phi0=TABLE_PHI0[i], arm_coeffs=list(DEFAULT_ARMS[n]))
               for i, n in enumerate(MUSCLE_NAMES)]
    return ToolConfig(muscles=muscles).validate()


def two_muscle_config() -> ToolConfig:
    """FCR/ECRL subject for parameter recovery.

    The two excitations are offset by pi - 1 rather than pi: a pure antiphase
    pair traces a line segment in envelope space, so the angle would not be a
    function of the envelopes.
    """
    cfg = default_config().with_muscles(["FCR", "ECRL"])
    cfg.data.phase = [0.0, math.pi - 1.0]
    return cfg.validate()


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def _encode(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(v))
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_encode(x) for x in v) + "]"
    if v is None:
        return "none"
    return str(v)


def _decode(text: str):
    s = text.strip()
    low = s.lower()
    if low in ("inf", "+inf"):
        return math.inf
    if low == "-inf":
        return -math.inf
    if low in ("none", "null"):
        return None
    try:
        return json.loads(s.replace("inf", "Infinity") if s.startswith("[") else s)
    except json.JSONDecodeError:
        return s


def _coerce(cls, name: str, raw: str, where: str):
    ftypes = {f.name: f.type for f in dataclasses.fields(cls)}
    if name not in ftypes or name == "name":
        raise ConfigError(f"[{where}] unknown key {name!r}")
    v = _decode(raw)
    tp = str(ftypes[name])
    try:
        if tp.startswith("list") or tp.startswith("tuple"):
            if not isinstance(v, list):
                raise TypeError
            return [float(x) for x in v] if "float" in tp else [int(x) for x in v]
        if tp == "bool":
            if not isinstance(v, bool):
                raise TypeError
            return v
        if tp == "int":
            if isinstance(v, bool) or float(v) != int(v):
                raise TypeError
            return int(v)
        if tp.startswith("float | None"):
            return None if v is None else float(v)
        if tp.startswith("float | str"):
            return v if v == "auto" else float(v)
        if tp == "float":
            if isinstance(v, bool):
                raise TypeError
            return float(v)
        if tp == "str":
            return str(v)
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"[{where}] {name} = {raw.strip()!r} is not a valid {tp}")


_SECTIONS = {"joint": JointConfig, "activation": ActivationConfig, "network": NetworkConfig,
             "training": TrainConfig, "data": DataConfig}


def parse_config(text: str) -> ToolConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = default_config()
    parts: dict[str, Any] = {}
    muscles = []
    for sec in parser.sections():
        if sec.startswith("muscle."):
            name = sec[len("muscle."):]
            kw = {k: _coerce(MuscleConfig, k, v, sec) for k, v in parser[sec].items()}
            required = {"F0m", "l0m", "v0", "lst", "phi0", "arm_coeffs"}
            if name in base.names:
                template = dataclasses.asdict(base.muscles[base.names.index(name)])
                template.update(kw)
                kw = template
            elif not required <= set(kw):
                raise ConfigError(f"[{sec}] missing keys {sorted(required - set(kw))}")
            kw["name"] = name
            try:
                muscles.append(MuscleConfig(**kw))
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {exc}") from None
        elif sec in _SECTIONS:
            cls = _SECTIONS[sec]
            kw = {k: _coerce(cls, k, v, sec) for k, v in parser[sec].items()}
            if sec == "network" and ({"n_muscles", "input_dim"} & set(kw)):
                raise ConfigError("[network] n_muscles/input_dim follow the muscle sections")
            try:
                parts[sec] = dataclasses.replace(getattr(base, sec), **kw)
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {exc}") from None
        else:
            raise ConfigError(f"unknown section [{sec}]")
    cfg = ToolConfig(**{**{s: getattr(base, s) for s in _SECTIONS}, **parts},
                     muscles=muscles or base.muscles)
    if muscles and len(muscles) != len(base.muscles) and "data" not in parts:
        raise ConfigError("a non-default muscle set needs a [data] section sized to it")
    n = len(cfg.muscles)
    try:
        cfg.network = dataclasses.replace(cfg.network, n_muscles=n, input_dim=n + 1)
    except ValueError as exc:
        raise ConfigError(f"[network] {exc}") from None
    return cfg.validate()


def load_config(path) -> ToolConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: ToolConfig) -> str:
    out = io.StringIO()

    def section(title, obj, skip=()):
        out.write(f"[{title}]\n")
        for f in dataclasses.fields(obj):
            if f.name in skip:
                continue
            out.write(f"{f.name} = {_encode(getattr(obj, f.name))}\n")
        out.write("\n")

    section("joint", cfg.joint)
    for m in cfg.muscles:
        section(f"muscle.{m.name}", m, skip=("name",))
    section("activation", cfg.activation)
    section("network", cfg.network, skip=("n_muscles", "input_dim"))
    section("training", cfg.training)
    section("data", cfg.data)
    return out.getvalue()


def as_dict(cfg: ToolConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["network"]["hidden_widths"] = list(cfg.network.hidden_widths)
    return json.loads(json.dumps(d, default=lambda o: np.asarray(o).tolist()))
