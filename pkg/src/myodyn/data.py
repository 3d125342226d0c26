"""Synthetic trials, sEMG envelope preprocessing and trial files.

A trial is stored as three files sharing a stem::

    <stem>.csv            t,e_FCR,e_FCU,e_ECRL,e_ECRB,e_ECU,q
    <stem>_forces.csv     t,F_FCR,F_FCU,F_ECRL,F_ECRB,F_ECU
    <stem>_manifest.json  true parameters, motion profile, joint constants

Column names follow the muscle names, so a two-muscle trial carries two
envelope columns.  Values are written with ``repr`` and round-trip exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .joint import JointModel, simulate
from .muscle import MuscleParams


class TrialFormatError(ValueError):
    pass


@dataclass
class TrialMatrix:
    t: np.ndarray
    e: np.ndarray  # (T, N) envelopes in [0, 1]
    q: np.ndarray
    names: list[str]
    forces: np.ndarray | None = None  # (T, N), N

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.e = np.atleast_2d(np.asarray(self.e, dtype=float))
        self.q = np.asarray(self.q, dtype=float)
        if self.e.shape != (len(self.t), len(self.names)) or self.q.shape != self.t.shape:
            raise ValueError("inconsistent trial shapes")
        if self.forces is not None:
            self.forces = np.asarray(self.forces, dtype=float)
            if self.forces.shape != self.e.shape:
                raise ValueError("force matrix must match envelope shape")

    def __len__(self):
        return len(self.t)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0

    @property
    def sample_rate(self) -> float:
        return 1.0 / self.dt

    def matrix(self) -> np.ndarray:
        """The ``T x (N + 2)`` layout: time, envelopes, angle."""
        return np.column_stack([self.t, self.e, self.q])

    def subset(self, idx) -> "TrialMatrix":
        return TrialMatrix(self.t[idx], self.e[idx], self.q[idx], list(self.names),
                           None if self.forces is None else self.forces[idx])


@dataclass
class MotionProfile:
    """Raised-sinusoid excitations ``base + amp * (0.5 - 0.5 cos(2 pi f t + phase))``.

    Flexors and extensors sit roughly half a cycle apart; small per-muscle
    phase offsets within each group make the envelope vector trace a loop,
    so rising and falling halves of a cycle are distinguishable.
    """

    speed: float = 0.5  # cycle frequency, Hz
    amplitude: list[float] = field(default_factory=lambda: [0.15] * 5)
    baseline: list[float] = field(default_factory=lambda: [0.05] * 5)
    phase: list[float] = field(default_factory=lambda: [0.0, 0.4, math.pi, math.pi + 0.3, math.pi - 0.3])
    duration: float = 8.0
    snr_db: float = math.inf
    q0: float = 0.0
    settle: float = 0.0  # simulated lead-in (s) discarded before recording starts

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.settle < 0:
            raise ValueError("settle must be nonnegative")
        amp, base = np.asarray(self.amplitude), np.asarray(self.baseline)
        if np.any(amp < 0) or np.any(amp > 1) or np.any(base < 0) or np.any(base + amp > 1):
            raise ValueError("excitations must stay within [0, 1]")

    def excitation(self, t):
        amp, base, ph = (np.asarray(x, dtype=float) for x in (self.amplitude, self.baseline, self.phase))
        t = np.asarray(t, dtype=float)
        return base + amp * (0.5 - 0.5 * np.cos(2 * np.pi * self.speed * t[..., None] + ph))


@dataclass
class PreprocessConfig:
    band: tuple[float, float] = (20.0, 450.0)
    lowpass: float = 6.0
    order: int = 4
    zero_phase: bool = True
    mvc: float | Sequence[float] = 1.0


def _filt(sos, x, zero_phase):
    return signal.sosfiltfilt(sos, x, axis=0) if zero_phase else signal.sosfilt(sos, x, axis=0)


def lowpass(x, fs, cutoff=6.0, order=4, zero_phase=True):
    if cutoff >= fs / 2:
        raise ValueError(f"low-pass corner {cutoff} Hz not below Nyquist {fs / 2} Hz")
    sos = signal.butter(order, cutoff, btype="low", fs=fs, output="sos")
    return _filt(sos, np.asarray(x, dtype=float), zero_phase)


def preprocess_semg(raw, fs: float, cfg: PreprocessConfig = PreprocessConfig()):
    """Band-pass, full-wave rectify, low-pass, MVC-normalize and clamp.

    ``raw`` is ``(T,)`` or ``(T, channels)`` sampled at ``fs`` Hz.
    """
    lo, hi = cfg.band
    if hi >= fs / 2 or cfg.lowpass >= fs / 2:
        raise ValueError(f"filter corners must lie below Nyquist ({fs / 2} Hz)")
    x = np.asarray(raw, dtype=float)
    sos = signal.butter(cfg.order, [lo, hi], btype="band", fs=fs, output="sos")
    x = np.abs(_filt(sos, x, cfg.zero_phase))
    x = lowpass(x, fs, cfg.lowpass, cfg.order, cfg.zero_phase)
    return np.clip(x / np.asarray(cfg.mvc, dtype=float), 0.0, 1.0)


def synthesize_trial(profile: MotionProfile, model: JointModel, true_params: Sequence[MuscleParams],
                     A: float, seed: int = 0, dt: float = 1e-3) -> tuple[TrialMatrix, dict]:
    """Simulate a trial and record envelopes, angle and true muscle forces.

    With ``profile.settle > 0`` the joint is simulated for that long before
    recording starts, so the trial opens on the periodic motion rather than
    the start-up transient.  Noise, when ``profile.snr_db`` is finite, is white Gaussian low-passed at
    6 Hz and scaled to the requested SNR per channel; the dynamics are always
    driven by the clean excitation.
    """
    lead = int(round(profile.settle / dt))
    traj = simulate(lambda t: profile.excitation(t - lead * dt), model, true_params, A, profile.q0, 0.0, dt,
                    profile.duration + lead * dt)
    if lead:
        traj = replace(traj, times=traj.times[lead:] - traj.times[lead],
                       **{k: getattr(traj, k)[lead:] for k in ("q", "qdot", "qddot", "excitations", "forces",
                                                               "torque")})
    env = traj.excitations.copy()
    if math.isfinite(profile.snr_db):
        rng = np.random.default_rng(seed)
        noise = lowpass(rng.standard_normal(env.shape), 1.0 / dt, 6.0)
        sig_rms = np.sqrt(np.mean(env ** 2, axis=0))
        noise *= (sig_rms / 10 ** (profile.snr_db / 20)) / np.sqrt(np.mean(noise ** 2, axis=0))
        env = np.clip(env + noise, 0.0, 1.0)
    trial = TrialMatrix(traj.times, env, traj.q, list(model.names), traj.forces)
    manifest = {
        "seed": seed,
        "dt": dt,
        "profile": asdict(profile),
        "A": A,
        "true_params": {g.name: asdict(p) for g, p in zip(model.muscles, true_params)},
        "joint": {k: getattr(model, k) for k in ("m", "L", "Ip", "C", "g")},
        "geometry": {g.name: {"arm_coeffs": list(g.arm_coeffs), "lmt_ref": g.lmt_ref} for g in model.muscles},
    }
    return trial, manifest


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def trial_paths(stem) -> tuple[Path, Path, Path]:
    stem = Path(stem)
    if stem.suffix == ".csv":
        stem = stem.with_suffix("")
    if stem.is_dir():
        stem = stem / "trial"
    return (stem.with_name(stem.name + ".csv"), stem.with_name(stem.name + "_forces.csv"),
            stem.with_name(stem.name + "_manifest.json"))


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_csv(path: Path, header: list[str], cols: np.ndarray):
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in cols]
    path.write_text("\n".join(lines) + "\n")


def save_trial(trial: TrialMatrix, stem, manifest: dict | None = None) -> tuple[Path, ...]:
    """Write the trial csv, the force sidecar (if forces are known) and the manifest."""
    p_trial, p_forces, p_manifest = trial_paths(stem)
    p_trial.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(p_trial, ["t"] + [f"e_{n}" for n in trial.names] + ["q"], trial.matrix())
    written = [p_trial]
    if trial.forces is not None:
        _write_csv(p_forces, ["t"] + [f"F_{n}" for n in trial.names], np.column_stack([trial.t, trial.forces]))
        written.append(p_forces)
    if manifest is not None:
        p_manifest.write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")
        written.append(p_manifest)
    return tuple(written)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _read_csv(path: Path, required_prefix: str, names: Sequence[str] | None, last: str | None):
    lines = path.read_text().splitlines()
    if not lines:
        raise TrialFormatError(f"{path}: empty file (header row is mandatory)")
    header = [h.strip() for h in lines[0].split(",")]
    expected = None
    if names is not None:
        expected = ["t"] + [f"{required_prefix}{n}" for n in names] + ([last] if last else [])
    else:
        if not header or header[0] != "t":
            raise TrialFormatError(f"{path}:1: missing column 't'")
        if last and header[-1] != last:
            raise TrialFormatError(f"{path}:1: missing column '{last}'")
    if expected is not None:
        missing = [h for h in expected if h not in header]
        if missing:
            raise TrialFormatError(f"{path}:1: missing column(s) {', '.join(repr(m) for m in missing)}")
        if header != expected:
            raise TrialFormatError(f"{path}:1: columns {header} do not match expected {expected}")
    for h in header[1:len(header) - (1 if last else 0)]:
        if not h.startswith(required_prefix):
            raise TrialFormatError(f"{path}:1: unexpected column {h!r}")
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise TrialFormatError(f"{path}:{i}: expected {len(header)} fields, got {len(cells)}")
        row = []
        for j, c in enumerate(cells, start=1):
            try:
                row.append(float(c))
            except ValueError:
                raise TrialFormatError(f"{path}:{i}:{j}: cannot parse {c.strip()!r} as a number") from None
        rows.append(row)
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return header, data


def _check_time(path, t):
    if len(t) < 2:
        return
    d = np.diff(t)
    bad = np.nonzero(d <= 0)[0]
    if bad.size:
        raise TrialFormatError(f"{path}: time not strictly increasing at row {bad[0] + 1}")
    dt = d[0]
    off = np.nonzero(np.abs(d - dt) > 1e-6 * dt)[0]
    if off.size:
        raise TrialFormatError(f"{path}: non-uniform time step at row {off[0] + 1} "
                               f"(dt={d[off[0]]:.6g} vs {dt:.6g})")


def load_trial(stem, names: Sequence[str] | None = None) -> TrialMatrix:
    """Read a trial (and its force sidecar when present).

    Row indices in errors count data rows from 0 (the header is line 1).
    """
    p_trial, p_forces, _ = trial_paths(stem)
    header, data = _read_csv(p_trial, "e_", names, "q")
    names = [h[2:] for h in header[1:-1]]
    t = data[:, 0]
    _check_time(p_trial, t)
    e = data[:, 1:-1]
    if np.any(e < 0) or np.any(e > 1):
        raise TrialFormatError(f"{p_trial}: envelopes must lie in [0, 1]")
    forces = None
    if p_forces.exists():
        _, fdata = _read_csv(p_forces, "F_", names, None)
        if fdata.shape[0] != len(t) or not np.array_equal(fdata[:, 0], t):
            raise TrialFormatError(f"{p_forces}: time column does not match {p_trial.name}")
        forces = fdata[:, 1:]
    return TrialMatrix(t, e, data[:, -1], names, forces)


def load_manifest(stem) -> dict:
    return json.loads(trial_paths(stem)[2].read_text())
