"""Accuracy metrics, comparison tables and plot-ready report files.

Report files written by :func:`emit_report` (all comma-separated, one header row):

=====================  ==================================================
``comparison.csv``     method, channel, rmse, r2  (r2 empty when N/A)
``rmse_bars.csv``      method, channel, rmse
``loss_trace.csv``     epoch, L_q, L_r1, L_r2, L_total, val_L_q
``param_trace.csv``    epoch, F0m_<muscle>..., l0m_<muscle>..., A...
``overlay.csv``        t, q, q_hat, F_<muscle>, F_hat_<muscle> ...
=====================  ==================================================
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import TrialMatrix
from .network import NetworkWeights, forward

ANGLE = "Angle"


def _pair(y, yhat):
    y, yhat = np.asarray(y, dtype=float).ravel(), np.asarray(yhat, dtype=float).ravel()
    if y.size == 0:
        raise ValueError("empty input")
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} vs {yhat.size}")
    return y, yhat


def rmse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.sqrt(np.mean((yhat - y) ** 2)))


def r_squared(y, yhat) -> float | None:
    """Coefficient of determination; ``None`` (N/A) for a constant ground truth."""
    y, yhat = _pair(y, yhat)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-300:
        return None
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


@dataclass
class ChannelMetrics:
    channel: str
    rmse: float
    r2: float | None

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("rmse must be nonnegative")
        if self.r2 is not None and self.r2 > 1 + 1e-12:
            raise ValueError("r2 cannot exceed 1")


@dataclass
class ComparisonTable:
    """Per-method rows of per-channel metrics (muscles, then ``Angle``)."""

    channels: list[str]
    rows: dict[str, list[ChannelMetrics]] = field(default_factory=dict)

    def add(self, method: str, metrics: Sequence[ChannelMetrics]):
        if [m.channel for m in metrics] != list(self.channels):
            raise ValueError(f"channels {[m.channel for m in metrics]} differ from {self.channels}")
        self.rows[method] = list(metrics)

    def get(self, method: str, channel: str) -> ChannelMetrics:
        return self.rows[method][self.channels.index(channel)]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "channel", "rmse", "r2"])
            for method, ms in self.rows.items():
                for m in ms:
                    w.writerow([method, m.channel, repr(m.rmse), "" if m.r2 is None else repr(m.r2)])

    @classmethod
    def from_csv(cls, path) -> "ComparisonTable":
        rows: dict[str, list[ChannelMetrics]] = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                r2 = None if rec["r2"] == "" else float(rec["r2"])
                rows.setdefault(rec["method"], []).append(ChannelMetrics(rec["channel"], float(rec["rmse"]), r2))
        channels = [m.channel for m in next(iter(rows.values()))] if rows else []
        table = cls(channels)
        for k, v in rows.items():
            table.add(k, v)
        return table

    def format(self, metric: str = "r2") -> str:
        """Fixed-width text table, methods by channels."""
        head = f"{'method':<14}" + "".join(f"{c:>10}" for c in self.channels)
        lines = [head]
        for method, ms in self.rows.items():
            cells = []
            for m in ms:
                v = getattr(m, metric)
                cells.append(f"{'N/A':>10}" if v is None else f"{v:>10.4f}")
            lines.append(f"{method:<14}" + "".join(cells))
        return "\n".join(lines)


def predict(weights: NetworkWeights, trial: TrialMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode (no dropout) angle and force predictions over a whole trial."""
    out = forward(weights, trial.t, trial.e, mode="eval")
    return np.asarray(out.q_hat), np.asarray(out.F_hat)


def channel_metrics(trial: TrialMatrix, q_hat, F_hat=None) -> list[ChannelMetrics]:
    """Metrics for every muscle force (when ground truth is known) and the angle."""
    out = []
    if trial.forces is not None and F_hat is not None:
        for j, n in enumerate(trial.names):
            out.append(ChannelMetrics(n, rmse(trial.forces[:, j], F_hat[:, j]),
                                      r_squared(trial.forces[:, j], F_hat[:, j])))
    out.append(ChannelMetrics(ANGLE, rmse(trial.q, q_hat), r_squared(trial.q, q_hat)))
    return out


def channels_of(trial: TrialMatrix) -> list[str]:
    return (list(trial.names) if trial.forces is not None else []) + [ANGLE]


def run_intrasession(weights: NetworkWeights, trial: TrialMatrix, method: str = "PINN",
                     table: ComparisonTable | None = None) -> ComparisonTable:
    """Score a trained network on a trial (typically recorded at another speed)."""
    q_hat, F_hat = predict(weights, trial)
    table = table if table is not None else ComparisonTable(channels_of(trial))
    table.add(method, channel_metrics(trial, q_hat, F_hat))
    return table


def score_external(trial: TrialMatrix, q_hat, F_hat=None, method: str = "external",
                   table: ComparisonTable | None = None) -> ComparisonTable:
    """Add predictions produced elsewhere (e.g. another baseline) to a table."""
    table = table if table is not None else ComparisonTable(channels_of(trial))
    table.add(method, channel_metrics(trial, np.asarray(q_hat), None if F_hat is None else np.asarray(F_hat)))
    return table


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

DEFAULT_THRESHOLDS = {"angle_r2": 0.96, "force_r2": 0.93}


def check_thresholds(table: ComparisonTable, thresholds: dict[str, float], method: str | None = None):
    """Compare metrics with floors (``*_r2``) and ceilings (``*_rmse``).

    Keys: ``angle_r2``, ``force_r2`` (applied to every muscle), ``angle_rmse``,
    ``force_rmse``.  Returns ``(passed, messages)``; N/A values fail.
    """
    method = method or next(iter(table.rows))
    msgs, ok = [], True
    for key, limit in thresholds.items():
        kind, metric = key.split("_", 1)
        if kind not in ("angle", "force") or metric not in ("r2", "rmse"):
            raise ValueError(f"unknown threshold {key!r}")
        chans = [ANGLE] if kind == "angle" else [c for c in table.channels if c != ANGLE]
        for c in chans:
            v = getattr(table.get(method, c), metric)
            good = v is not None and (v >= limit if metric == "r2" else v <= limit)
            ok &= good
            shown = "N/A" if v is None else f"{v:.4f}"
            rel = ">=" if metric == "r2" else "<="
            msgs.append(f"{'PASS' if good else 'FAIL'} {method} {c} {metric} {shown} (need {rel} {limit})")
    return ok, msgs


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------

def _write(path: Path, header: list[str], rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def emit_report(out_dir, table: ComparisonTable | None = None, report=None,
                trial: TrialMatrix | None = None, predictions=None) -> list[Path]:
    """Write the plot-ready report files that the given inputs allow.

    ``report`` is a :class:`~myodyn.training.TrainReport` (traces);
    ``predictions`` is ``(q_hat, F_hat)`` over ``trial`` (overlays).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    written = []
    if table is not None:
        p = out / "comparison.csv"
        table.to_csv(p)
        written.append(p)
        written.append(_write(out / "rmse_bars.csv", ["method", "channel", "rmse"],
                              [(k, m.channel, m.rmse) for k, ms in table.rows.items() for m in ms]))
    if report is not None:
        keys = ["L_q", "L_r1", "L_r2", "L_total", "val_L_q"]
        written.append(_write(out / "loss_trace.csv", ["epoch"] + keys,
                              [[r["epoch"]] + [r[k] for k in keys] for r in report.epochs]))
        names = list(report.names)
        n_A = len(np.atleast_1d(report.initial.get("A", [0.0]))) if report.initial else 1
        a_cols = ["A"] if n_A == 1 else [f"A_{n}" for n in names]
        header = ["epoch"] + [f"F0m_{n}" for n in names] + [f"l0m_{n}" for n in names] + a_cols
        rows = []
        for r in report.epochs:
            p = r["params"]
            rows.append([r["epoch"]] + list(np.ravel(p["F0m"])) + list(np.ravel(p["l0m"])) + list(np.ravel(p["A"])))
        written.append(_write(out / "param_trace.csv", header, rows))
    if trial is not None and predictions is not None:
        q_hat, F_hat = (np.asarray(x, dtype=float) for x in predictions)
        header = ["t", "q", "q_hat"]
        cols = [trial.t, trial.q, q_hat]
        for j, n in enumerate(trial.names):
            if trial.forces is not None:
                header.append(f"F_{n}")
                cols.append(trial.forces[:, j])
            header.append(f"F_hat_{n}")
            cols.append(F_hat[:, j])
        written.append(_write(out / "overlay.csv", header, np.column_stack(cols).tolist()))
    return written


def nan_to_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x
