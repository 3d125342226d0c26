"""Fully connected surrogate with an angle head and a muscle-force head.

Layout: four ``linear -> activation -> dropout`` blocks, then two heads of the
form ``activation -> dropout -> linear``.  The angle head may swap its
activation for a smooth unit so that the predicted angle has a nonzero
second time-derivative even on a ReLU trunk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad

ACTIVATIONS = ("ReLU", "Tanh", "Sigmoid")


@dataclass
class NetworkConfig:
    input_dim: int = 6
    hidden_widths: tuple[int, ...] = (64, 64, 64, 64)
    dropout_rate: float = 0.3
    activation: str = "ReLU"
    n_muscles: int = 5
    smooth_angle_head: bool = True

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        if len(self.hidden_widths) != 4 or min(self.hidden_widths) <= 0:
            raise ValueError("need four positive hidden widths")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.input_dim != self.n_muscles + 1:
            raise ValueError("input_dim must equal n_muscles + 1 (time plus envelopes)")


@dataclass
class InputScaling:
    """Affine time normalization ``(t - t0) / duration`` and force output scale."""

    t0: float = 0.0
    duration: float = 1.0
    force_scale: np.ndarray = field(default_factory=lambda: np.ones(5))


@dataclass
class NetworkWeights:
    config: NetworkConfig
    arrays: dict[str, np.ndarray]
    scaling: InputScaling

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.config, {k: v.copy() for k, v in self.arrays.items()},
                              InputScaling(self.scaling.t0, self.scaling.duration,
                                           np.array(self.scaling.force_scale, dtype=float)))

    def on_tape(self, tape: ad.Tape) -> dict[str, ad.Var]:
        return {k: tape.var(v) for k, v in self.arrays.items()}

    @property
    def n_weights(self) -> int:
        return sum(v.size for v in self.arrays.values())


@dataclass
class NetworkOutput:
    q_hat: object
    F_hat: object
    qdot_hat: object = None
    qddot_hat: object = None


def layer_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    fan_in = config.input_dim
    for i, w in enumerate(config.hidden_widths):
        shapes[f"W{i}"] = (fan_in, w)
        shapes[f"b{i}"] = (w,)
        fan_in = w
    shapes["Wq"], shapes["bq"] = (fan_in, 1), (1,)
    shapes["WF"], shapes["bF"] = (fan_in, config.n_muscles), (config.n_muscles,)
    return shapes


def init(config: NetworkConfig, seed: int = 0, scaling: InputScaling | None = None) -> NetworkWeights:
    """Uniform fan-in initialization, ``|w| <= 1/sqrt(fan_in)``."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in layer_shapes(config).items():
        fan_in = shape[0] if name.startswith("W") else _fan_in_of_bias(config, name)
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    if scaling is None:
        scaling = InputScaling(force_scale=np.ones(config.n_muscles))
    return NetworkWeights(config, arrays, scaling)


def _fan_in_of_bias(config, name):
    key = name[1:]
    if key in ("q", "F"):
        return config.hidden_widths[-1]
    i = int(key)
    return config.input_dim if i == 0 else config.hidden_widths[i - 1]


def smooth_unit(x):
    """``x * tanh(softplus(x))``: ReLU-like but infinitely differentiable."""
    return ad.mul(x, ad.tanh(ad.softplus(x)))


def _activate(kind, x):
    if kind == "ReLU":
        return ad.relu(x)
    if kind == "Tanh":
        return ad.tanh(x)
    if kind == "Sigmoid":
        return ad.sigmoid(x)
    if kind == "smooth":
        return smooth_unit(x)
    raise ValueError(kind)


def dropout_masks(config: NetworkConfig, batch: int, rng: np.random.Generator | None,
                  train: bool) -> list[np.ndarray | None]:
    """One mask per dropout site (4 blocks + 2 heads); ``None`` means identity."""
    n_sites = 6
    if not train or config.dropout_rate == 0:
        return [None] * n_sites
    keep = 1.0 - config.dropout_rate
    widths = list(config.hidden_widths) + [config.hidden_widths[-1]] * 2
    return [(rng.random((batch, w)) < keep) / keep for w in widths]


def _apply(x, mask):
    return x if mask is None else ad.mul(x, mask)


def _run(w, config: NetworkConfig, t_in, e, masks):
    """Shared forward pass over plain arrays or tape variables.

    ``t_in`` is the normalized time column ``(B, 1)`` (possibly a Dual2);
    ``e`` is the envelope block ``(B, N)``.
    """
    W0 = w["W0"]
    h = ad.add(ad.add(ad.mul(t_in, W0[0:1, :]), ad.matmul(e, W0[1:, :])), w["b0"])
    h = _apply(_activate(config.activation, h), masks[0])
    for i in range(1, 4):
        h = ad.add(ad.matmul(h, w[f"W{i}"]), w[f"b{i}"])
        h = _apply(_activate(config.activation, h), masks[i])
    q_kind = "smooth" if config.smooth_angle_head else config.activation
    hq = _apply(_activate(q_kind, h), masks[4])
    q = ad.add(ad.matmul(hq, w["Wq"]), w["bq"])
    hF = h.val if isinstance(h, ad.Dual2) else h  # forces need no time derivatives
    hF = _apply(_activate(config.activation, hF), masks[5])
    F = ad.add(ad.matmul(hF, w["WF"]), w["bF"])
    return q, F


def _inputs(weights: NetworkWeights, t, e):
    t = np.asarray(t, dtype=float).reshape(-1, 1)
    e = np.atleast_2d(np.asarray(e, dtype=float))
    if np.any(e < -1e-9) or np.any(e > 1 + 1e-9):
        raise ValueError("envelopes must lie in [0, 1]")
    ts = (t - weights.scaling.t0) / weights.scaling.duration
    return ts, e


def forward(weights: NetworkWeights, t, e, mode: str = "eval", rng=None,
            tape: ad.Tape | None = None, leaves: dict | None = None, masks=None) -> NetworkOutput:
    """Predict angle ``(B,)`` and forces ``(B, N)``.

    With ``tape``/``leaves`` the pass is recorded for differentiation and the
    outputs are tape variables.
    """
    ts, e = _inputs(weights, t, e)
    if masks is None:
        masks = dropout_masks(weights.config, len(ts), rng, mode == "train")
    w = leaves if leaves is not None else weights.arrays
    q, F = _run(w, weights.config, ts, e, masks)
    F = ad.mul(F, weights.scaling.force_scale)
    return NetworkOutput(q_hat=ad.getitem(q, (slice(None), 0)), F_hat=F)


def forward_with_time_derivatives(weights: NetworkWeights, t, e, mode: str = "eval", rng=None,
                                  tape: ad.Tape | None = None, leaves: dict | None = None,
                                  masks=None, e_dot=None, e_ddot=None) -> NetworkOutput:
    """As :func:`forward`, plus first and second derivatives of the angle in seconds.

    The angle depends on time directly and through the envelopes.  When
    ``e_dot``/``e_ddot`` (per-second envelope derivatives) are given, the
    returned derivatives are total ones; otherwise envelopes are held fixed.
    """
    ts, e = _inputs(weights, t, e)
    if masks is None:
        masks = dropout_masks(weights.config, len(ts), rng, mode == "train")
    w = leaves if leaves is not None else weights.arrays
    t_dual = ad.Dual2(ts, 1.0 / weights.scaling.duration, 0.0)
    if e_dot is not None or e_ddot is not None:
        e = ad.Dual2(e, 0.0 if e_dot is None else np.atleast_2d(np.asarray(e_dot, dtype=float)),
                     0.0 if e_ddot is None else np.atleast_2d(np.asarray(e_ddot, dtype=float)))
    q, F = _run(w, weights.config, t_dual, e, masks)
    F = ad.mul(F, weights.scaling.force_scale)
    q = ad.getitem(q, (slice(None), 0))
    d1 = q.d1 if not ad._zero(q.d1) else np.zeros(len(ts))
    d2 = q.d2 if not ad._zero(q.d2) else np.zeros(len(ts))
    return NetworkOutput(q_hat=q.val, F_hat=F, qdot_hat=d1, qddot_hat=d2)


# ---------------------------------------------------------------------------
# checkpoint files
# ---------------------------------------------------------------------------
# Text format, one block per named array:
#
#   # myodyn checkpoint v1
#   meta <key> <json value>
#   array <name> <dim0> [<dim1> ...]
#   <row of float.hex values>
#   ...
#
# Arrays are written row-major; 1-D arrays occupy a single line.  float.hex
# keeps the round trip exact.

_HEADER = "# myodyn checkpoint v1"


def save_checkpoint(path, weights: NetworkWeights, extra_arrays: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None):
    import json

    lines = [_HEADER]
    meta = dict(meta or {})
    meta["network"] = {**asdict(weights.config), "hidden_widths": list(weights.config.hidden_widths)}
    meta["t0"] = weights.scaling.t0
    meta["duration"] = weights.scaling.duration
    for k, v in meta.items():
        lines.append(f"meta {k} {json.dumps(v)}")
    arrays = dict(weights.arrays)
    arrays["force_scale"] = np.asarray(weights.scaling.force_scale, dtype=float)
    for k, v in (extra_arrays or {}).items():
        arrays[k] = np.asarray(v, dtype=float)
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        lines.append("array " + name + " " + " ".join(str(d) for d in arr.shape))
        rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
        for row in rows:
            lines.append(" ".join(float(x).hex() for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> tuple[NetworkWeights, dict[str, np.ndarray], dict]:
    """Returns the network, any extra arrays and the metadata block."""
    import json

    text = Path(path).read_text().splitlines()
    if not text or text[0] != _HEADER:
        raise ValueError(f"{path}: not a myodyn checkpoint")
    meta, arrays = {}, {}
    i = 1
    while i < len(text):
        line = text[i]
        if line.startswith("meta "):
            _, key, val = line.split(" ", 2)
            meta[key] = json.loads(val)
            i += 1
        elif line.startswith("array "):
            parts = line.split()
            name, shape = parts[1], tuple(int(d) for d in parts[2:])
            n_rows = shape[0] if len(shape) > 1 else 1
            rows = [[float.fromhex(x) for x in text[i + 1 + r].split()] for r in range(n_rows)]
            arrays[name] = np.array(rows, dtype=float).reshape(shape)
            i += 1 + n_rows
        elif not line.strip():
            i += 1
        else:
            raise ValueError(f"{path}:{i + 1}: unexpected line {line[:40]!r}")
    cfg = NetworkConfig(**meta["network"])
    names = set(layer_shapes(cfg))
    weights = NetworkWeights(cfg, {k: arrays.pop(k) for k in list(arrays) if k in names},
                             InputScaling(meta["t0"], meta["duration"], arrays.pop("force_scale")))
    return weights, arrays, meta
