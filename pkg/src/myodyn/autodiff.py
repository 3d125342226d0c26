"""Reverse-mode tape with second-order forward tangents.

Two cooperating pieces:

* :class:`Tape` / :class:`Var` -- a Wengert list over numpy arrays.  Every
  operation on a :class:`Var` appends a node holding the forward value and a
  vector-Jacobian product; :func:`backward` sweeps the list once in reverse.
* :class:`Dual2` -- a truncated Taylor triple ``(val, d1, d2)`` carrying first
  and second derivatives with respect to a single scalar (time).  Components may
  themselves be :class:`Var`, so expressions in ``q``, ``dq/dt`` and
  ``d2q/dt2`` stay differentiable with respect to the network weights.

All module-level functions (``exp``, ``sin``, ``where`` ...) accept plain
floats/arrays, :class:`Var` and :class:`Dual2` alike, so model code is written
once and runs on any of them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a model function."""


class Tape:
    """Linear record of operations.  Parents always precede children."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.kinds: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.vjps: list[Callable | None] = []

    def __len__(self):
        return len(self.values)

    def var(self, value) -> "Var":
        """Register a leaf variable."""
        return self._push(np.array(value, dtype=float), "leaf", (), None)

    def _push(self, value, kind, parents, vjp) -> "Var":
        self.values.append(value)
        self.kinds.append(kind)
        self.parents.append(parents)
        self.vjps.append(vjp)
        return Var(self, len(self.values) - 1)


class Var:
    __slots__ = ("tape", "index")
    __array_priority__ = 100.0

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __hash__(self):
        return hash((id(self.tape), self.index))

    def __eq__(self, other):
        return isinstance(other, Var) and other.tape is self.tape and other.index == self.index

    def __repr__(self):
        return f"Var(#{self.index}, {self.tape.kinds[self.index]}, shape={self.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def value(x):
    """Forward value of ``x`` as a plain float/array (val part for Dual2)."""
    if isinstance(x, Dual2):
        return value(x.val)
    if isinstance(x, Var):
        return x.value
    return x


def _tape_of(args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _record(kind, out, args, local_vjps):
    """Append a node if any argument is a Var.

    ``local_vjps[i](g)`` maps the output adjoint to the adjoint of ``args[i]``
    (before unbroadcasting).  Non-Var arguments are skipped.
    """
    tape = _tape_of(args)
    if tape is None:
        return out
    out = np.asarray(out, dtype=float)
    idx, fns, shapes = [], [], []
    for a, fn in zip(args, local_vjps):
        if isinstance(a, Var):
            idx.append(a.index)
            fns.append(fn)
            shapes.append(a.value.shape)

    def vjp(g):
        return tuple(_unbroadcast(fn(g), s) for fn, s in zip(fns, shapes))

    return tape._push(out, kind, tuple(idx), vjp)


# ---------------------------------------------------------------------------
# elementary operations on Var / plain values
# ---------------------------------------------------------------------------

def _v_add(a, b):
    return _record("add", value(a) + value(b), (a, b), (lambda g: g, lambda g: g))


def _v_sub(a, b):
    return _record("sub", value(a) - value(b), (a, b), (lambda g: g, lambda g: -g))


def _v_mul(a, b):
    va, vb = value(a), value(b)
    return _record("mul", va * vb, (a, b), (lambda g: g * vb, lambda g: g * va))


def _v_div(a, b):
    va, vb = value(a), value(b)
    out = va / vb
    return _record("div", out, (a, b), (lambda g: g / vb, lambda g: -g * out / vb))


def _v_neg(a):
    return _record("neg", -value(a), (a,), (lambda g: -g,))


def _v_exp(a):
    out = np.exp(value(a))
    return _record("exp", out, (a,), (lambda g: g * out,))


def _v_log(a):
    va = value(a)
    return _record("log", np.log(va), (a,), (lambda g: g / va,))


def _v_sin(a):
    va = value(a)
    return _record("sin", np.sin(va), (a,), (lambda g: g * np.cos(va),))


def _v_cos(a):
    va = value(a)
    return _record("cos", np.cos(va), (a,), (lambda g: -g * np.sin(va),))


def _v_sqrt(a):
    out = np.sqrt(value(a))
    return _record("sqrt", out, (a,), (lambda g: 0.5 * g / out,))


def _v_arcsin(a):
    va = value(a)
    return _record("arcsin", np.arcsin(va), (a,), (lambda g: g / np.sqrt(1.0 - va * va),))


def _v_arctan2(y, x):
    vy, vx = value(y), value(x)
    r2 = vx * vx + vy * vy
    return _record("arctan2", np.arctan2(vy, vx), (y, x),
                   (lambda g: g * vx / r2, lambda g: -g * vy / r2))


def _v_tanh(a):
    out = np.tanh(value(a))
    return _record("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def _v_sigmoid(a):
    out = _np_sigmoid(value(a))
    return _record("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def _v_softplus(a):
    va = value(a)
    return _record("softplus", np.logaddexp(0.0, va), (a,), (lambda g: g * _np_sigmoid(va),))


def _v_power(a, p):
    va = value(a)
    if isinstance(p, (Var, Dual2)):
        raise TypeError("only constant exponents are supported")
    return _record("power", va ** p, (a,), (lambda g: g * p * va ** (p - 1),))


def _v_matmul(a, b):
    va, vb = value(a), value(b)

    def ga(g):
        return g @ np.swapaxes(vb, -1, -2) if np.ndim(vb) > 1 else np.multiply.outer(g, vb)

    def gb(g):
        if np.ndim(va) == 1:
            return np.multiply.outer(va, g)
        return np.swapaxes(va, -1, -2) @ g

    return _record("matmul", va @ vb, (a, b), (ga, gb))


def _v_sum(a, axis=None):
    va = np.asarray(value(a))

    def back(g):
        if axis is None:
            return np.broadcast_to(g, va.shape)
        return np.broadcast_to(np.expand_dims(g, axis), va.shape)

    return _record("sum", va.sum(axis=axis), (a,), (back,))


def _v_getitem(a, idx):
    va = np.asarray(value(a))

    def back(g):
        out = np.zeros_like(va)
        np.add.at(out, idx, g)
        return out

    return _record("getitem", va[idx], (a,), (back,))


def _v_transpose(a):
    return _record("transpose", np.swapaxes(value(a), -1, -2), (a,), (lambda g: np.swapaxes(g, -1, -2),))


def _v_where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, value(a), value(b))
    return _record("where", out, (a, b), (lambda g: np.where(cond, g, 0.0),
                                          lambda g: np.where(cond, 0.0, g)))


def _v_stack(items, axis):
    vals = [np.asarray(value(x), dtype=float) for x in items]
    out = np.stack(vals, axis=axis)

    def make(i):
        return lambda g: np.take(g, i, axis=axis)

    return _record("stack", out, tuple(items), tuple(make(i) for i in range(len(items))))


def _np_sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


# ---------------------------------------------------------------------------
# Dual2: second-order Taylor triples in one scalar variable
# ---------------------------------------------------------------------------

def _zero(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and x == 0


def _add0(a, b):
    if _zero(a):
        return b
    if _zero(b):
        return a
    return _v_add(a, b)


def _mul0(a, b):
    if _zero(a) or _zero(b):
        return 0.0
    return _v_mul(a, b)


class Dual2:
    """``val + d1*eps + d2*eps**2/2`` truncated after second order.

    Zero tangents are stored as the Python float ``0.0`` and short-circuit the
    arithmetic, which keeps the common "only ``t`` is seeded" case cheap.
    """

    __slots__ = ("val", "d1", "d2")
    __array_priority__ = 200.0

    def __init__(self, val, d1=0.0, d2=0.0):
        self.val = val
        self.d1 = d1
        self.d2 = d2

    def __repr__(self):
        return f"Dual2({value(self.val)!r}, {value(self.d1)!r}, {value(self.d2)!r})"

    @property
    def shape(self):
        return np.shape(value(self.val))

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _lift(x) -> Dual2:
    return x if isinstance(x, Dual2) else Dual2(x)


def _chain(x: Dual2, f, f1, f2) -> Dual2:
    """Apply a scalar function given its value and first two derivatives at x.val."""
    d1 = _mul0(f1, x.d1)
    d2 = _add0(_mul0(f2, _mul0(x.d1, x.d1)), _mul0(f1, x.d2))
    return Dual2(f, d1, d2)


def _d_mul(a: Dual2, b: Dual2) -> Dual2:
    val = _v_mul(a.val, b.val)
    d1 = _add0(_mul0(a.d1, b.val), _mul0(a.val, b.d1))
    d2 = _add0(_add0(_mul0(a.d2, b.val), _mul0(2.0, _mul0(a.d1, b.d1))), _mul0(a.val, b.d2))
    return Dual2(val, d1, d2)


def _mm0(a, b):
    if _zero(a) or _zero(b):
        return 0.0
    return _v_matmul(a, b)


def _d_matmul(a: Dual2, b: Dual2) -> Dual2:
    val = _v_matmul(a.val, b.val)
    d1 = _add0(_mm0(a.d1, b.val), _mm0(a.val, b.d1))
    d2 = _add0(_add0(_mm0(a.d2, b.val), _mul0(2.0, _mm0(a.d1, b.d1))), _mm0(a.val, b.d2))
    return Dual2(val, d1, d2)


def _d_reciprocal(b: Dual2) -> Dual2:
    inv = _v_div(1.0, b.val)
    inv2 = _v_mul(inv, inv)
    return _chain(b, inv, _v_neg(inv2), _v_mul(2.0, _v_mul(inv2, inv)))


# ---------------------------------------------------------------------------
# public generic API
# ---------------------------------------------------------------------------

def _any_dual(*args):
    return any(isinstance(a, Dual2) for a in args)


def add(a, b):
    if _any_dual(a, b):
        a, b = _lift(a), _lift(b)
        return Dual2(_v_add(a.val, b.val), _add0(a.d1, b.d1), _add0(a.d2, b.d2))
    return _v_add(a, b)


def sub(a, b):
    return add(a, neg(b))


def neg(a):
    if isinstance(a, Dual2):
        return Dual2(_v_neg(a.val), 0.0 if _zero(a.d1) else _v_neg(a.d1),
                     0.0 if _zero(a.d2) else _v_neg(a.d2))
    return _v_neg(a)


def mul(a, b):
    if _any_dual(a, b):
        return _d_mul(_lift(a), _lift(b))
    return _v_mul(a, b)


def div(a, b):
    if isinstance(b, Dual2):
        return _d_mul(_lift(a), _d_reciprocal(b))
    if isinstance(a, Dual2):
        inv = _v_div(1.0, b)
        return _d_mul(a, Dual2(inv))
    return _v_div(a, b)


def matmul(a, b):
    if _any_dual(a, b):
        return _d_matmul(_lift(a), _lift(b))
    return _v_matmul(a, b)


def exp(x):
    if isinstance(x, Dual2):
        y = _v_exp(x.val)
        return _chain(x, y, y, y)
    return _v_exp(x)


def log(x):
    if isinstance(x, Dual2):
        inv = _v_div(1.0, x.val)
        return _chain(x, _v_log(x.val), inv, _v_neg(_v_mul(inv, inv)))
    return _v_log(x)


def sin(x):
    if isinstance(x, Dual2):
        s, c = _v_sin(x.val), _v_cos(x.val)
        return _chain(x, s, c, _v_neg(s))
    return _v_sin(x)


def cos(x):
    if isinstance(x, Dual2):
        s, c = _v_sin(x.val), _v_cos(x.val)
        return _chain(x, c, _v_neg(s), _v_neg(c))
    return _v_cos(x)


def sqrt(x):
    if isinstance(x, Dual2):
        y = _v_sqrt(x.val)
        f1 = _v_div(0.5, y)
        return _chain(x, y, f1, _v_neg(_v_div(f1, _v_mul(2.0, x.val))))
    return _v_sqrt(x)


def arcsin(x):
    if isinstance(x, Dual2):
        one_m = _v_sub(1.0, _v_mul(x.val, x.val))
        f1 = _v_div(1.0, _v_sqrt(one_m))
        f2 = _v_div(_v_mul(x.val, f1), one_m)
        return _chain(x, _v_arcsin(x.val), f1, f2)
    return _v_arcsin(x)


def arctan2(y, x):
    if _any_dual(y, x):
        y, x = _lift(y), _lift(x)
        r2 = _v_add(_v_mul(x.val, x.val), _v_mul(y.val, y.val))
        cross1 = _add0(_mul0(x.val, y.d1), _mul0(-1.0, _mul0(y.val, x.d1)))
        d1 = 0.0 if _zero(cross1) else _v_div(cross1, r2)
        cross2 = _add0(_mul0(x.val, y.d2), _mul0(-1.0, _mul0(y.val, x.d2)))
        dr2 = _mul0(2.0, _add0(_mul0(x.val, x.d1), _mul0(y.val, y.d1)))
        num = _add0(_mul0(cross2, r2), _mul0(-1.0, _mul0(cross1, dr2)))
        d2 = 0.0 if _zero(num) else _v_div(num, _v_mul(r2, r2))
        return Dual2(_v_arctan2(y.val, x.val), d1, d2)
    return _v_arctan2(y, x)


def tanh(x):
    if isinstance(x, Dual2):
        y = _v_tanh(x.val)
        f1 = _v_sub(1.0, _v_mul(y, y))
        return _chain(x, y, f1, _v_mul(-2.0, _v_mul(y, f1)))
    return _v_tanh(x)


def sigmoid(x):
    if isinstance(x, Dual2):
        s = _v_sigmoid(x.val)
        f1 = _v_mul(s, _v_sub(1.0, s))
        return _chain(x, s, f1, _v_mul(f1, _v_sub(1.0, _v_mul(2.0, s))))
    return _v_sigmoid(x)


def softplus(x):
    if isinstance(x, Dual2):
        s = _v_sigmoid(x.val)
        return _chain(x, _v_softplus(x.val), s, _v_mul(s, _v_sub(1.0, s)))
    return _v_softplus(x)


def relu(x):
    """ReLU via piecewise select; ties at 0 take the zero branch."""
    v = value(x)
    mask = np.asarray(v > 0, dtype=float)
    if isinstance(x, Dual2):
        return Dual2(_v_mul(x.val, mask), _mul0(x.d1, mask), _mul0(x.d2, mask))
    return _v_mul(x, mask)


def power(x, p):
    if isinstance(x, Dual2):
        f1 = _v_mul(p, _v_power(x.val, p - 1))
        f2 = _v_mul(p * (p - 1), _v_power(x.val, p - 2)) if p != 1 else 0.0
        return _chain(x, _v_power(x.val, p), f1, f2)
    return _v_power(x, p)


def square(x):
    return mul(x, x)


def where(cond, a, b):
    """Piecewise select on forward values; derivatives follow the taken branch."""
    if _any_dual(a, b):
        a, b = _lift(a), _lift(b)

        def w(x, y):
            if _zero(x) and _zero(y):
                return 0.0
            return _v_where(cond, x, y)

        return Dual2(w(a.val, b.val), w(a.d1, b.d1), w(a.d2, b.d2))
    return _v_where(cond, a, b)


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    if isinstance(x, Dual2):
        s = lambda c: 0.0 if _zero(c) else _v_sum(c, axis)  # noqa: E731
        return Dual2(s(x.val), s(x.d1), s(x.d2))
    return _v_sum(x, axis)


def mean(x, axis=None):
    n = np.size(value(x)) if axis is None else np.shape(value(x))[axis]
    return div(sum(x, axis), float(n))


def getitem(x, idx):
    if isinstance(x, Dual2):
        g = lambda c: 0.0 if _zero(c) else _v_getitem(c, idx)  # noqa: E731
        return Dual2(g(x.val), g(x.d1), g(x.d2))
    return _v_getitem(x, idx)


def transpose(x):
    return _v_transpose(x)


def stack(items: Sequence, axis=0):
    if _any_dual(*items):
        items = [_lift(i) for i in items]
        parts = []
        for comp in ("val", "d1", "d2"):
            cs = [getattr(i, comp) for i in items]
            if all(_zero(c) for c in cs):
                parts.append(0.0)
            else:
                shape = np.shape(value(items[0].val))
                cs = [np.zeros(shape) if _zero(c) else c for c in cs]
                parts.append(_v_stack(cs, axis))
        return Dual2(*parts)
    return _v_stack(items, axis)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------

class Gradients:
    """Adjoints of leaf variables; unreachable leaves read as zeros."""

    def __init__(self, tape: Tape, adjoints: dict[int, np.ndarray]):
        self._tape = tape
        self._adj = adjoints

    def __getitem__(self, var: Var) -> np.ndarray:
        if var.tape is not self._tape:
            raise ValueError("variable belongs to a different tape")
        g = self._adj.get(var.index)
        if g is None:
            return np.zeros_like(var.value)
        return g

    def __contains__(self, var):
        return isinstance(var, Var) and var.tape is self._tape


def backward(loss: Var) -> Gradients:
    """Reverse sweep from a scalar ``loss``; returns adjoints of all leaves."""
    if not isinstance(loss, Var):
        raise TypeError("loss must be a Var")
    if loss.value.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
    tape = loss.tape
    adj: list = [None] * (loss.index + 1)
    adj[loss.index] = np.ones_like(loss.value)
    leaves = {}
    for i in range(loss.index, -1, -1):
        g = adj[i]
        if g is None:
            continue
        vjp = tape.vjps[i]
        if vjp is None:
            leaves[i] = g
            continue
        for p, gp in zip(tape.parents[i], vjp(g)):
            adj[p] = gp if adj[p] is None else adj[p] + gp
    return Gradients(tape, leaves)


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    errors: dict[str, float] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.max_rel_error < self.tol


def grad_check(f: Callable[[Tape, list[Var]], Var], point: Sequence, h: float = 1e-6,
               tol: float = 1e-4, names: Sequence[str] | None = None,
               coords: dict[int, np.ndarray] | None = None, floor: float = 1e-8) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f(tape, leaves)`` must build a scalar Var from leaves created on ``tape``.
    ``coords`` optionally restricts checking to flat indices per argument.
    Relative error is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    point = [np.array(p, dtype=float) for p in point]
    names = list(names) if names is not None else [f"arg{i}" for i in range(len(point))]

    def evaluate(vals):
        tape = Tape()
        leaves = [tape.var(v) for v in vals]
        return tape, leaves, f(tape, leaves)

    _, leaves, loss = evaluate(point)
    grads = backward(loss)
    report = GradCheckReport(max_rel_error=0.0, tol=tol)
    for k, (p, leaf) in enumerate(zip(point, leaves)):
        g = grads[leaf].ravel()
        idxs = coords.get(k, range(p.size)) if coords is not None else range(p.size)
        worst = 0.0
        for j in idxs:
            plus = [q.copy() for q in point]
            minus = [q.copy() for q in point]
            plus[k].flat[j] += h
            minus[k].flat[j] -= h
            fp = float(evaluate(plus)[2].value)
            fm = float(evaluate(minus)[2].value)
            fd = (fp - fm) / (2 * h)
            err = abs(g[j] - fd) / max(abs(g[j]), abs(fd), floor)
            if not np.isfinite(err):
                report.failures.append(f"{names[k]}[{j}]: non-finite")
                continue
            worst = max(worst, err)
            if err >= tol:
                report.failures.append(f"{names[k]}[{j}]: rel err {err:.3e} (ad={g[j]:.6e}, fd={fd:.6e})")
        report.errors[names[k]] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    return report
