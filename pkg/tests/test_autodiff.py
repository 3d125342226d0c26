import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from myodyn import autodiff as ad

rng = np.random.default_rng(1)

UNARY = {
    "exp": (ad.exp, np.exp, lambda x: np.exp(x), (-2, 2)),
    "log": (ad.log, np.log, lambda x: 1 / x, (0.2, 3)),
    "sin": (ad.sin, np.sin, np.cos, (-3, 3)),
    "cos": (ad.cos, np.cos, lambda x: -np.sin(x), (-3, 3)),
    "sqrt": (ad.sqrt, np.sqrt, lambda x: 0.5 / np.sqrt(x), (0.1, 4)),
    "arcsin": (ad.arcsin, np.arcsin, lambda x: 1 / np.sqrt(1 - x * x), (-0.9, 0.9)),
    "tanh": (ad.tanh, np.tanh, lambda x: 1 - np.tanh(x) ** 2, (-3, 3)),
    "sigmoid": (ad.sigmoid, lambda x: 1 / (1 + np.exp(-x)),
                lambda x: np.exp(-x) / (1 + np.exp(-x)) ** 2, (-4, 4)),
    "softplus": (ad.softplus, lambda x: np.log1p(np.exp(x)), lambda x: 1 / (1 + np.exp(-x)), (-4, 4)),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_reverse_matches_closed_form(name):
    f, f_np, df, (lo, hi) = UNARY[name]
    x = rng.uniform(lo, hi, size=6)
    tape = ad.Tape()
    xv = tape.var(x)
    y = f(xv)
    np.testing.assert_allclose(y.value, f_np(x), rtol=1e-13)
    g = ad.backward(ad.sum(y))[xv]
    np.testing.assert_allclose(g, df(x), rtol=1e-10)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_dual2_matches_five_point_fd(name):
    f, f_np, _, (lo, hi) = UNARY[name]
    x0 = 0.5 * (lo + hi) + 0.1
    # compose with a curved inner path x(t) = x0 + 0.3 t + 0.2 t^2 at t = 0
    d = f(ad.Dual2(np.array(x0), 0.3, 0.4))
    h = 1e-3
    g = lambda t: f_np(x0 + 0.3 * t + 0.2 * t * t)  # noqa: E731
    d1 = (-g(2 * h) + 8 * g(h) - 8 * g(-h) + g(-2 * h)) / (12 * h)
    d2 = (-g(2 * h) + 16 * g(h) - 30 * g(0) + 16 * g(-h) - g(-2 * h)) / (12 * h * h)
    assert d.d1 == pytest.approx(d1, abs=1e-8, rel=1e-7)
    assert d.d2 == pytest.approx(d2, abs=1e-5, rel=1e-4)


def test_binary_ops_and_broadcasting():
    a, b = rng.normal(size=(4, 3)), rng.uniform(0.5, 2, size=(3,))

    def f(tape, x):
        return ad.sum(ad.div(ad.mul(ad.add(x[0], x[1]), ad.sub(x[0], 2.0)), x[1]))

    rep = ad.grad_check(f, [a, b], tol=1e-7)
    assert rep.passed, rep.failures


def test_matmul_getitem_stack_where():
    W, x = rng.normal(size=(3, 2)), rng.normal(size=(5, 3))

    def f(tape, v):
        h = ad.tanh(ad.matmul(v[1], v[0]))
        s = ad.stack([ad.getitem(h, (slice(None), 0)), ad.getitem(h, (slice(None), 1))], axis=1)
        w = ad.where(np.asarray(ad.value(s)) > 0, s, ad.mul(s, 0.1))
        return ad.mean(ad.square(w))

    rep = ad.grad_check(f, [W, x], tol=1e-7)
    assert rep.passed, rep.failures


def test_power_and_arctan2():
    x, y = rng.uniform(0.5, 2, size=4), rng.normal(size=4)
    rep = ad.grad_check(lambda t, v: ad.sum(ad.add(ad.power(v[0], 3), ad.arctan2(v[1], v[0]))), [x, y],
                        tol=1e-7)
    assert rep.passed, rep.failures


def test_relu_subgradient_at_zero():
    tape = ad.Tape()
    x = tape.var(np.array([-1.0, 0.0, 2.0]))
    g = ad.backward(ad.sum(ad.relu(x)))[x]
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_unused_leaf_has_zero_gradient():
    tape = ad.Tape()
    a, b = tape.var(np.ones(3)), tape.var(np.ones(2))
    g = ad.backward(ad.sum(ad.mul(a, 2.0)))
    np.testing.assert_array_equal(g[b], np.zeros(2))
    np.testing.assert_array_equal(g[a], 2 * np.ones(3))


def test_backward_requires_scalar_var():
    tape = ad.Tape()
    a = tape.var(np.ones(3))
    with pytest.raises(ValueError):
        ad.backward(ad.mul(a, 2.0))
    with pytest.raises(TypeError):
        ad.backward(3.0)


def test_shared_subexpression_accumulates():
    tape = ad.Tape()
    x = tape.var(np.array(1.5))
    y = ad.mul(x, x)
    g = ad.backward(ad.add(y, ad.mul(y, x)))[x]  # x^2 + x^3
    assert g == pytest.approx(2 * 1.5 + 3 * 1.5 ** 2)


def test_grad_check_detects_wrong_gradient():
    def bad(tape, v):
        # forward value of x^2 but a deliberately wrong adjoint
        return ad._record("bad", v[0].value ** 2, (v[0],), (lambda g: g * 3.0 * v[0].value,))

    rep = ad.grad_check(lambda t, v: ad.sum(bad(t, v)), [np.array([1.0, 2.0])])
    assert not rep.passed
    assert rep.max_rel_error > 0.1


def test_grad_check_coords_subset():
    calls = []

    def f(tape, v):
        calls.append(1)
        return ad.sum(ad.square(v[0]))

    rep = ad.grad_check(f, [np.arange(10.0)], coords={0: np.array([2, 7])})
    assert rep.passed
    assert len(calls) == 1 + 2 * 2


def test_dual2_over_tape_matches_fd_in_parameters():
    # time derivatives on a tape, then reverse-mode through them
    t = np.linspace(0.0, 1.0, 5)

    def f(tape, v):
        td = ad.Dual2(t, 1.0, 0.0)
        y = ad.sin(ad.mul(td, v[0]))
        return ad.sum(ad.add(ad.square(y.d1), y.d2))

    rep = ad.grad_check(f, [np.array(1.3)], tol=1e-7)
    assert rep.passed, rep.failures


@settings(max_examples=25)
@given(a=st.floats(-2, 2), b=st.floats(0.5, 3), t0=st.floats(-1, 1))
def test_dual2_composite_against_closed_form(a, b, t0):
    # y = exp(a t) / (b + t^2)
    d = ad.div(ad.exp(ad.mul(a, ad.Dual2(np.array(t0), 1.0))), ad.add(b, ad.square(ad.Dual2(np.array(t0), 1.0))))
    u, du, ddu = np.exp(a * t0), a * np.exp(a * t0), a * a * np.exp(a * t0)
    v, dv, ddv = b + t0 * t0, 2 * t0, 2.0
    y1 = (du * v - u * dv) / v ** 2
    y2 = (ddu * v - u * ddv) / v ** 2 - 2 * dv * (du * v - u * dv) / v ** 3
    assert d.val == pytest.approx(u / v)
    assert d.d1 == pytest.approx(y1, rel=1e-10, abs=1e-12)
    assert d.d2 == pytest.approx(y2, rel=1e-9, abs=1e-10)


@settings(max_examples=25)
@given(x=st.lists(st.floats(-3, 3), min_size=2, max_size=6))
def test_sum_mean_linearity(x):
    x = np.array(x)
    tape = ad.Tape()
    v = tape.var(x)
    g = ad.backward(ad.mean(v))[v]
    np.testing.assert_allclose(g, np.full(len(x), 1 / len(x)))
