import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neutrabench.autodiff import finite_difference_grad, make_value_and_grad, value_and_grad
from neutrabench.models import NsiModel, reference_model
from neutrabench.models.nsi import LOWER, UPPER


def test_square():
    rec = value_and_grad(lambda t: t[0] ** 2, [3.0])
    assert rec.value == 9.0
    np.testing.assert_array_equal(rec.gradient, [6.0])
    assert not rec.divergent


def test_product_rule():
    rec = value_and_grad(lambda t: jnp.exp(t[0]) * t[1], [0.0, 2.0])
    assert rec.value == 2.0
    np.testing.assert_allclose(rec.gradient, [2.0, 1.0], rtol=1e-15)


def test_non_finite_is_flagged():
    rec = value_and_grad(lambda t: jnp.log(t[0]), [-1.0])
    assert rec.divergent
    assert np.isnan(rec.value)


def test_matrix_input_rejected():
    with pytest.raises(ValueError):
        value_and_grad(lambda t: t.sum(), np.zeros((2, 2)))


def test_fd_identity_coordinate():
    np.testing.assert_allclose(finite_difference_grad(lambda t: t[1], np.array([0.3, -2.0, 5.0])), [0, 1, 0], atol=1e-10)


def test_fd_quadratic_second_order():
    a = np.array([[2.0, 0.5], [0.5, 1.0]])
    f = lambda t: 0.5 * t @ a @ t + t.sum()
    x = np.array([0.7, -1.3])
    err = np.abs(finite_difference_grad(f, x, 1e-4) - (a @ x + 1))
    assert err.max() < 1e-8


def _rel_err(g, fd):
    return np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1.0))


def test_gaussian_fit_gradients_50_points():
    model = reference_model()
    vg = make_value_and_grad(model.log_joint)
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(50):
        theta = rng.normal(0, 1.5, 6)
        _, g = vg(jnp.asarray(theta))
        fd = finite_difference_grad(lambda t: float(model.log_joint(jnp.asarray(t))), theta, 1e-5)
        worst = max(worst, _rel_err(g, fd))
    assert worst < 1e-5


def test_nsi_gradients_interior_points():
    model = NsiModel()
    vg = make_value_and_grad(model.log_joint)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(50):
        theta = rng.uniform(0.9 * LOWER, 0.9 * UPPER)
        _, g = vg(jnp.asarray(theta))
        fd = finite_difference_grad(lambda t: float(model.log_joint(jnp.asarray(t))), theta, 1e-5)
        worst = max(worst, _rel_err(g, fd))
    assert worst < 1e-5


_PRIMS = [jnp.sin, jnp.exp, jnp.tanh, lambda x: x**3, lambda x: jnp.log1p(x**2)]


@settings(max_examples=60, deadline=None)
@given(
    i=st.integers(0, len(_PRIMS) - 1),
    j=st.integers(0, len(_PRIMS) - 1),
    a=st.floats(-3, 3),
    b=st.floats(-3, 3),
    x=st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3),
)
def test_linearity(i, j, a, b, x):
    f = lambda t: jnp.sum(_PRIMS[i](t))
    g = lambda t: jnp.sum(_PRIMS[j](t) * t)
    combo = value_and_grad(lambda t: a * f(t) + b * g(t), x).gradient
    expected = a * value_and_grad(f, x).gradient + b * value_and_grad(g, x).gradient
    np.testing.assert_allclose(combo, expected, rtol=1e-12, atol=1e-12)


@given(x=st.lists(st.floats(-100, 100), min_size=1, max_size=6))
@settings(deadline=None)
def test_constant_has_zero_gradient(x):
    rec = value_and_grad(lambda t: 4.2 + 0.0 * jnp.sum(t), x)
    np.testing.assert_array_equal(rec.gradient, np.zeros(len(x)))


def test_replay_is_bitwise_identical():
    model = reference_model()
    theta = np.linspace(-1, 1, 6)
    r1 = value_and_grad(model.log_joint, theta)
    r2 = value_and_grad(model.log_joint, theta)
    assert r1.value == r2.value
    assert r1.gradient.tobytes() == r2.gradient.tobytes()
