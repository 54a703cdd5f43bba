import numpy as np
import pytest
from hypothesis import given, strategies as st

from vortexsheet.testfunctions import SPATIAL_KINDS, TestFunction


def _phi(kind, **kw):
    return TestFunction(kind, (0.3, -0.2), 0.7, time_kind="bump", t_start=-0.5, t_stop=0.8,
                        slope=(0.4, -1.0), offset=0.5, **kw)


@pytest.mark.parametrize("kind", SPATIAL_KINDS)
def test_gradient_matches_finite_differences(kind):
    phi = _phi(kind)
    rng = np.random.default_rng(1)
    x = np.array([0.3, -0.2]) + rng.uniform(-0.45, 0.45, size=(20, 2))
    h = 1e-6
    for e in np.eye(2):
        fd = (phi(x + h * e, 0.1) - phi(x - h * e, 0.1)) / (2 * h)
        assert np.allclose(phi.grad(x, 0.1) @ e, fd, atol=1e-7)
        fd2 = (phi.grad(x + h * e, 0.1) - phi.grad(x - h * e, 0.1)) / (2 * h)
        assert np.allclose(phi.hessian(x, 0.1) @ e, fd2, atol=1e-6)


@pytest.mark.parametrize("time_kind", ["bump", "plateau"])
def test_time_derivative(time_kind):
    phi = TestFunction("polynomial_bump", (0, 0), 1.0, time_kind=time_kind, t_start=-0.2,
                       t_stop=0.9, t_flat=0.3)
    t = np.linspace(0.01, 0.95, 40)
    h = 1e-6
    g1, _ = phi.time_profile(t + h)
    g0, _ = phi.time_profile(t - h)
    assert np.allclose(phi.time_profile(t)[1], (g1 - g0) / (2 * h), atol=1e-6)


def test_linear_core_is_affine_on_core():
    phi = TestFunction("linear_core", (0, 0), 1.0, time_kind="constant", slope=(2.0, -1.0),
                       offset=0.5, core=0.6)
    x = np.array([[0.1, 0.2], [-0.3, 0.4], [0.5, 0.0]])
    assert np.allclose(phi(x, 0.0), 0.5 + x @ np.array([2.0, -1.0]))
    assert np.allclose(phi.hessian(x, 0.0), 0.0)


def test_validation():
    with pytest.raises(ValueError):
        TestFunction("cubic", (0, 0), 1.0)
    with pytest.raises(ValueError):
        TestFunction("polynomial_bump", (0, 0), -1.0)
    with pytest.raises(ValueError):
        TestFunction("polynomial_bump", (0, 0), 1.0, time_kind="forever")


def test_constant_profile_has_unbounded_support():
    phi = TestFunction("polynomial_bump", (0, 0), 1.0, time_kind="constant")
    assert phi.support_end == np.inf


@given(st.sampled_from(SPATIAL_KINDS), st.floats(0.0, 2 * np.pi), st.floats(1.001, 3.0),
       st.floats(-1.0, 1.5))
def test_vanishes_outside_support(kind, angle, rho, t):
    phi = _phi(kind)
    x = np.array([0.3, -0.2]) + rho * 0.7 * np.array([np.cos(angle), np.sin(angle)])
    assert phi(x, t) == 0.0 and not np.any(phi.grad(x, t)) and phi.dt(x, t) == 0.0


@given(st.sampled_from(SPATIAL_KINDS), st.integers(0, 10**6))
def test_hessian_bound_dominates_samples(kind, seed):
    phi = _phi(kind)
    rng = np.random.default_rng(seed)
    r = 0.7 * np.sqrt(rng.uniform(size=200))
    a = rng.uniform(0, 2 * np.pi, size=200)
    x = np.array([0.3, -0.2]) + np.column_stack([r * np.cos(a), r * np.sin(a)])
    norms = np.linalg.norm(phi.hess_psi(x), ord=2, axis=(1, 2))
    assert norms.max() <= phi.hessian_bound()
