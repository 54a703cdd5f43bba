import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vortexsheet.exceptions import SingularityError
from vortexsheet.kernels import (QuadratureSpec, SheetWarning, biot_savart_kernel, h_phi,
                                 maximal_operator, pv_velocity, truncated_velocity,
                                 velocity_off_sheet)
from vortexsheet.oracles import OracleSpec, flat_uniform_state, perturbed_circle
from vortexsheet.state import SheetState
from vortexsheet.testfunctions import TestFunction

from conftest import circle, flat_open


def test_kernel_examples():
    assert np.allclose(biot_savart_kernel([1.0, 0.0]), [0.0, 1 / (2 * np.pi)])
    assert np.allclose(biot_savart_kernel([0.0, 2.0]), [-1 / (4 * np.pi), 0.0])
    with pytest.raises(SingularityError):
        biot_savart_kernel([0.0, 0.0])


@given(st.floats(1e-100, 1e3), st.floats(0, 2 * np.pi))
def test_kernel_antisymmetric_exactly(r, ang):
    x = r * np.array([np.cos(ang), np.sin(ang)])
    assert np.array_equal(biot_savart_kernel(-x), -biot_savart_kernel(x))


@given(st.floats(0.2, 5.0), st.floats(0, 2 * np.pi))
def test_kernel_discretely_divergence_free(r, ang):
    x = r * np.array([np.cos(ang), np.sin(ang)])
    h = 1e-3
    div = sum((biot_savart_kernel(x + h * e)[i] - biot_savart_kernel(x - h * e)[i]) / (2 * h)
              for i, e in enumerate(np.eye(2)))
    assert abs(div) <= 10 * h**2 / r**4


def _phi():
    return TestFunction("gaussian_bump_truncated", (0.1, 0.0), 1.0, time_kind="constant")


def test_h_phi_linear_vanishes():
    phi = TestFunction("linear_core", (0, 0), 2.0, time_kind="constant", slope=(1, 2), core=0.5)
    rng = np.random.default_rng(0)
    x, y = rng.uniform(-0.6, 0.6, (2, 100, 2))
    assert np.allclose(h_phi(x, y, 0.0, phi), 0.0, atol=1e-15)


def test_h_phi_diagonal_is_marked():
    assert np.isnan(h_phi([0.1, 0.1], [0.1, 0.1], 0.0, _phi()))


def test_h_phi_symmetric_and_bounded():
    phi = _phi()
    rng = np.random.default_rng(2)
    r = np.sqrt(rng.uniform(size=(2, 10**4)))
    a = rng.uniform(0, 2 * np.pi, size=(2, 10**4))
    pts = np.array(phi.center) + np.stack([r * np.cos(a), r * np.sin(a)], axis=-1)
    x, y = pts
    h = h_phi(x, y, 0.0, phi)
    assert np.allclose(h, h_phi(y, x, 0.0, phi), rtol=0, atol=1e-15)
    assert np.abs(h).max() <= phi.hessian_bound() / (4 * np.pi)


def test_quadrature_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        QuadratureSpec(scheme="simpson")
    with pytest.raises(ValueError):
        QuadratureSpec(scheme="blob", delta=0)
    q = QuadratureSpec(scheme="blob", delta=0.1)
    assert QuadratureSpec.from_dict(q.to_dict()) == q


def test_auto_scheme_choice(pm128):
    assert QuadratureSpec().resolve(circle(32)) == "alternate_point"
    assert QuadratureSpec().resolve(pm128) == "midpoint"
    assert QuadratureSpec().resolve(flat_open(20)) == "epsilon_cutoff"


def test_flat_sheet_center_node_is_still():
    s = flat_open(40)
    U = pv_velocity(s, nodes=[20])
    assert np.abs(U).max() < 1e-10


def test_prandtl_munk_interior_velocity(pm128):
    U, info = pv_velocity(pm128, return_info=True)
    assert np.abs(U - [0.0, -0.5]).max() < 1e-9
    assert info["extrapolated"] == [0, 128]


def test_prandtl_munk_epsilon_route(pm128):
    U = pv_velocity(pm128, QuadratureSpec(scheme="epsilon_cutoff"), nodes=[10, 40, 64, 100])
    assert np.abs(U - [0.0, -0.5]).max() < 1e-6


def test_far_field_of_two_sheets():
    a = flat_open(40, length=0.1, gamma=1.0)
    b = a.replace(xi=a.xi + np.array([0.0, 10.0]))
    # velocity induced at the middle of a by the distant copy b
    v = velocity_off_sheet(b, a.xi[20])
    expected = biot_savart_kernel(a.xi[20] - np.array([0.0, 10.0])) * 0.1
    assert np.allclose(v, expected, rtol=1e-4)


def test_circle_velocity_is_tangential_half_jump():
    c = circle(128)
    U = pv_velocity(c)[:-1]
    tangent = np.column_stack([-c.xi[:-1, 1], c.xi[:-1, 0]])
    assert np.allclose(U, 0.5 * tangent, atol=1e-12)


def test_off_sheet_flat_sheet_limits():
    vals = []
    for L in (4.0, 16.0, 64.0):
        s = flat_open(int(40 * L), length=L)
        vals.append(velocity_off_sheet(s, [0.0, 0.2])[0])
    for v in vals:
        assert abs(v[1]) < 1e-12
    errs = [abs(v[0] + 0.5) for v in vals]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 5e-3


def test_off_sheet_dipole_decay():
    s = flat_open(40, length=1.0)
    s = s.replace(sigma=s.xi[:, 0])  # zero total circulation
    v1 = np.hypot(*velocity_off_sheet(s, [10.0, 7.0])[0])
    v2 = np.hypot(*velocity_off_sheet(s, [20.0, 14.0])[0])
    assert 3.5 < v1 / v2 < 4.5


def test_two_sided_mean_matches_principal_value():
    s = flat_uniform_state(OracleSpec("flat_uniform", N=64, params={"period": 2.0}))
    foot = s.xi[10]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SheetWarning)
        hs = np.array([0.4, 0.2, 0.1])
        up = np.array([velocity_off_sheet(s, foot + [0, h])[0] for h in hs])
        dn = np.array([velocity_off_sheet(s, foot - [0, h])[0] for h in hs])
    mean = 0.5 * (up + dn)
    assert np.allclose(mean[-1], pv_velocity(s, nodes=[10])[0], atol=1e-12)
    assert np.isclose(up[-1, 0] - dn[-1, 0], -1.0)


def test_off_sheet_warnings_and_errors():
    s = flat_open(20)
    with pytest.raises(SingularityError):
        velocity_off_sheet(s, s.xi[3])
    with pytest.warns(SheetWarning):
        velocity_off_sheet(s, s.xi[3] + [0, 1e-3])


def test_maximal_operator_examples():
    s = flat_open(40)
    eps = [0.5, 0.25, 0.1]
    ustar = maximal_operator(s, eps)
    assert ustar[20] < 1e-10
    c = perturbed_circle(32)
    ustar = maximal_operator(c, np.geomspace(1.0, 0.2, 5))
    pv = np.hypot(*pv_velocity(c)[:-1].T)
    assert np.all(ustar >= pv - 1e-12)


def test_orientation_reversal_leaves_velocity_unchanged():
    eta = np.linspace(0, 1, 41)
    xi = np.column_stack([eta, 0.2 * np.sin(2 * eta)])
    sig = 1 + eta**2
    s = SheetState(t=0, eta=eta, xi=xi, sigma=sig)
    r = SheetState(t=0, eta=-eta[::-1], xi=xi[::-1], sigma=sig[::-1])
    q = QuadratureSpec(scheme="epsilon_cutoff")
    a = pv_velocity(s, q, nodes=[5, 20, 33])
    b = pv_velocity(r, q, nodes=[35, 20, 7])
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_truncated_velocity_flat_symmetric():
    s = flat_open(40)
    for e in (0.5, 0.1):
        assert np.abs(truncated_velocity(s, e, nodes=[20])).max() < 1e-12


def test_blob_and_alternate_point_agree_with_cutoff_on_smooth_closed_sheet():
    ref = pv_velocity(perturbed_circle(256), QuadratureSpec(scheme="midpoint"))[:-1:8]
    alt = [np.abs(pv_velocity(perturbed_circle(n))[:-1:n // 32] - ref).max() for n in (32, 64)]
    assert alt[1] < alt[0] and alt[1] < 1e-6
    blob = [np.abs(pv_velocity(perturbed_circle(256), QuadratureSpec(scheme="blob", delta=d))
                   [:-1:8] - ref).max() for d in (0.1, 0.05, 0.025)]
    assert blob[0] > blob[1] > blob[2]
    rates = np.log2(np.array(blob[:-1]) / np.array(blob[1:]))
    assert np.all(rates > 0.8)
