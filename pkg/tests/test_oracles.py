import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vortexsheet.dynamics import normal_defect
from vortexsheet.kernels import pv_velocity, velocity_off_sheet
from vortexsheet.oracles import (OracleSpec, build, flat_uniform_state, kh_linearized_growth,
                                 periodic_perturbed, prandtl_munk_lp_norm, prandtl_munk_state,
                                 prandtl_munk_trajectory)
from vortexsheet.state import SheetState, SheetTrajectory, read_jsonl, write_jsonl


def test_prandtl_munk_trajectory_positions():
    traj = prandtl_munk_trajectory(OracleSpec("prandtl_munk", N=32, T=1.0, dt=0.25))
    assert np.allclose(traj.times, [0, 0.25, 0.5, 0.75, 1.0])
    assert np.all(traj[0].xi[:, 1] == 0.0)
    assert np.allclose(traj[-1].xi[:, 1], -0.5)
    assert np.allclose(traj[-1].xi[:, 0], -np.cos(np.pi * np.arange(33) / 32))
    assert np.array_equal(traj[0].sigma, traj[-1].sigma)


def test_prandtl_munk_exact_trajectory_has_zero_normal_defect():
    traj = prandtl_munk_trajectory(OracleSpec("prandtl_munk", N=64, dt=0.1))
    b = normal_defect(traj[0], traj[1], pv_velocity(traj[0]))
    assert np.abs(b).max() < 1e-9


def test_prandtl_munk_lp_norms():
    # p = 1: the L1 norm of |cos| d theta is 2
    assert prandtl_munk_lp_norm(4096, 1) == pytest.approx(2.0, rel=1e-6)
    l2 = [prandtl_munk_lp_norm(n, 2) for n in (128, 512, 2048, 8192)]
    assert np.all(np.diff(l2) > 0)
    # squared norm grows like log N
    inc = np.diff(np.square(l2))
    assert np.allclose(inc, inc[0], rtol=1e-3)


def test_flat_uniform_off_sheet_jump():
    s = flat_uniform_state(OracleSpec("flat_uniform", N=64, params={"gamma_bar": 2.0}))
    v = velocity_off_sheet(s, np.array([[1.0, 1.5], [2.0, -0.7]]))
    assert np.allclose(v, [[-1.0, 0.0], [1.0, 0.0]], atol=1e-12)


@pytest.mark.parametrize("gamma_bar", [0.5, 1.0, 2.0])
def test_kh_rate_is_linear_in_wavenumber_and_density(gamma_bar):
    spec = OracleSpec("flat_uniform", N=64, params={"gamma_bar": gamma_bar})
    rates = kh_linearized_growth(spec, wavenumbers=(1, 2, 4, 8))
    for k, r in rates.items():
        assert r == pytest.approx(0.5 * gamma_bar * k, rel=1e-6)


def test_kh_rate_scales_with_period():
    spec = OracleSpec("flat_uniform", N=32, params={"period": 1.0})
    assert kh_linearized_growth(spec, (1,))[1] == pytest.approx(np.pi, rel=1e-6)


def test_kh_zero_amplitude_and_unresolved_wavenumber():
    assert kh_linearized_growth(OracleSpec("flat_uniform", N=16, params={"amplitude": 0}),
                                (1, 2)) == {1: 0.0, 2: 0.0}
    with pytest.raises(ValueError):
        kh_linearized_growth(OracleSpec("flat_uniform", N=16), (8,))


def test_periodic_perturbed_shape():
    s = periodic_perturbed(OracleSpec("periodic_perturbed", N=32, params={"k": 2}))
    assert s.topology == "periodic"
    assert np.max(s.xi[:, 1]) == pytest.approx(0.01, rel=1e-3)
    assert isinstance(build(OracleSpec("prandtl_munk", N=8)), SheetTrajectory)
    assert isinstance(build(OracleSpec("flat_uniform", N=8)), SheetState)


def test_spec_validation_and_round_trip():
    with pytest.raises(ValueError):
        OracleSpec("vortex_ring")
    with pytest.raises(ValueError):
        OracleSpec("flat_uniform", N=1)
    spec = OracleSpec("periodic_perturbed", N=24, params={"amplitude": 0.02})
    assert OracleSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_trajectory_jsonl_round_trip_is_exact(tmp_path):
    traj = prandtl_munk_trajectory(OracleSpec("prandtl_munk", N=16, dt=0.5))
    path = tmp_path / "traj.jsonl"
    write_jsonl(path, traj)
    back = read_jsonl(path)
    for a, b in zip(traj, back):
        assert np.abs(a.xi - b.xi).max() <= 1e-15
        assert np.array_equal(a.sigma, b.sigma) and a.t == b.t


@given(st.integers(3, 200), st.floats(0.0, 2.0))
def test_prandtl_munk_state_is_flat_at_height(n, t):
    s = prandtl_munk_state(n, t)
    assert np.all(s.xi[:, 1] == -0.5 * t)
    assert s.xi[0, 0] == -1.0 and s.xi[-1, 0] == pytest.approx(1.0)
