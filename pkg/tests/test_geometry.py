import numpy as np
import pytest
from hypothesis import given, strategies as st

from vortexsheet.exceptions import DegenerateSegmentError
from vortexsheet.geometry import (arclength_defect, arclength_table, curve_length_in_disk,
                                  default_centers, default_r_grid, estimate_regularity_constant,
                                  hausdorff_distance, lp_norm, reparametrize_arclength,
                                  total_measure)
from vortexsheet.oracles import prandtl_munk_state, segment_state
from vortexsheet.state import SheetState

from conftest import circle


def test_arclength_of_segment():
    s = segment_state(4)
    assert np.allclose(arclength_table(s), [0, 0.25, 0.5, 0.75, 1.0])


def test_circle_circumference_converges():
    errs = [abs(arclength_table(circle(n))[-1] - 2 * np.pi) for n in (64, 128, 256)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3


def test_prandtl_munk_length_is_two():
    assert np.isclose(arclength_table(prandtl_munk_state(64))[-1], 2.0)


def test_degenerate_segment():
    s = segment_state(4)
    bad = SheetState.__new__(SheetState)
    object.__setattr__(bad, "xi", np.array([[0, 0], [0, 0], [1, 0.0]]))
    with pytest.raises(DegenerateSegmentError):
        arclength_table(bad)
    assert arclength_table(s)[-1] == 1.0


def test_graph_reparametrization_preserves_circulation():
    x = np.linspace(0, 1, 41)
    s = SheetState(t=0, eta=x, xi=np.column_stack([x, x]), sigma=np.ones(41), param_kind="graph")
    a = reparametrize_arclength(s, 61)
    assert a.param_kind == "arclength"
    assert arclength_defect(a) <= 1e-6
    assert np.allclose(a.sigma, 1 / np.sqrt(2), rtol=1e-12)
    assert np.isclose(total_measure(a), 1.0, rtol=1e-12)


def test_identity_reparametrization():
    s = segment_state(20).replace(param_kind="arclength")
    a = reparametrize_arclength(s, 21)
    assert np.allclose(a.xi, s.xi, atol=1e-14) and np.allclose(a.sigma, s.sigma)


def test_circulation_parametrized_prandtl_munk_gives_elliptic_density():
    # eta = circulation coordinate: Gamma(s) = -sqrt(1 - s^2) is not monotone, so use the
    # half sheet s in [0, 1) where it is; sigma = 1 there
    s_nodes = np.sin(np.linspace(0.0, 0.4 * np.pi, 200))
    eta = -np.sqrt(1 - s_nodes**2)
    st_c = SheetState(t=0, eta=eta, xi=np.column_stack([s_nodes, 0 * s_nodes]),
                      sigma=np.ones_like(eta), param_kind="circulation")
    a = reparametrize_arclength(st_c, 400)
    s = a.xi[:, 0]
    inner = (s > 0.05) & (s < 0.9)
    expected = s / np.sqrt(1 - s**2)
    assert np.allclose(a.sigma[inner], expected[inner], rtol=0, atol=2e-3)


def test_length_in_disk_examples():
    s = segment_state(10)
    assert np.isclose(curve_length_in_disk(s, (0.5, 0.0), 0.1), 0.2)
    assert curve_length_in_disk(s, (5.0, 5.0), 0.5) == 0.0
    c = circle(256)
    assert np.isclose(curve_length_in_disk(c, (0.0, 0.0), 1.0), arclength_table(c)[-1])
    with pytest.raises(ValueError):
        curve_length_in_disk(s, (0, 0), 0.0)


def test_regularity_segment_and_circle():
    seg = estimate_regularity_constant(segment_state(64))
    assert 1.98 <= seg.A_estimate <= 2.02
    circ = estimate_regularity_constant(circle(256))
    assert 6.2 <= circ.A_estimate <= 6.4
    assert np.allclose(circ.worst_case[0], 0.0, atol=0.05)


def test_regularity_estimate_monotone_under_refinement():
    s = circle(64, radius=1.3)
    coarse = estimate_regularity_constant(s, default_r_grid(s, 8), default_centers(s, 8))
    fine = estimate_regularity_constant(s, default_r_grid(s, 24), default_centers(s, 32))
    assert fine.A_estimate >= coarse.A_estimate - 1e-12


def _spiral(turns, n_per_turn=200):
    th = np.linspace(1.0, 1.0 + 2 * np.pi * turns, int(n_per_turn * turns))
    r = th**-0.5
    xi = np.column_stack([r * np.cos(th), r * np.sin(th)])
    eta = np.arange(th.size, dtype=float)
    return SheetState(t=0, eta=eta, xi=xi, sigma=np.ones_like(eta))


def test_algebraic_spiral_constant_grows_with_turns():
    vals = [estimate_regularity_constant(_spiral(k), centers=np.zeros((1, 2)),
                                         r_grid=np.geomspace(1e-3, 1.0, 40)).A_estimate
            for k in (2, 8, 32)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] > 2 * vals[0]


def test_lp_norms():
    s = segment_state(50, gamma=2.0)
    assert np.isclose(lp_norm(s, 1.0), 2.0) and np.isclose(lp_norm(s, 2.0), 2.0)


def test_hausdorff():
    a = segment_state(10)
    b = a.replace(xi=a.xi + np.array([0.0, 0.1]))
    assert np.isclose(hausdorff_distance(a, b), 0.1)
    assert hausdorff_distance(a, a) == 0.0


# -- properties -------------------------------------------------------------------------

def _random_curve(seed, n=40):
    rng = np.random.default_rng(seed)
    steps = rng.normal(size=(n, 2))
    xi = np.vstack([[0, 0], np.cumsum(steps, axis=0)])
    sigma = rng.normal(size=n + 1)
    return SheetState(t=0, eta=np.arange(n + 1.0), xi=xi, sigma=sigma)


@given(st.integers(0, 10**6), st.floats(0.05, 5.0), st.floats(0.0, 3.0))
def test_length_in_disk_monotone_in_radius(seed, r, dr):
    s = _random_curve(seed)
    c = s.xi[seed % s.n]
    assert curve_length_in_disk(s, c, r + dr) >= curve_length_in_disk(s, c, r) - 1e-12


@given(st.integers(0, 10**6), st.integers(5, 200))
def test_reparametrization_preserves_circulation(seed, n_out):
    s = _random_curve(seed)
    a = reparametrize_arclength(s, n_out)
    ref = total_measure(s)
    assert abs(total_measure(a) - ref) <= 1e-12 * max(1.0, np.abs(s.sigma).sum())
    assert arclength_defect(a) <= 1e-6


@given(st.integers(0, 10**6))
def test_regularity_constant_dominates_every_sampled_pair(seed):
    s = _random_curve(seed, 20)
    r_grid = default_r_grid(s, 6)
    centers = default_centers(s, 4)
    rep = estimate_regularity_constant(s, r_grid, centers)
    for c in centers[:: max(1, len(centers) // 10)]:
        for r in r_grid:
            assert rep.A_estimate * r >= curve_length_in_disk(s, c, r) - 1e-9
    assert rep.A_estimate >= 2 - 1e-9


def test_norms_invariant_under_reparametrization():
    eta = np.linspace(0, 1, 401)
    xi = np.column_stack([eta**2 + eta, np.sin(eta)])
    s = SheetState(t=0, eta=eta, xi=xi, sigma=1 + eta)
    a = reparametrize_arclength(s, 801)
    for p in (1.0, 2.0):
        assert np.isclose(lp_norm(a, p), lp_norm(s, p), rtol=1e-4)
