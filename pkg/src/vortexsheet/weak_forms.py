"""Weak Birkhoff-Rott and weak Euler (symmetrized) residuals on trajectories.

For a trajectory (xi, sigma) and a test function phi the two residuals are

    R_BR    = int_0^T sum_s sigma [phi_t + U . grad phi](xi) + sum_s sigma_0 phi(xi_0, 0)
    R_Euler = int_0^T { sum_s sigma phi_t(xi) + sum_r sum_s H_phi(xi_r, xi_s) sigma_r sigma_s }
              + sum_s sigma_0 phi(xi_0, 0)

with sums over the sheet quadrature nodes (weights included) and the
trapezoid rule over the stored times.  ``U`` is always recomputed from the
stored positions and densities.

Only pairs with at least one node inside the support of phi contribute to the
double sum.  Writing S for those nodes (periodic images included), pairs
inside S use H_phi directly and pairs (x in S, y outside) reduce to
grad phi(x) . K(x - y), so the far part is a plain velocity sum.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import curve_diameter
from .kernels import QuadratureSpec, SheetWarning, _w_periodic, pv_velocity
from .state import SheetTrajectory
from .testfunctions import TestFunction

DIAGONAL_MODES = ("limit", "exclude")
_TIME_TOL = 1e-12


# -- per-state pieces --------------------------------------------------------------

def _support_nodes(state, phi):
    """Indices (into the quadrature nodes) and positions of the nodes inside
    the closed support disk of phi, periodic images included."""
    _, xi, sigma, w = state.quad_nodes()
    c = np.asarray(phi.center)
    if state.topology != "periodic":
        idx = np.flatnonzero(phi.in_support(xi))
        return idx, xi[idx]
    L = state.period
    lo = int(np.floor((c[0] - phi.radius - xi[:, 0].max()) / L))
    hi = int(np.ceil((c[0] + phi.radius - xi[:, 0].min()) / L))
    idx, pos = [], []
    for n in range(lo, hi + 1):
        shifted = xi + np.array([n * L, 0.0])
        inside = np.flatnonzero(phi.in_support(shifted))
        idx.append(inside)
        pos.append(shifted[inside])
    return np.concatenate(idx).astype(int), np.concatenate(pos) if pos else np.empty((0, 2))


def _unit_tangents(state):
    """Unit tangents at the quadrature nodes from central differences in the
    parameter (one-sided at open ends)."""
    eta, xi = state.eta, state.xi
    if state.is_open:
        d = np.gradient(xi, eta, axis=0, edge_order=2)
    else:
        m = state.n - 1
        shift = xi[-1] - xi[0]
        ext = np.vstack([xi[m - 1:m] - shift, xi[:m], xi[:1] + shift])
        d = (ext[2:] - ext[:-2])
    return (d / np.hypot(*d.T)[:, None])[: (state.n if state.is_open else state.n - 1)]


def _k_matrix(x, y):
    """K(x_i - y_j) as an (n, m, 2) array; coincident pairs give zero."""
    d = x[:, None, :] - y[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    same = r2 == 0.0
    r2 = np.where(same, 1.0, r2)
    k = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2.0 * np.pi * r2[..., None])
    k[same] = 0.0
    return k


def _far_velocity(state, idx, pos):
    """sum over all sheet nodes y not in S of K(x - y) sigma_y w_y, for every
    x = pos in S."""
    _, xi, sigma, w = state.quad_nodes()
    cw = sigma * w
    if state.topology == "periodic":
        L = state.period
        z = (pos[:, 0] + 1j * pos[:, 1])[:, None] - (xi[:, 0] + 1j * xi[:, 1])[None, :]
        own = np.zeros(z.shape, dtype=bool)
        own[np.arange(idx.size), idx] = True
        zz = np.where(own, 1.0, z)
        wv = np.where(own, 0.0, _w_periodic(zz, L)) @ cw
        total = np.stack([wv.real, -wv.imag], axis=-1)
    else:
        total = np.einsum("ijk,j->ik", _k_matrix(pos, xi), cw)
    inner = np.einsum("ijk,j->ik", _k_matrix(pos, pos), cw[idx])
    return total - inner


def interaction_term(state, phi, diagonal="limit"):
    """sum_r sum_s H_phi(xi_r, xi_s) sigma_r sigma_s w_r w_s at one time.

    ``diagonal='limit'`` adds the r = s cells with the continuous diagonal
    value t . hess(phi) t^perp / (4 pi); ``'exclude'`` drops them.
    """
    if diagonal not in DIAGONAL_MODES:
        raise ValueError(f"diagonal must be one of {DIAGONAL_MODES}")
    idx, pos = _support_nodes(state, phi)
    if idx.size == 0:
        return 0.0
    _, _, sigma, w = state.quad_nodes()
    cw = (sigma * w)[idx]
    t = state.t
    grad = phi.grad(pos, t)
    d = pos[:, None, :] - pos[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    same = r2 == 0.0
    r2 = np.where(same, 1.0, r2)
    dg = 0.5 * (grad[:, None, :] - grad[None, :, :])
    H = (dg[..., 1] * d[..., 0] - dg[..., 0] * d[..., 1]) / (2.0 * np.pi * r2)
    H[same] = 0.0
    inner = float(cw @ H @ cw)
    far = float(np.einsum("ik,ik,i->", grad, _far_velocity(state, idx, pos), cw))
    diag = 0.0
    if diagonal == "limit":
        tan = _unit_tangents(state)[idx]
        perp = np.column_stack([-tan[:, 1], tan[:, 0]])
        hess = phi.hessian(pos, t)
        hdiag = np.einsum("ij,ijk,ik->i", tan, hess, perp) / (4.0 * np.pi)
        diag = float(np.sum(hdiag * cw**2))
    return inner + far + diag


def _linear_terms(state, phi):
    idx, pos = _support_nodes(state, phi)
    if idx.size == 0:
        return 0.0, 0.0, 0.0, 0.0, idx, pos
    _, _, sigma, w = state.quad_nodes()
    cw = (sigma * w)[idx]
    ft = phi.dt(pos, state.t) * cw
    f0 = phi(pos, state.t) * cw
    return (float(ft.sum()), float(f0.sum()), float(np.abs(ft).sum()), float(np.abs(f0).sum()),
            idx, pos)


class _VelocityCache:
    """PV velocities at all quadrature nodes of each state, computed once."""

    def __init__(self, traj, q):
        self.traj = traj
        self.q = q
        self._store = {}

    def __call__(self, k):
        if k not in self._store:
            st = self.traj[k]
            m = st.n if st.is_open else st.n - 1
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SheetWarning)
                self._store[k] = pv_velocity(st, self.q, nodes=np.arange(m), check=False)
        return self._store[k]


def _check_time_support(traj, phi):
    T = traj.times[-1]
    if phi.support_end > T + _TIME_TOL:
        raise ValueError(f"test function {phi.id or phi.kind} is supported beyond "
                         f"the trajectory end time {T:g}")


def _trapezoid(times, values):
    return float(np.trapezoid(values, times)) if times.size > 1 else 0.0


@dataclass
class ResidualTerms:
    """Time-integrated pieces of both residuals at one resolution."""

    time_term: float
    initial_term: float
    br_nonlinear: float
    euler_nonlinear: float
    linear_scale: float

    @property
    def residual_br(self):
        return self.time_term + self.br_nonlinear + self.initial_term

    @property
    def residual_euler(self):
        return self.time_term + self.euler_nonlinear + self.initial_term


def residual_terms(traj, phi, q=None, diagonal="limit", which=("br", "euler"), _cache=None):
    """All pieces of both residuals for ``traj`` at its stored resolution."""
    _check_time_support(traj, phi)
    q = q or QuadratureSpec()
    cache = _cache or _VelocityCache(traj, q)
    times = traj.times
    time_vals = np.zeros(times.size)
    abs_vals = np.zeros(times.size)
    abs_initial = 0.0
    br_vals = np.zeros(times.size)
    eu_vals = np.zeros(times.size)
    initial = 0.0
    for k, st in enumerate(traj):
        g, dg = phi.time_profile(st.t)
        if g == 0.0 and dg == 0.0:
            continue
        lin_t, lin_0, abs_t, abs_0, idx, pos = _linear_terms(st, phi)
        if idx.size == 0:
            continue
        time_vals[k] = lin_t
        abs_vals[k] = abs_t
        if k == 0:
            initial, abs_initial = lin_0, abs_0
        if g == 0.0:
            continue
        if "br" in which:
            _, _, sigma, w = st.quad_nodes()
            U = cache(k)[idx]
            br_vals[k] = float(np.einsum("ik,ik,i->", phi.grad(pos, st.t), U, (sigma * w)[idx]))
        if "euler" in which:
            eu_vals[k] = interaction_term(st, phi, diagonal)
    return ResidualTerms(_trapezoid(times, time_vals), initial,
                         _trapezoid(times, br_vals), _trapezoid(times, eu_vals),
                         _trapezoid(times, abs_vals) + abs_initial)


def weak_br_residual(traj, phi, q=None):
    """Left side of the weak Birkhoff-Rott identity at the stored resolution."""
    return residual_terms(traj, phi, q, which=("br",)).residual_br


def weak_euler_residual(traj, phi, q=None, diagonal="limit"):
    """Left side of the symmetrized weak Euler identity at the stored
    resolution; ``q`` is accepted for symmetry with ``weak_br_residual`` (the
    double sum does not use a principal value)."""
    return residual_terms(traj, phi, q, diagonal, which=("euler",)).residual_euler


# -- fixed-eps symmetrization identity ------------------------------------------------

def diagonal_equivalence_check(state, phi, eps, t=None):
    """Both sides of the fixed-eps swap identity on the quadrature nodes:

    single = sum_s grad phi(x_s) . [sum_{|x_s - x_r| >= eps} K(x_s - x_r) c_r] c_s
    double = sum_s sum_{|x_s - x_r| >= eps} H_phi(x_s, x_r) c_r c_s

    with c = sigma * w.  The two agree exactly in exact arithmetic; the sums
    are accumulated with ``math.fsum`` so only per-term rounding remains.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    t = state.t if t is None else t
    _, xi, sigma, w = state.quad_nodes()
    c = sigma * w
    grad = phi.grad(xi, t)
    d = xi[:, None, :] - xi[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    keep = r2 >= eps**2
    r2 = np.where(keep, r2, 1.0)
    K = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2.0 * np.pi * r2[..., None])
    K[~keep] = 0.0
    cc = c[:, None] * c[None, :]
    single_terms = np.einsum("ik,ijk->ij", grad, K) * cc
    dg = 0.5 * (grad[:, None, :] - grad[None, :, :])
    double_terms = np.einsum("ijk,ijk->ij", dg, K) * cc
    return math.fsum(single_terms.ravel()), math.fsum(double_terms.ravel())


# -- test suites ----------------------------------------------------------------------------

def _sheet_scale(state):
    if state.topology == "periodic":
        return state.period
    return curve_diameter(state)


def _centroid(state):
    _, xi, _, w = state.quad_nodes()
    return (xi * w[:, None]).sum(axis=0) / w.sum()


def build_test_suite(traj, n=12):
    """Deterministic suite of ``n`` test functions for ``traj``.

    ``n = 1`` gives a single bump at the centroid of the initial sheet with
    radius equal to a quarter of its diameter (a quarter period for periodic
    sheets).  Larger suites cycle through: the centroid bump, tip bumps (open
    sheets), bumps on nodes at several times, bumps just off the sheet, and
    linear-core bumps, varying kinds, radii and time profiles.  Every function
    vanishes for t >= 0.9 T.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    s0 = traj[0]
    T = float(traj.times[-1])
    D = _sheet_scale(s0)
    periodic = s0.topology == "periodic"
    c0 = _centroid(s0)
    stop = 0.9 * T
    suite = [TestFunction("gaussian_bump_truncated", tuple(c0), D / 4.0,
                          time_kind="plateau", t_flat=0.25 * T, t_stop=stop, id="centroid")]
    if n == 1:
        return suite

    tips = []
    if s0.is_open:
        tips = [
            TestFunction("gaussian_bump_truncated", tuple(s0.xi[0]), D / 4.0, time_kind="plateau",
                         t_flat=0.25 * T, t_stop=stop, id="tip-start"),
            TestFunction("polynomial_bump", tuple(s0.xi[-1]), D / 4.0, time_kind="plateau",
                         t_flat=0.25 * T, t_stop=stop, id="tip-end"),
        ]
    node_fracs = [0.3, 0.7, 0.5, 0.15, 0.85, 0.6, 0.4]
    time_slots = [(-0.5, 0.6), (0.1, 0.8), (-0.2, 0.5), (0.2, 0.9)]
    kinds = ("gaussian_bump_truncated", "polynomial_bump")
    node_bumps = []
    for i, f in enumerate(node_fracs):
        k = min(int(round(f * (len(traj) - 1) * 0.5)), len(traj) - 1)
        st = traj[k]
        j = int(round(f * (st.n - 1)))
        a, b = time_slots[i % len(time_slots)]
        radius = D * (0.12 + 0.04 * (i % 3))
        node_bumps.append(TestFunction(kinds[i % 2], tuple(st.xi[j]), radius,
                                       time_kind="bump", t_start=a * T, t_stop=b * T,
                                       id=f"node-{i}"))
    off = []
    tan = _unit_tangents(s0)
    for i, f in enumerate((0.4, 0.65, 0.2)):
        j = int(round(f * (s0.n - 1)))
        j = min(j, tan.shape[0] - 1)
        normal = np.array([-tan[j, 1], tan[j, 0]])
        radius = D * 0.15
        centre = s0.xi[j] + (0.6 if i % 2 == 0 else -0.6) * radius * normal
        off.append(TestFunction(kinds[(i + 1) % 2], tuple(centre), radius,
                                time_kind="plateau", t_flat=0.2 * T, t_stop=stop, id=f"off-{i}"))
    lin_r = (0.45 if periodic else 0.75) * D
    linear = [
        TestFunction("linear_core", tuple(c0), lin_r, time_kind="plateau", t_flat=0.25 * T,
                     t_stop=stop, slope=(0.3, -0.2), offset=1.0, core=0.6, id="linear-0"),
        TestFunction("linear_core", tuple(c0 + np.array([0.1, 0.05]) * D), 0.8 * lin_r,
                     time_kind="bump", t_start=-0.4 * T, t_stop=stop, slope=(-0.1, 0.4),
                     offset=0.5, core=0.5, id="linear-1"),
    ]
    pools = [tips, node_bumps, off, linear]
    while len(suite) < n and any(pools):
        for pool in pools:
            if pool and len(suite) < n:
                suite.append(pool.pop(0))
    k = 0
    while len(suite) < n:
        # deterministic extras: shrinking bumps around the centroid
        suite.append(TestFunction(kinds[k % 2], tuple(c0), D / (5.0 + k), time_kind="bump",
                                  t_start=-0.3 * T, t_stop=stop, id=f"extra-{k}"))
        k += 1
    return suite


def covers_tip(traj, phi):
    """True if the support of phi contains a tip of an open sheet at some
    stored time where phi is active."""
    if not traj[0].is_open:
        return False
    for st in traj:
        g, _ = phi.time_profile(st.t)
        if g != 0.0 and np.any(phi.in_support(st.xi[[0, -1]])):
            return True
    return False


# -- refinement and decision ---------------------------------------------------------------

@dataclass
class ResidualReport:
    test_function_id: str
    residual_br: float
    residual_euler: float
    refinements_br: list
    refinements_euler: list
    converged_br: bool
    converged_euler: bool
    decision_br: str
    decision_euler: str
    limit_br: float
    limit_euler: float
    order_br: float
    order_euler: float
    floor: float
    covers_tip: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self):
        d = dict(self.__dict__)
        d["refinements_br"] = [list(map(float, p)) for p in self.refinements_br]
        d["refinements_euler"] = [list(map(float, p)) for p in self.refinements_euler]
        return d

    CSV_HEADER = ("test_function_id", "residual_br", "residual_euler", "limit_br",
                  "limit_euler", "order_br", "order_euler", "floor", "converged_br",
                  "converged_euler", "decision_br", "decision_euler")

    def csv_row(self):
        return [self.test_function_id, self.residual_br, self.residual_euler, self.limit_br,
                self.limit_euler, self.order_br, self.order_euler, self.floor,
                int(self.converged_br), int(self.converged_euler), self.decision_br,
                self.decision_euler]


def extrapolate(values, ratio=2.0):
    """Aitken-style estimate from three successive refinements.

    Returns (limit, observed order); the order is NaN when the differences do
    not shrink, in which case the finest value is returned as the limit.
    """
    r0, r1, r2 = values[-3:]
    d1, d2 = r0 - r1, r1 - r2
    if d2 == 0.0:
        return r2, (np.inf if d1 != 0.0 else np.nan)
    q = d1 / d2
    if not q > 1.0:
        return r2, np.nan
    p = math.log(q) / math.log(ratio)
    return r2 - d2 / (q - 1.0), p


def decide(values, floor, ratio=2.0, order=2.0):
    """Classify a refinement sequence as "zero" or "nonzero".

    "zero" when the magnitudes shrink at (nearly) the scheme ``order`` at
    every step, or when the extrapolated limit is within ``floor``; anything
    plateauing above the floor is "nonzero".  Returns (decision, limit,
    observed order).
    """
    values = [float(v) for v in values]
    if all(abs(v) <= floor for v in values):
        return "zero", 0.0, np.inf
    if len(values) < 3:
        return ("zero" if abs(values[-1]) <= floor else "nonzero"), values[-1], np.nan
    limit, p = extrapolate(values, ratio)
    mags = np.abs(values)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = np.log(mags[:-1] / mags[1:]) / math.log(ratio)
    if np.all(rates >= order - 0.5):
        return "zero", limit, (p if np.isfinite(p) else float(rates.min()))
    return ("zero" if abs(limit) <= floor else "nonzero"), limit, p


def _is_converged(values, floor):
    a, b = values[-2], values[-1]
    return abs(b) <= floor or abs(b - a) < 0.1 * max(abs(a), abs(b))


def refinement_levels(traj, levels=3):
    """Strides (2^(levels-1), ..., 2, 1) usable for joint space-time
    subsampling of ``traj``."""
    strides = [2**k for k in range(levels - 1, -1, -1)]
    big = strides[0]
    s0 = traj[0]
    if (s0.n - 1) % big or (len(traj) - 1) % big:
        raise ValueError(f"trajectory with {s0.n - 1} intervals and {len(traj) - 1} steps "
                         f"cannot be subsampled by {big}")
    return strides


def evaluate_residuals(traj, phi, q=None, levels=3, diagonal="limit", floor_factor=1e-4,
                       _caches=None):
    """Both residuals at ``levels`` joint space-time refinements (subsampling
    the stored trajectory), with the Richardson decision rule."""
    q = q or QuadratureSpec()
    strides = refinement_levels(traj, levels)
    br, eu = [], []
    scale = 0.0
    for stride in strides:
        sub = traj if stride == 1 else traj.subsample(stride, stride)
        cache = None
        if _caches is not None:
            cache = _caches.setdefault(stride, _VelocityCache(sub, q))
            sub = cache.traj
        terms = residual_terms(sub, phi, q, diagonal, _cache=cache)
        res = sub[0].n - 1
        br.append((res, terms.residual_br))
        eu.append((res, terms.residual_euler))
        scale = terms.linear_scale
    floor = floor_factor * scale if scale > 0 else floor_factor
    vb = [v for _, v in br]
    ve = [v for _, v in eu]
    dec_b, lim_b, ord_b = decide(vb, floor)
    dec_e, lim_e, ord_e = decide(ve, floor)
    return ResidualReport(
        test_function_id=phi.id or phi.kind,
        residual_br=vb[-1], residual_euler=ve[-1],
        refinements_br=br, refinements_euler=eu,
        converged_br=_is_converged(vb, floor), converged_euler=_is_converged(ve, floor),
        decision_br="PASS_BR" if dec_b == "zero" else "FAIL_BR",
        decision_euler="PASS_EULER" if dec_e == "zero" else "FAIL_EULER",
        limit_br=float(lim_b), limit_euler=float(lim_e),
        order_br=float(ord_b), order_euler=float(ord_e), floor=float(floor),
        covers_tip=covers_tip(traj, phi),
    )


def evaluate_suite(traj, suite, q=None, levels=3, diagonal="limit"):
    """Reports for every function in ``suite``, sharing velocity caches."""
    if not isinstance(traj, SheetTrajectory):
        raise TypeError("traj must be a SheetTrajectory")
    caches = {}
    strides = refinement_levels(traj, levels)
    for stride in strides:
        sub = traj if stride == 1 else traj.subsample(stride, stride)
        caches[stride] = _VelocityCache(sub, q or QuadratureSpec())
    return [evaluate_residuals(traj, phi, q, levels, diagonal, _caches=caches) for phi in suite]
