"""Time evolution of vortex sheets and the diagnostics a (tangential
coefficient) and b (normal defect).

Three parametrizations are supported.  ``lagrangian`` and ``circulation``
move only the positions (a = 0, sigma fixed per node).  ``arclength`` keeps
nodes equally spaced in arclength on closed or periodic sheets: with
``s_j = j L(t) / M`` the nodes move with ``U - w xi_s`` where
``w = a - s L'/L`` and ``a(s) = int_0^s xi_s . U_s``, and the nodal density
obeys ``gamma' = -(w gamma)_s - (L'/L) gamma``.  The flux form keeps the
total circulation fixed to rounding.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _spectral
from .exceptions import NumericalAbort, SheetError
from .geometry import min_nonadjacent_distance, total_measure
from .kernels import QuadratureSpec, SheetWarning, _cosine_coefficients, _flat_ends, pv_velocity
from .state import SheetTrajectory

SCHEMES = ("lagrangian", "arclength", "circulation")


@dataclass(frozen=True)
class EvolutionConfig:
    scheme: str = "lagrangian"
    dt: float = 0.01
    t_end: float = 1.0
    quadrature: QuadratureSpec = field(default_factory=QuadratureSpec)
    remesh_every: int = 1
    fourier_filter_level: float = None
    output_every: int = 1
    collision_fraction: float = 0.05

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown evolution scheme {self.scheme!r}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ValueError("dt and t_end must be positive")
        if self.remesh_every < 1 or self.output_every < 1:
            raise ValueError("remesh_every and output_every must be >= 1")
        if self.fourier_filter_level is not None and self.fourier_filter_level < 0:
            raise ValueError("fourier_filter_level must be nonnegative")
        if isinstance(self.quadrature, dict):
            object.__setattr__(self, "quadrature", QuadratureSpec.from_dict(self.quadrature))

    def to_dict(self):
        return {"scheme": self.scheme, "dt": self.dt, "t_end": self.t_end,
                "quadrature": self.quadrature.to_dict(),
                "remesh_every": self.remesh_every,
                "fourier_filter_level": self.fourier_filter_level,
                "output_every": self.output_every,
                "collision_fraction": self.collision_fraction}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# -- diagnostics --------------------------------------------------------------

def total_circulation(state):
    """Trapezoid rule for the integral of sigma over eta."""
    return total_measure(state)


def _periodic_part(state):
    """Positions over the unique nodes with the periodic lift removed, and the
    lift per unit parameter."""
    m = state.n - 1
    lift = np.zeros(2)
    if state.topology == "periodic":
        lift = np.array([state.period / state.param_period, 0.0])
    s = state.eta[:m] - state.eta[0]
    return state.xi[:m] - np.outer(s, lift), lift


def _uniform(eta):
    d = np.diff(eta)
    return np.ptp(d) <= 1e-10 * d.mean()


def recover_tangential_coefficient(state, U):
    """a(s) = int_0^s xi_s . dU with a(0) = 0 for an arclength-parametrized
    state.

    Closed and periodic sheets on a uniform grid use spectral derivatives and
    integrals; otherwise the tangential strain is summed segment by segment
    with the unit chord as tangent, which is exact on straight sheets.
    """
    if state.param_kind != "arclength":
        raise SheetError("tangential coefficient needs an arclength parametrization")
    U = np.asarray(U, dtype=float)
    if U.shape != state.xi.shape:
        raise SheetError(f"U must have shape {state.xi.shape}")
    if not state.is_open and _uniform(state.eta):
        m = state.n - 1
        L = state.param_period
        xper, lift = _periodic_part(state)
        tangent = _spectral.deriv(xper, L) + lift
        strain = np.einsum("ij,ij->i", tangent, _spectral.deriv(U[:m], L))
        a = _spectral.cumint(strain, L)
        return np.append(a, a[0] + strain.mean() * L)
    d = np.diff(state.xi, axis=0)
    t = d / np.hypot(*d.T)[:, None]
    inc = np.einsum("ij,ij->i", t, np.diff(U, axis=0))
    return np.concatenate([[0.0], np.cumsum(inc)])


def _unit_tangent(state):
    xi = state.xi
    if not state.is_open:
        prev = np.vstack([xi[-2:-1] - (xi[-1] - xi[0]), xi[:-1]])
        nxt = np.vstack([xi[1:], xi[1:2] + (xi[-1] - xi[0])])
    else:
        prev = np.vstack([xi[:1], xi[:-1]])
        nxt = np.vstack([xi[1:], xi[-1:]])
    d = nxt - prev
    return d / np.hypot(*d.T)[:, None]


def normal_defect(state, state_next, U):
    """b = xi_s^perp . (U - xi_t) with xi_t the forward difference between two
    consecutive states on a common grid."""
    if state.n != state_next.n or not np.array_equal(state.eta, state_next.eta):
        raise SheetError("normal_defect needs two states on the same grid")
    dt = state_next.t - state.t
    if dt <= 0:
        raise SheetError("states must be in increasing time order")
    xi_t = (state_next.xi - state.xi) / dt
    t = _unit_tangent(state)
    normal = np.column_stack([-t[:, 1], t[:, 0]])
    return np.einsum("ij,ij->i", normal, np.asarray(U, dtype=float) - xi_t)


def suggest_dt(state, q=None, cfl=0.5):
    """dt with max|U| dt = cfl * (smallest node spacing)."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SheetWarning)
        U = pv_velocity(state, q)
    spacing = np.hypot(*np.diff(state.xi, axis=0).T).min()
    speed = np.hypot(*U.T).max()
    return float(cfl * spacing / speed) if speed > 0 else float(cfl * spacing)


# -- lagrangian / circulation --------------------------------------------------

def _velocity(state, q):
    return pv_velocity(state, q, check=False)


def _filter_positions(state, level):
    if level is None:
        return state
    if state.is_open:
        if not (_uniform(state.eta) and _flat_ends(state)):
            return state
        # Chebyshev-type open grid: filter the even-reflection cosine series
        a = _cosine_coefficients(state.xi)
        small = np.abs(a) < level
        small[0] = False
        a[small] = 0.0
        n = state.n - 1
        basis = np.cos(np.pi * np.outer(np.arange(n + 1), np.arange(n + 1)) / n)
        return state.replace(xi=basis @ a)
    m = state.n - 1
    xper, lift = _periodic_part(state)
    f = _spectral.filter_small(xper, level)
    s = state.eta[:m] - state.eta[0]
    xi = f + np.outer(s, lift)
    close = xi[:1] + lift * state.param_period
    return state.replace(xi=np.vstack([xi, close]))


def _material_step(state, cfg, dt):
    q = cfg.quadrature
    level = cfg.fourier_filter_level

    def rhs(xi):
        # filtering the stage positions keeps roundoff out of the unstable modes
        return _velocity(_filter_positions(state.replace(xi=xi), level), q)

    x0 = state.xi
    k1 = rhs(x0)
    k2 = rhs(x0 + 0.5 * dt * k1)
    k3 = rhs(x0 + 0.5 * dt * k2)
    k4 = rhs(x0 + dt * k3)
    xi = x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not state.is_open:
        # keep the repeated end node exact
        xi[-1] = xi[0] + (state.xi[-1] - state.xi[0])
    return state.replace(t=state.t + dt, xi=xi)


# -- arclength -------------------------------------------------------------------

class _ArclengthSystem:
    """Right-hand side of the arclength system on M unique nodes."""

    def __init__(self, template, q):
        self.template = template
        self.q = q
        self.m = template.n - 1
        self.periodic = template.topology == "periodic"
        self.period = template.period

    def lift(self, L):
        return np.array([self.period / L, 0.0]) if self.periodic else np.zeros(2)

    def to_state(self, t, X, g, L, markers=None):
        eta = np.arange(self.m + 1) * (L / self.m)
        shift = np.array([self.period, 0.0]) if self.periodic else np.zeros(2)
        xi = np.vstack([X, X[:1] + shift])
        return self.template.replace(t=t, eta=eta, xi=xi, sigma=np.append(g, g[0]),
                                     markers=markers)

    def rhs(self, X, g, L, markers):
        st = self.to_state(self.template.t, X, g, L)
        U = _velocity(st, self.q)[: self.m]
        s = np.arange(self.m) * (L / self.m)
        lift = self.lift(L)
        tangent = _spectral.deriv(X - np.outer(s, lift), L) + lift
        strain = np.einsum("ij,ij->i", tangent, _spectral.deriv(U, L))
        a = _spectral.cumint(strain, L)
        dL = strain.mean() * L
        w = a - s * dL / L
        dX = U - w[:, None] * tangent
        dg = -_spectral.deriv(w * g, L) - (dL / L) * g
        dm = None
        if markers is not None and markers.size:
            a_per = a - s * dL / L
            dm = _spectral.evaluate(a_per, np.mod(markers, L), L) + markers * dL / L
        return dX, dg, dL, dm, w


def _arclength_rk4(state, cfg, dt):
    sys_ = _ArclengthSystem(state, cfg.quadrature)
    m = sys_.m
    X0 = state.xi[:m].copy()
    g0 = state.sigma[:m].copy()
    L0 = state.param_period
    mk0 = None if state.markers is None else state.markers.copy()

    def add(base, k, c):
        return None if base is None else base + c * k

    k1 = sys_.rhs(X0, g0, L0, mk0)
    k2 = sys_.rhs(X0 + 0.5 * dt * k1[0], g0 + 0.5 * dt * k1[1], L0 + 0.5 * dt * k1[2], add(mk0, k1[3], 0.5 * dt))
    k3 = sys_.rhs(X0 + 0.5 * dt * k2[0], g0 + 0.5 * dt * k2[1], L0 + 0.5 * dt * k2[2], add(mk0, k2[3], 0.5 * dt))
    k4 = sys_.rhs(X0 + dt * k3[0], g0 + dt * k3[1], L0 + dt * k3[2], add(mk0, k3[3], dt))
    comb = [(a + 2 * b + 2 * c + d) / 6.0 if a is not None else None
            for a, b, c, d in zip(k1[:4], k2[:4], k3[:4], k4[:4])]
    w_max = max(np.abs(k[4]).max() for k in (k1, k2, k3, k4))
    spacing = L0 / m
    if w_max * dt > spacing:
        raise NumericalAbort("cfl", f"max|w| dt = {w_max * dt:.3g} exceeds node spacing {spacing:.3g}")
    X = X0 + dt * comb[0]
    g = g0 + dt * comb[1]
    L = L0 + dt * comb[2]
    mk = None if mk0 is None else mk0 + dt * comb[3]
    return sys_, sys_.to_state(state.t + dt, X, g, L, mk)


def remesh_arclength(state):
    """Re-space the nodes of a closed or periodic sheet uniformly in true
    arclength (computed spectrally), carrying density and markers along."""
    m = state.n - 1
    P = state.param_period
    xper, lift = _periodic_part(state)
    tangent = _spectral.deriv(xper, P) + lift
    speed = np.hypot(*tangent.T)
    S = _spectral.cumint(speed, P)
    L = speed.mean() * P
    target = np.arange(m) * (L / m)
    # invert S(p) = target by Newton on the trigonometric interpolant
    p = np.interp(target, S, np.arange(m) * (P / m))
    mean = speed.mean()
    S_per = S - mean * np.arange(m) * (P / m)

    def S_at(x):
        return _spectral.evaluate(S_per, x, P) + mean * x

    for _ in range(30):
        r = S_at(p) - target
        p = p - r / _spectral.evaluate(speed, p, P)
        if np.abs(r).max() < 1e-15 * max(L, 1.0):
            break
    X = _spectral.evaluate(xper, p, P) + np.outer(p, lift)
    gamma = _spectral.evaluate(state.sigma[:m], p, P) / _spectral.evaluate(speed, p, P)
    markers = None
    if state.markers is not None:
        mk = np.asarray(state.markers, dtype=float)
        markers = S_at(mk - state.eta[0])
    sys_ = _ArclengthSystem(state, None)
    return sys_.to_state(state.t, X, gamma, L, markers)


def _filter_arclength(state, level):
    if level is None:
        return state
    m = state.n - 1
    xper, lift = _periodic_part(state)
    s = np.arange(m) * (state.param_period / m)
    X = _spectral.filter_small(xper, level) + np.outer(s, lift)
    g = _spectral.filter_small(state.sigma[:m], level)
    # the filter leaves the mean mode untouched, so the total is unchanged
    sys_ = _ArclengthSystem(state, None)
    return sys_.to_state(state.t, X, g, state.param_period, state.markers)


def arclength_initial(state):
    """Arclength-parametrized copy of a closed or periodic sheet, remeshed
    spectrally onto a uniform grid of the same size; markers are mapped too."""
    if state.is_open:
        raise SheetError("the arclength scheme supports closed and periodic sheets")
    if not _uniform(state.eta):
        raise SheetError("arclength initialisation needs a uniform parameter grid")
    return remesh_arclength(state).replace(param_kind="arclength")


def sub_circulations(state, markers=None):
    """Circulation between consecutive markers (cyclically for closed and
    periodic sheets), computed from the trigonometric interpolant of sigma on
    uniform closed/periodic grids and by the trapezoid rule otherwise."""
    mk = state.markers if markers is None else np.asarray(markers, dtype=float)
    if mk is None or mk.size < 2:
        raise SheetError("at least two markers are needed")
    mk = np.sort(mk)
    if not state.is_open and _uniform(state.eta):
        m = state.n - 1
        P = state.param_period
        sig = state.sigma[:m]
        mean = sig.mean()
        C = _spectral.cumint(sig, P) - mean * np.arange(m) * (P / m)
        x = mk - state.eta[0]
        vals = _spectral.evaluate(C, x, P) + mean * x
        total = mean * P
        return np.diff(np.append(vals, vals[0] + total))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (state.sigma[1:] + state.sigma[:-1]) * np.diff(state.eta))])
    return np.diff(np.interp(mk, state.eta, cum))


# -- driver ----------------------------------------------------------------------------

def step(state, cfg, dt=None):
    """One RK4 step (plus filtering and, for the arclength scheme, the
    scheduled remesh is left to ``evolve``)."""
    dt = cfg.dt if dt is None else dt
    if cfg.scheme == "arclength":
        if state.param_kind != "arclength" or state.is_open:
            raise SheetError("arclength scheme needs a closed/periodic arclength state")
        _, new = _arclength_rk4(state, cfg, dt)
        return _filter_arclength(new, cfg.fourier_filter_level)
    if cfg.scheme == "circulation" and state.param_kind != "circulation":
        raise SheetError("circulation scheme needs a circulation-parametrized state")
    new = _material_step(state, cfg, dt)
    return _filter_positions(new, cfg.fourier_filter_level)


def _check_collision(state, cfg):
    seg = np.hypot(*np.diff(state.xi, axis=0).T).min()
    if min_nonadjacent_distance(state) < cfg.collision_fraction * seg:
        raise NumericalAbort("self_intersection", f"sheet self-approach at t = {state.t:.6g}")


@dataclass
class EvolutionResult:
    trajectory: SheetTrajectory
    diagnostics: dict


def evolve(state, cfg, progress=None):
    """Integrate from ``state`` to ``t_end``.

    The step count is ``round(t_end / dt)`` (at least one) and the step is
    adjusted to land on ``t_end``.  Every ``output_every``-th state is kept,
    together with the first and last.  Diagnostics record the total
    circulation history, filter usage, and the effective step.
    """
    if cfg.scheme == "arclength" and state.param_kind != "arclength":
        state = arclength_initial(state)
    n_steps = max(1, int(round(cfg.t_end / cfg.dt)))
    dt = cfg.t_end / n_steps
    t0 = state.t
    states = [state]
    gammas = [total_circulation(state)]
    cur = state
    for k in range(1, n_steps + 1):
        cur = step(cur, cfg, dt)
        cur = cur.replace(t=t0 + k * dt)
        if k % cfg.remesh_every == 0:
            if cfg.scheme == "arclength":
                cur = remesh_arclength(cur)
            _check_collision(cur, cfg)
        gammas.append(total_circulation(cur))
        if k % cfg.output_every == 0 or k == n_steps:
            states.append(cur)
        if progress is not None:
            progress(k, n_steps)
    g = np.array(gammas)
    diag = {
        "steps": n_steps,
        "dt_effective": dt,
        "filter_level": cfg.fourier_filter_level,
        "filter_applied": cfg.fourier_filter_level is not None and (
            not state.is_open or (_uniform(state.eta) and _flat_ends(state))),
        "circulation_initial": float(g[0]),
        "circulation_final": float(g[-1]),
        "circulation_max_drift": float(np.abs(g - g[0]).max()),
    }
    return EvolutionResult(SheetTrajectory(tuple(states)), diag)
