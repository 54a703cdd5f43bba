"""Biot-Savart kernel, the symmetrized test-function kernel, and velocity
quadratures on and off the sheet.

Velocities are accumulated in complex form: with ``z = x1 + i x2`` the kernel
``K(x) = x^perp / (2 pi |x|^2)`` satisfies ``K1 - i K2 = 1 / (2 pi i z)``, and
the periodic (period ``L`` along x) kernel is ``cot(pi z / L) / (2 i L)``.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import bernoulli, factorial

from . import _spectral
from .exceptions import SingularityError

SCHEMES = ("auto", "epsilon_cutoff", "alternate_point", "blob", "midpoint")


class SheetWarning(UserWarning):
    """Quadrature result that should be read with care (near self-approach,
    extrapolated endpoint, off-sheet point close to the sheet)."""


@dataclass(frozen=True)
class QuadratureSpec:
    """How principal-value integrals over the sheet are approximated.

    ``epsilon_cutoff`` evaluates the truncated integral over
    ``|xi(s) - xi(s')| >= eps`` with adaptive Gauss panels on a smooth
    interpolant and extrapolates in ``eps`` over ``richardson_levels``
    halvings (``1`` disables extrapolation).  ``alternate_point`` sums over
    nodes of opposite parity; ``midpoint`` samples the interpolant at cell
    midpoints; ``blob`` uses the kernel ``x^perp / (2 pi (|x|^2 + delta^2))``.
    ``auto`` picks alternate_point on uniform closed/periodic grids with an
    even node count and midpoint on other closed/periodic grids.  Open
    sheets get midpoint when the grid is uniform with flat ends (Chebyshev
    placement, where midpoint sampling is the Gauss-Chebyshev rule) and
    epsilon_cutoff otherwise.
    """

    scheme: str = "auto"
    epsilon: float = 0.05
    delta: float = 0.05
    refine_factor: int = 1
    richardson_levels: int = 6
    gauss_points: int = 16

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if self.scheme == "epsilon_cutoff" and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.scheme == "blob" and not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.refine_factor < 1 or self.richardson_levels < 1:
            raise ValueError("refine_factor and richardson_levels must be >= 1")

    def resolve(self, state):
        if self.scheme != "auto":
            return self.scheme
        if not state.is_open:
            if _uniform(state.eta) and (state.n - 1) % 2 == 0:
                return "alternate_point"
            return "midpoint"
        if _uniform(state.eta) and _flat_ends(state):
            return "midpoint"
        return "epsilon_cutoff"

    def to_dict(self):
        return {"scheme": self.scheme, "epsilon": self.epsilon, "delta": self.delta,
                "refine_factor": self.refine_factor,
                "richardson_levels": self.richardson_levels,
                "gauss_points": self.gauss_points}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _uniform(eta, rtol=1e-10):
    d = np.diff(eta)
    return np.ptp(d) <= rtol * d.mean()


# -- kernels ----------------------------------------------------------------

def biot_savart_kernel(x):
    """K(x) = x^perp / (2 pi |x|^2) with (x1, x2)^perp = (-x2, x1)."""
    x = np.asarray(x, dtype=float)
    r2 = np.einsum("...i,...i->...", x, x)
    if np.any(r2 == 0.0):
        raise SingularityError("Biot-Savart kernel evaluated at x = 0")
    perp = np.stack([-x[..., 1], x[..., 0]], axis=-1)
    return perp / (2.0 * np.pi * r2[..., None])


def _w_free(z):
    return 1.0 / (2j * np.pi * z)


def _w_blob(z, delta):
    return np.conj(z) / (2j * np.pi * (np.abs(z) ** 2 + delta**2))


def _w_periodic(z, period, delta=0.0):
    """Complex velocity of a row of unit vortices (blobs when delta > 0)."""
    a = 2.0 * np.pi * z.real / period
    b = 2.0 * np.pi * z.imag / period
    e = np.exp(-np.abs(b))
    den = (1.0 + e**2) - 2.0 * e * np.cos(a) + 2.0 * e * delta**2
    # callers mask the self-pairs, where den vanishes
    with np.errstate(divide="ignore", invalid="ignore"):
        u = -np.sign(b) * (1.0 - e**2) / (2.0 * period * den)
        v = 2.0 * e * np.sin(a) / (2.0 * period * den)
        return u - 1j * v


_COT_SERIES = None


def _w_periodic_minus_free(z, period):
    """Images-only part cot(pi z/L)/(2iL) - 1/(2 pi i z); smooth at z = 0."""
    global _COT_SERIES
    if _COT_SERIES is None:
        n = np.arange(1, 14)
        b = bernoulli(2 * n.max())[2 * n]
        _COT_SERIES = (n, (-1.0) ** n * 2.0 ** (2 * n) * b / factorial(2 * n))
    n, coef = _COT_SERIES
    x = np.pi * np.asarray(z, dtype=complex) / period
    small = np.abs(x) < 0.5
    out = np.empty_like(x)
    xs = x[small]
    # cot x - 1/x = sum_n coef_n x^(2n-1)
    series = np.zeros_like(xs)
    for k, c in zip(n, coef):
        series += c * xs ** (2 * k - 1)
    out[small] = series
    xl = x[~small]
    out[~small] = np.cos(xl) / np.sin(xl) - 1.0 / xl
    return out / (2j * period)


def h_phi(x, y, t, phi):
    """H_phi(x, y, t) = (grad phi(x, t) - grad phi(y, t)) / 2 . K(x - y).

    Returns NaN where x == y (the diagonal is excluded from quadratures).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r2 = np.einsum("...i,...i->...", d, d)
    diag = r2 == 0.0
    r2 = np.where(diag, 1.0, r2)
    dg = 0.5 * (phi.grad(x, t) - phi.grad(y, t))
    val = (dg[..., 1] * d[..., 0] - dg[..., 0] * d[..., 1]) / (2.0 * np.pi * r2)
    return np.where(diag, np.nan, val)


# -- interpolation of a sheet -------------------------------------------------

class SheetInterpolant:
    """Smooth interpolant of positions and density in the parameter.

    Uniform closed/periodic grids use trigonometric interpolation; other
    closed/periodic grids a periodic cubic spline.  Open sheets on a uniform
    grid whose position derivative vanishes at both ends (Chebyshev node
    placement, for instance) use the even-reflection cosine series, which is
    spectrally accurate there; remaining open sheets a not-a-knot cubic
    spline.  ``basis(eta)`` returns the matrix mapping the quadrature
    node densities to interpolated densities, so truncated integrals can be
    assembled as linear operators.
    """

    def __init__(self, state):
        self.state = state
        eta, xi, sigma, _ = state.quad_nodes()
        self.eta0 = float(state.eta[0])
        self.m = eta.size
        self.open = state.is_open
        self.period = state.period
        self.P = state.param_period if not self.open else None
        self.fourier = not self.open and _uniform(state.eta)
        self.cosine = self.open and _uniform(state.eta) and _flat_ends(state)
        self._xi_nodes = xi
        self._sigma = sigma
        self._lift = np.zeros(2)
        if state.topology == "periodic":
            self._lift = np.array([state.period / self.P, 0.0])
        if self.cosine:
            self.P = state.param_period
            self._xi_cos = _cosine_coefficients(state.xi)
            self._sigma_cos = _cosine_coefficients(state.sigma)
            self._xi_sigma_cos = np.column_stack([self._xi_cos, self._sigma_cos])
            self._basis_cos = None
        elif self.open:
            self._xi_spl = CubicSpline(state.eta, state.xi)
            self._basis_spl = CubicSpline(state.eta, np.eye(state.n))
        elif not self.fourier:
            ext = state.eta
            xi_per = state.xi - np.outer(ext - self.eta0, self._lift)
            self._xi_spl = CubicSpline(ext, xi_per, bc_type="periodic")
            eye = np.vstack([np.eye(self.m), np.eye(self.m)[:1]])
            self._basis_spl = CubicSpline(ext, eye, bc_type="periodic")
        else:
            self._xi_per = xi - np.outer(eta - self.eta0, self._lift)

    def _wrap(self, eta):
        if self.open:
            return np.asarray(eta, dtype=float)
        return self.eta0 + np.mod(np.asarray(eta, dtype=float) - self.eta0, self.P)

    def xi(self, eta, derivative=0):
        eta = np.asarray(eta, dtype=float)
        if self.cosine:
            return self._cos_eval(self._xi_cos, eta, derivative)
        if self.open:
            return self._xi_spl(eta, derivative)
        w = self._wrap(eta)
        if self.fourier:
            base = _spectral.evaluate(self._xi_per, w - self.eta0, self.P, derivative)
        else:
            base = self._xi_spl(w, derivative)
        if derivative == 0:
            return base + np.outer(eta - self.eta0, self._lift)
        if derivative == 1:
            return base + self._lift
        return base

    def _cos_eval(self, coef, eta, derivative=0):
        theta = np.pi * (np.asarray(eta, dtype=float) - self.eta0) / self.P
        k = np.arange(coef.shape[0])
        if derivative == 0:
            if theta.size > 64:
                out = np.polynomial.chebyshev.chebval(np.cos(theta), coef)
                return np.moveaxis(out, -1, 0)
            return np.tensordot(np.cos(np.outer(theta, k)), coef, axes=(1, 0))
        scale = np.pi / self.P
        if derivative == 1:
            mat = -np.sin(np.outer(theta, k)) * (k * scale)
        else:
            mat = -np.cos(np.outer(theta, k)) * (k * scale) ** 2
        return np.tensordot(mat, coef, axes=(1, 0))

    def basis(self, eta):
        if self.cosine:
            if self._basis_cos is None:
                self._basis_cos = _cosine_coefficients(np.eye(self.m))
            return self._cos_eval(self._basis_cos, eta)
        if self.open:
            return self._basis_spl(eta)
        w = self._wrap(eta)
        if self.fourier:
            return _spectral.evaluate(np.eye(self.m), w - self.eta0, self.P)
        return self._basis_spl(w)

    def xi_and(self, eta, density=True):
        """Positions together with densities (``density``) or the density
        basis, sharing one evaluation where the interpolant allows it."""
        if self.cosine and density:
            both = self._cos_eval(self._xi_sigma_cos, eta)
            return both[:, :2], both[:, 2]
        return self.xi(eta), (self.sigma(eta) if density else self.basis(eta))

    def sigma(self, eta):
        if self.cosine:
            return self._cos_eval(self._sigma_cos, eta)
        return self.basis(eta) @ self._sigma


def _flat_ends(state, rel=0.05):
    """True when the one-sided derivative of xi at both ends is small next to
    the typical chord rate."""
    h = state.eta[1] - state.eta[0]
    xi = state.xi
    d0 = (-3.0 * xi[0] + 4.0 * xi[1] - xi[2]) / (2.0 * h)
    d1 = (3.0 * xi[-1] - 4.0 * xi[-2] + xi[-3]) / (2.0 * h)
    rate = np.hypot(*np.diff(xi, axis=0).T).max() / h
    return bool(max(np.hypot(*d0), np.hypot(*d1)) <= rel * rate)


def _cosine_coefficients(f):
    """Coefficients a_k with f(eta_j) = sum_k a_k cos(pi j k / N), j = 0..N."""
    f = np.asarray(f, dtype=float)
    n = f.shape[0] - 1
    a = dct(f, type=1, axis=0) / n
    a[0] *= 0.5
    a[-1] *= 0.5
    return a


# -- point-to-sheet sums ------------------------------------------------------

def _sum_velocity(targets, sources, weights, period=None, delta=0.0, chunk=512):
    """sum_p W(target - source_p) weight_p for complex targets and sources,
    skipping exact coincidences.  Returns complex u - i v."""
    out = np.zeros(targets.shape, dtype=complex)
    for k in range(0, targets.size, chunk):
        z = targets[k:k + chunk, None] - sources[None, :]
        same = z == 0
        zs = np.where(same, 1.0, z)
        if period is not None:
            w = _w_periodic(zs, period, delta)
        elif delta > 0:
            w = _w_blob(zs, delta)
        else:
            w = _w_free(zs)
        w = np.where(same, 0.0, w)
        out[k:k + chunk] = w @ weights
    return out


def _as_complex(xy):
    xy = np.asarray(xy, dtype=float)
    return xy[..., 0] + 1j * xy[..., 1]


def _to_xy(w):
    return np.stack([w.real, -w.imag], axis=-1)


def _node_index(state, nodes):
    n_quad = state.n if state.is_open else state.n - 1
    if nodes is None:
        nodes = np.arange(state.n)
    nodes = np.atleast_1d(np.asarray(nodes, dtype=int))
    return nodes, np.where(nodes >= n_quad, nodes - n_quad, nodes)


def pv_velocity(state, q=None, nodes=None, return_info=False, check=True):
    """Principal-value sheet velocity at nodes (all nodes by default).

    Returns an (n, 2) array.  With ``return_info`` also returns a dict with the
    scheme used, the indices of extrapolated endpoint nodes and a
    ``near_self_approach`` flag (skipped, and reported False, when ``check``
    is off).
    """
    q = q or QuadratureSpec()
    scheme = q.resolve(state)
    nodes, qn = _node_index(state, nodes)
    info = {"scheme": scheme, "extrapolated": [], "near_self_approach": False}
    if scheme == "alternate_point":
        vel = _alternate_point(state, qn, q.refine_factor)
    elif scheme == "midpoint":
        vel = _midpoint(state, qn, q.refine_factor)
    elif scheme == "blob":
        vel = _blob(state, qn, q.delta, q.refine_factor)
    else:
        vel, conv = _epsilon_richardson(state, qn, q)
        info["converged"] = conv
    if state.is_open and scheme != "blob":
        ends = np.isin(qn, [0, state.n - 1])
        if np.any(ends):
            vel = vel.copy()
            for i in np.flatnonzero(ends):
                vel[i] = _extrapolate_endpoint(state, qn[i], q)
            info["extrapolated"] = nodes[ends].tolist()
    info["near_self_approach"] = bool(check) and _near_self_approach(state)
    if info["near_self_approach"]:
        warnings.warn("sheet approaches itself below the node spacing", SheetWarning)
    return (vel, info) if return_info else vel


def _extrapolate_endpoint(state, node, q):
    inner = [1, 2, 3] if node == 0 else [state.n - 2, state.n - 3, state.n - 4]
    sub = pv_velocity(state, q, nodes=inner, check=False)
    x = state.eta[inner]
    coef = np.polyfit(x - state.eta[node], sub, 2)
    return coef[-1]


def _near_self_approach(state):
    xi = state.quad_nodes()[1]
    if xi.shape[0] > 600:
        return False
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    d = np.sqrt(((xi[:, None, :] - xi[None, :, :]) ** 2).sum(-1))
    m = xi.shape[0]
    idx = np.arange(m)
    gap = np.abs(idx[:, None] - idx[None, :])
    if not state.is_open:
        gap = np.minimum(gap, m - gap)
    far = gap > 3
    if not np.any(far):
        return False
    return bool(d[far].min() < 0.5 * seg.min())


def _alternate_point(state, qn, refine):
    if state.is_open:
        raise ValueError("alternate_point needs a closed or periodic sheet")
    eta, xi, sigma, w = state.quad_nodes()
    m = eta.size
    if not _uniform(state.eta) or (m * refine) % 2:
        raise ValueError("alternate_point needs a uniform grid with an even node count")
    period = state.period if state.topology == "periodic" else None
    if refine > 1:
        interp = SheetInterpolant(state)
        fine = state.eta[0] + np.arange(m * refine) * (state.param_period / (m * refine))
        src = _as_complex(interp.xi(fine))
        wts = interp.sigma(fine) * (state.param_period / (m * refine))
    else:
        src = _as_complex(xi)
        wts = sigma * w
    mf = src.size
    targets = _as_complex(xi[qn])
    out = np.empty(qn.size, dtype=complex)
    cols = np.arange(mf)
    for k in range(0, qn.size, 256):
        rows = qn[k:k + 256] * refine
        odd = (cols[None, :] - rows[:, None]) % 2 == 1
        z = targets[k:k + 256, None] - src[None, :]
        z = np.where(odd, z, 1.0)
        w = _w_periodic(z, period) if period is not None else _w_free(z)
        out[k:k + 256] = np.where(odd, w, 0.0) @ (2.0 * wts)
    return _to_xy(out)


def _midpoint(state, qn, refine):
    interp = SheetInterpolant(state)
    edges = state.eta
    if refine > 1:
        edges = np.concatenate([np.linspace(a, b, refine + 1)[:-1] for a, b in zip(edges[:-1], edges[1:])] + [edges[-1:]])
    mids = 0.5 * (edges[1:] + edges[:-1])
    wts = interp.sigma(mids) * np.diff(edges)
    src = _as_complex(interp.xi(mids))
    period = state.period if state.topology == "periodic" else None
    targets = _as_complex(state.quad_nodes()[1][qn])
    return _to_xy(_sum_velocity(targets, src, wts, period))


def _blob(state, qn, delta, refine):
    eta, xi, sigma, w = state.quad_nodes()
    if refine > 1:
        interp = SheetInterpolant(state)
        n_int = (state.n - 1) * refine
        fine = np.linspace(state.eta[0], state.eta[-1], n_int + 1)
        fs = state.replace(eta=fine, xi=interp.xi(fine), sigma=interp.sigma(fine), markers=None)
        _, fxi, fsig, fw = fs.quad_nodes()
    else:
        fxi, fsig, fw = xi, sigma, w
    period = state.period if state.topology == "periodic" else None
    return _to_xy(_sum_velocity(_as_complex(xi[qn]), _as_complex(fxi), fsig * fw, period, delta))


# -- truncated integrals --------------------------------------------------------

def _gauss(npts):
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


class _Truncation:
    """Quadrature of the integral over {eta : |xi(eta) - xi_k| >= eps}."""

    def __init__(self, state, gauss_points=16):
        self.state = state
        self.interp = SheetInterpolant(state)
        self.gx, self.gw = _gauss(gauss_points)
        self.open = state.is_open
        self.periodic = state.topology == "periodic"
        if self.open:
            self.grid = state.eta
        else:
            P = state.param_period
            self.grid = np.concatenate([state.eta[:-1] - P, state.eta[:-1], state.eta[:-1] + P, state.eta[-1:] + P])
        self.grid_xi = self.interp.xi(self.grid)
        self._grid_cache = {}

    def _grid_values(self, density):
        """Interpolant on the Gauss points of every grid panel, computed once;
        far-field panels between consecutive grid points are shared by all
        target nodes."""
        if density not in self._grid_cache:
            a, b = self.grid[:-1, None], self.grid[1:, None]
            pts = (a + (b - a) * self.gx[None, :]).ravel()
            self._grid_cache[density] = self.interp.xi_and(pts, density)
        return self._grid_cache[density]

    def _far_values(self, panels, density):
        """Points, weights, positions and densities on ``panels``, reusing the
        grid-panel cache where a panel is exactly one grid interval."""
        panels = np.asarray(panels).reshape(-1, 2)
        g = self.gx.size
        i = np.clip(np.searchsorted(self.grid, panels[:, 0]), 0, self.grid.size - 2)
        std = (self.grid[i] == panels[:, 0]) & (self.grid[i + 1] == panels[:, 1])
        pts, wts = self._gauss_on(panels)
        cxi, cdens = self._grid_values(density)
        rows = (i[:, None] * g + np.arange(g)[None, :]).ravel()
        mask = np.repeat(std, g)
        pos = np.empty((pts.size, 2))
        dens = np.empty((pts.size,) + cdens.shape[1:])
        pos[mask], dens[mask] = cxi[rows[mask]], cdens[rows[mask]]
        if not mask.all():
            pos[~mask], dens[~mask] = self.interp.xi_and(pts[~mask], density)
        return pts, wts, pos, dens

    def _crossing(self, k_eta, xk, eps, direction, limit):
        """First parameter from k_eta toward ``limit`` where the distance to xk
        reaches eps; None if it never does before ``limit``."""
        grid = self.grid
        if direction > 0:
            idx = np.flatnonzero((grid > k_eta) & (grid <= limit))
        else:
            idx = np.flatnonzero((grid < k_eta) & (grid >= limit))[::-1]
        prev = k_eta
        for j in idx:
            if np.hypot(*(self.grid_xi[j] - xk)) >= eps:
                f = lambda e: np.hypot(*(self.interp.xi(np.array([e]))[0] - xk)) - eps
                return brentq(f, prev, grid[j], xtol=1e-15 * max(1.0, abs(grid[j])), rtol=1e-15)
            prev = grid[j]
        if np.hypot(*(self.interp.xi(np.array([limit]))[0] - xk)) >= eps:
            f = lambda e: np.hypot(*(self.interp.xi(np.array([e]))[0] - xk)) - eps
            return brentq(f, prev, limit, xtol=1e-15, rtol=1e-15)
        return None

    def _panels(self, k_eta, start, stop):
        """Panels on [start, stop] graded geometrically away from k_eta, which
        lies outside the interval."""
        if stop <= start:
            return np.empty((0, 2))
        sign = 1.0 if start > k_eta else -1.0
        near, far = (start, stop) if sign > 0 else (stop, start)
        gap = abs(near - k_eta)
        inner = self.grid[(self.grid > min(start, stop)) & (self.grid < max(start, stop))]
        h = np.max(np.diff(self.grid)) if self.grid.size > 1 else abs(stop - start)
        cuts = [near]
        dist = gap
        if dist <= 0.0:
            raise ValueError("cutoff must be positive")
        while dist < h and abs(dist * 2.0) < abs(far - k_eta):
            dist *= 2.0
            cuts.append(k_eta + sign * dist)
        reach = k_eta + sign * dist
        cuts.extend(p for p in inner if (p - reach) * sign > 0)
        cuts.append(far)
        cuts = np.unique(np.array(cuts))
        return np.column_stack([cuts[:-1], cuts[1:]])

    def _gauss_on(self, panels):
        if len(panels) == 0:
            return np.empty(0), np.empty(0)
        panels = np.asarray(panels)
        a, b = panels[:, :1], panels[:, 1:]
        return (a + (b - a) * self.gx[None, :]).ravel(), ((b - a) * self.gw[None, :]).ravel()

    def _graded(self, k_eta, near, far):
        """Panels between two points on the same side of k_eta, halving in
        width toward the nearer one."""
        sign = 1.0 if far > k_eta else -1.0
        d_near, d_far = abs(near - k_eta), abs(far - k_eta)
        if d_far <= d_near:
            return np.empty((0, 2))
        cuts = [d_near]
        while cuts[-1] * 2.0 < d_far:
            cuts.append(cuts[-1] * 2.0)
        cuts.append(d_far)
        cuts = k_eta + sign * np.array(cuts)
        return np.sort(np.column_stack([cuts[:-1], cuts[1:]]), axis=1)

    def _limits(self, k_eta):
        if self.open:
            return self.state.eta[0], self.state.eta[-1]
        half = 0.5 * self.state.param_period
        return k_eta - half, k_eta + half

    def _point_sets(self, k_eta, eps_list):
        """Per cutoff: (near part, shared far part, inner part or None).

        Each side is split at the crossing of the largest cutoff; beyond it the
        panels follow the grid (graded toward the split) and are shared by all
        cutoffs, and each cutoff adds graded panels up to the split.
        """
        xk = self.interp.xi(np.array([k_eta]))[0]
        lo_lim, hi_lim = self._limits(k_eta)
        order = np.argsort(eps_list)[::-1]
        eps_max = eps_list[order[0]]
        far_panels = []
        split = {}
        for direction, limit in ((+1, hi_lim), (-1, lo_lim)):
            c0 = self._crossing(k_eta, xk, eps_max, direction, limit)
            split[direction] = c0
            if c0 is not None:
                a, b = (c0, limit) if direction > 0 else (limit, c0)
                far_panels.append(self._panels(k_eta, a, b))
        far = np.concatenate(far_panels) if far_panels else np.empty((0, 2))
        out = []
        for eps in eps_list:
            near_panels = []
            ends = {}
            for direction, limit in ((+1, hi_lim), (-1, lo_lim)):
                c0 = split[direction]
                if c0 is None:
                    cj = self._crossing(k_eta, xk, eps, direction, limit)
                    if cj is not None:
                        # only the smaller cutoffs reach past the split-free side
                        near_panels.append(self._graded(k_eta, cj, limit))
                    ends[direction] = cj
                    continue
                cj = c0 if eps == eps_max else self._crossing(k_eta, xk, eps, direction, c0)
                if cj is None:
                    cj = c0
                near_panels.append(self._graded(k_eta, cj, c0))
                ends[direction] = cj
            near = self._gauss_on(np.concatenate(near_panels)) if near_panels else self._gauss_on([])
            inner = None
            if self.periodic:
                lo = ends[-1] if ends[-1] is not None else lo_lim
                hi = ends[+1] if ends[+1] is not None else hi_lim
                inner = self._gauss_on([[lo, k_eta], [k_eta, hi]])
            out.append((near, far, inner))
        return xk, out

    def rows(self, k_eta, eps, density=False):
        """Operator rows (2, m): velocity components per unit nodal density.
        With ``density`` the state's own density is applied instead and a
        velocity (2,) is returned."""
        return self.batch(k_eta, [eps], density)[0]

    def batch(self, k_eta, eps_list, density=False):
        """``rows`` for several cutoffs at one node, evaluating the
        interpolant once on the union of quadrature points."""
        xk, sets = self._point_sets(k_eta, list(eps_list))
        far_pts, far_w, far_xi, far_dens = self._far_values(sets[0][1], density)
        chunks = [(far_pts, far_w)] + [p for near, _, inner in sets
                                       for p in ((near,) if inner is None else (near, inner))]
        rest = np.concatenate([c[0] for c in chunks[1:]])
        rest_xi, rest_dens = self.interp.xi_and(rest, density)
        pos_xi = np.concatenate([far_xi, rest_xi])
        dens = np.concatenate([far_dens, rest_dens])
        z = xk[0] + 1j * xk[1] - _as_complex(pos_xi)
        kern = _w_periodic if self.periodic else (lambda zz, _: _w_free(zz))
        bounds = np.cumsum([0] + [c[0].size for c in chunks])

        def integrate(idx, inner=False):
            sl = slice(bounds[idx], bounds[idx + 1])
            w = _w_periodic_minus_free(z[sl], self.state.period) if inner else kern(z[sl], self.state.period)
            return (w * chunks[idx][1]) @ dens[sl]

        far_val = integrate(0)
        out = []
        idx = 1
        for near, _, inner in sets:
            val = far_val + integrate(idx)
            idx += 1
            if inner is not None:
                val = val + integrate(idx, inner=True)
                idx += 1
            out.append(np.stack([val.real, -val.imag]))
        return out


def _node_eta(state, qn):
    return state.quad_nodes()[0][qn]


def _eps_base(state, qn, eps):
    """Per-node base cutoff: eps, capped at a quarter of the distance to the
    nearest endpoint of an open sheet."""
    xi = state.quad_nodes()[1][qn]
    if not state.is_open:
        return np.full(qn.size, eps)
    d = np.minimum(np.hypot(*(xi - state.xi[0]).T), np.hypot(*(xi - state.xi[-1]).T))
    return np.minimum(eps, 0.25 * d)


def truncated_velocity(state, eps, nodes=None, gauss_points=16):
    """sum over {|xi(s) - xi(s')| >= eps} of K(xi(s) - xi(s')) sigma(s') ds'
    at nodes; ``eps`` is a scalar or one value per node."""
    nodes, qn = _node_index(state, nodes)
    tr = _Truncation(state, gauss_points)
    eps = np.broadcast_to(np.asarray(eps, dtype=float), qn.shape)
    etas = _node_eta(state, qn)
    out = np.zeros((qn.size, 2))
    for i, (k_eta, e) in enumerate(zip(etas, eps)):
        out[i] = tr.rows(k_eta, e, density=True)
    return out


def _richardson(values, ratio=2.0):
    """Neville extrapolation to h = 0 of values at h = ratio^-j.  Returns the
    extrapolated value and the last tableau correction."""
    t = [np.asarray(v, dtype=float) for v in values]
    last_corr = np.zeros_like(t[0])
    table = list(t)
    for order in range(1, len(t)):
        fac = ratio**order
        new = []
        for j in range(len(table) - 1):
            new.append(table[j + 1] + (table[j + 1] - table[j]) / (fac - 1.0))
        last_corr = new[-1] - table[-1]
        table = new
    return table[-1], last_corr


def _epsilon_richardson(state, qn, q):
    tr = _Truncation(state, q.gauss_points)
    base = _eps_base(state, qn, q.epsilon)
    etas = _node_eta(state, qn)
    out = np.zeros((qn.size, 2))
    converged = np.ones(qn.size, dtype=bool)
    for i, (k_eta, e0) in enumerate(zip(etas, base)):
        if e0 <= 0.0:
            # open-sheet tip; replaced by extrapolation in pv_velocity
            out[i] = np.nan
            continue
        vals = tr.batch(k_eta, [e0 * 0.5**j for j in range(q.richardson_levels)], density=True)
        if len(vals) == 1:
            out[i] = vals[0]
            continue
        out[i], corr = _richardson(vals)
        scale = max(1.0, float(np.abs(vals[-1]).max()))
        converged[i] = float(np.abs(corr).max()) <= 1e-3 * scale
    return out, converged


def maximal_operator(state, eps_grid, q=None, sigma=None):
    """U*(s) = sup over eps in eps_grid (and the eps -> 0 limit) of the
    magnitude of the truncated integral, at every quadrature node.

    ``sigma`` optionally replaces the state's nodal densities (quadrature
    nodes); many densities may be passed as an (m, k) array, which reuses the
    assembled operator.
    """
    eps_grid = np.asarray(eps_grid, dtype=float)
    if eps_grid.size == 0 or np.any(eps_grid <= 0):
        raise ValueError("eps_grid must contain positive cutoffs")
    ops = truncated_operator(state, eps_grid)
    pv_op = pv_operator(state, q)
    sig = state.quad_nodes()[2] if sigma is None else np.asarray(sigma, dtype=float)
    vals = np.einsum("nekm,m...->ne...k", ops, sig) if sig.ndim == 2 else np.einsum("nekm,m->nek", ops, sig)
    mags = np.sqrt((vals**2).sum(axis=-1))
    pv = np.einsum("nkm,m...->n...k", pv_op, sig)
    pv_mag = np.sqrt((pv**2).sum(axis=-1))
    return np.maximum(mags.max(axis=1), pv_mag)


def truncated_operator(state, eps_grid, gauss_points=16):
    """Array (m, len(eps_grid), 2, m): truncated velocity at each quadrature
    node per unit nodal density."""
    tr = _Truncation(state, gauss_points)
    etas = state.quad_nodes()[0]
    out = np.zeros((etas.size, len(eps_grid), 2, etas.size))
    for i, k_eta in enumerate(etas):
        for j, e in enumerate(eps_grid):
            out[i, j] = tr.rows(k_eta, e)
    return out


def pv_operator(state, q=None):
    """Array (m, 2, m) with the principal-value velocity per unit nodal
    density, obtained by applying ``pv_velocity`` to unit densities."""
    eta, _, sigma, _ = state.quad_nodes()
    m = eta.size
    out = np.zeros((m, 2, m))
    for j in range(m):
        unit = np.zeros(state.n)
        unit[j] = 1.0
        if not state.is_open and j == 0:
            unit[-1] = 1.0
        st = state.replace(sigma=unit, param_kind="lagrangian", markers=None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SheetWarning)
            v = pv_velocity(st, q)
        out[:, :, j] = v[:m]
    return out


def velocity_off_sheet(state, x, q=None):
    """Biot-Savart velocity at points off the sheet (plain trapezoid in the
    parameter, oversampled through the interpolant when refine_factor > 1)."""
    q = q or QuadratureSpec()
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if q.refine_factor > 1:
        interp = SheetInterpolant(state)
        n_int = (state.n - 1) * q.refine_factor
        fine = np.linspace(state.eta[0], state.eta[-1], n_int + 1) if _uniform(state.eta) else \
            np.concatenate([np.linspace(a, b, q.refine_factor + 1)[:-1] for a, b in zip(state.eta[:-1], state.eta[1:])] + [state.eta[-1:]])
        src_state = state.replace(eta=fine, xi=interp.xi(fine), sigma=interp.sigma(fine), markers=None, param_kind="lagrangian")
    else:
        src_state = state
    _, xi, sigma, w = src_state.quad_nodes()
    seg = np.hypot(*np.diff(src_state.xi, axis=0).T).max()
    if state.topology == "periodic":
        dx = np.mod(x[:, None, 0] - xi[None, :, 0] + 0.5 * state.period, state.period) - 0.5 * state.period
        dist = np.hypot(dx, x[:, None, 1] - xi[None, :, 1]).min()
    else:
        dist = np.sqrt(((x[:, None, :] - xi[None, :, :]) ** 2).sum(-1)).min()
    if dist == 0.0:
        raise SingularityError("off-sheet velocity requested on a sheet node")
    if dist < seg:
        warnings.warn("point within one node spacing of the sheet", SheetWarning)
    period = state.period if state.topology == "periodic" else None
    return _to_xy(_sum_velocity(_as_complex(x), _as_complex(xi), sigma * w, period))
