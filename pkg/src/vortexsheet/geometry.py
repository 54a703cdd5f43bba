"""Polyline geometry of sheets: arclength, reparametrization and the
regular-curve diagnostics (length of the curve inside disks)."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .exceptions import DegenerateSegmentError

ARCLENGTH_TOL = 1e-6


def arclength_table(state):
    """Cumulative polyline length at every node, starting from 0."""
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    if np.any(seg == 0.0):
        raise DegenerateSegmentError("repeated consecutive nodes")
    return np.concatenate([[0.0], np.cumsum(seg)])


def arclength_defect(state):
    """Largest deviation of |d xi| / d eta from 1 over all segments."""
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    return float(np.max(np.abs(seg / np.diff(state.eta) - 1.0)))


def density_wrt_arclength(state):
    """Nodal gamma = sigma / (ds/deta), with ds/deta from the adjacent chords."""
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    rate = seg / np.diff(state.eta)
    dsdeta = np.empty(state.n)
    dsdeta[1:-1] = 0.5 * (rate[:-1] + rate[1:])
    if state.is_open:
        dsdeta[0], dsdeta[-1] = rate[0], rate[-1]
    else:
        dsdeta[0] = dsdeta[-1] = 0.5 * (rate[0] + rate[-1])
    return state.sigma / dsdeta


def total_measure(state):
    """Trapezoid rule for the integral of sigma over eta."""
    _, _, sigma, w = state.quad_nodes()
    return float(np.dot(w, sigma))


def reparametrize_arclength(state, n_out):
    """Resample the polyline at ``n_out`` nodes equally spaced in arclength.

    The new parameter is the cumulative chord length of the output polyline,
    so every output segment has |d xi| / d eta = 1.  The density is the
    arclength density gamma interpolated along the curve, shifted by a
    constant so the total circulation is preserved to rounding.
    """
    if n_out < 3:
        raise ValueError("n_out must be at least 3")
    s = arclength_table(state)
    gamma = density_wrt_arclength(state)
    s_new = np.linspace(0.0, s[-1], n_out)
    xi_new = np.column_stack([np.interp(s_new, s, state.xi[:, 0]),
                              np.interp(s_new, s, state.xi[:, 1])])
    if not state.is_open:
        xi_new[-1] = state.xi[-1]
    chords = np.hypot(*np.diff(xi_new, axis=0).T)
    eta_new = np.concatenate([[0.0], np.cumsum(chords)])
    sigma_new = np.interp(s_new, s, gamma)
    if state.topology == "periodic":
        sigma_new[-1] = sigma_new[0]
    out = state.replace(eta=eta_new, xi=xi_new, sigma=sigma_new,
                        param_kind="arclength", markers=None)
    target = total_measure(state)
    _, _, _, w = out.quad_nodes()
    shift = (target - total_measure(out)) / w.sum()
    return out.replace(sigma=sigma_new + shift)


def _segments(state, center=None, reach=None):
    """Segment start points and direction vectors; periodic sheets include the
    images that can reach a disk of radius ``reach`` around ``center``."""
    p = state.xi[:-1]
    d = np.diff(state.xi, axis=0)
    if state.topology != "periodic" or center is None:
        return p, d
    lo = np.min(state.xi[:, 0])
    hi = np.max(state.xi[:, 0])
    n_lo = int(np.floor((center[0] - reach - hi) / state.period))
    n_hi = int(np.ceil((center[0] + reach - lo) / state.period))
    shifts = np.arange(n_lo, n_hi + 1) * state.period
    ps = np.concatenate([p + np.array([sh, 0.0]) for sh in shifts])
    return ps, np.tile(d, (shifts.size, 1))


def _clipped_lengths(p, d, center, radii):
    """Length of each segment inside closed disks; shape (len(radii), n_seg)."""
    radii = np.atleast_1d(radii)[:, None]
    f = p - np.asarray(center, dtype=float)
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", f, d)
    c = np.einsum("ij,ij->i", f, f)
    disc = b**2 - a * (c - radii**2)
    root = np.sqrt(np.maximum(disc, 0.0))
    t0 = np.clip((-b - root) / a, 0.0, 1.0)
    t1 = np.clip((-b + root) / a, 0.0, 1.0)
    frac = np.where(disc > 0.0, t1 - t0, 0.0)
    return frac * np.sqrt(a)


def curve_length_in_disk(state, center, r):
    """Length of the polyline inside the closed disk of radius ``r``."""
    if r <= 0:
        raise ValueError("radius must be positive")
    p, d = _segments(state, center, r)
    return float(_clipped_lengths(p, d, center, [r]).sum())


@dataclass
class RegularityReport:
    A_estimate: float
    r_grid: np.ndarray
    centers_sampled: int
    worst_case: tuple
    l2_gamma: float
    l1_gamma: float
    ratios: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        return {
            "A_estimate": self.A_estimate,
            "r_grid": np.asarray(self.r_grid).tolist(),
            "centers_sampled": self.centers_sampled,
            "worst_case": {"center": list(map(float, self.worst_case[0])),
                           "radius": float(self.worst_case[1])},
            "l2_gamma": self.l2_gamma,
            "l1_gamma": self.l1_gamma,
        }


def curve_diameter(state):
    pts = state.xi
    try:
        pts = pts[ConvexHull(pts).vertices]
    except (QhullError, ValueError):
        pass
    diff = pts[:, None, :] - pts[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def default_centers(state, lattice=32, inflate=1.5):
    """Curve nodes, a ``lattice`` x ``lattice`` grid over the inflated bounding
    box, and the bounding-box centre."""
    lo = state.xi.min(axis=0)
    hi = state.xi.max(axis=0)
    mid = 0.5 * (lo + hi)
    half = 0.5 * inflate * np.maximum(hi - lo, 1e-12)
    gx = np.linspace(mid[0] - half[0], mid[0] + half[0], lattice)
    gy = np.linspace(mid[1] - half[1], mid[1] + half[1], lattice)
    grid = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    return np.concatenate([state.xi, grid, mid[None, :]])


def default_r_grid(state, n=24):
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    return np.geomspace(seg.min(), curve_diameter(state), n)


def lp_norm(state, p):
    """L^p(ds) norm of the arclength density.

    Uses the midpoint rule in the parameter: |gamma|^p ds equals
    |sigma|^p (ds/deta)^(1-p) deta, evaluated at segment midpoints so that
    endpoint nodes where ds/deta vanishes are never sampled.
    """
    seg = np.hypot(*np.diff(state.xi, axis=0).T)
    deta = np.diff(state.eta)
    rate = seg / deta
    sig = 0.5 * (state.sigma[1:] + state.sigma[:-1])
    integral = np.sum(np.abs(sig) ** p * rate ** (1.0 - p) * deta)
    return float(integral ** (1.0 / p))


def estimate_regularity_constant(state, r_grid=None, centers=None):
    """Lower estimate of the regular-curve constant A = sup |C n D_r| / r.

    Besides ``r_grid``, each centre is also tested at the radius that just
    contains every node (the whole curve), which is where closed curves
    attain their ratio.
    """
    if r_grid is None:
        r_grid = default_r_grid(state)
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size == 0 or np.any(r_grid <= 0):
        raise ValueError("r_grid must be a nonempty set of positive radii")
    if centers is None:
        centers = default_centers(state)
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    best = (-np.inf, None, None)
    ratios = np.empty((centers.shape[0], r_grid.size + 1))
    for i, c in enumerate(centers):
        radii = r_grid
        if state.topology != "periodic":
            rmax = np.sqrt(((state.xi - c) ** 2).sum(-1)).max()
            radii = np.append(r_grid, rmax)
        else:
            radii = np.append(r_grid, r_grid[-1])
        p, d = _segments(state, c, radii.max())
        lengths = _clipped_lengths(p, d, c, radii).sum(axis=1)
        ratio = lengths / radii
        ratios[i] = ratio
        j = int(np.argmax(ratio))
        if ratio[j] > best[0]:
            best = (float(ratio[j]), c.copy(), float(radii[j]))
    return RegularityReport(
        A_estimate=best[0],
        r_grid=r_grid,
        centers_sampled=centers.shape[0],
        worst_case=(best[1], best[2]),
        l2_gamma=lp_norm(state, 2.0),
        l1_gamma=lp_norm(state, 1.0),
        ratios=ratios,
    )


def hausdorff_distance(a, b):
    """Symmetric Hausdorff distance between two polylines (nodes of each
    against segments of the other)."""
    return max(_directed(a.xi, b.xi), _directed(b.xi, a.xi))


def _directed(pts, poly):
    p = poly[:-1]
    d = np.diff(poly, axis=0)
    dd = np.einsum("ij,ij->i", d, d)
    best = np.empty(pts.shape[0])
    for k in range(0, pts.shape[0], 256):
        q = pts[k:k + 256]
        f = q[:, None, :] - p[None, :, :]
        t = np.clip(np.einsum("kij,ij->ki", f, d) / dd, 0.0, 1.0)
        near = p[None, :, :] + t[..., None] * d[None, :, :]
        best[k:k + 256] = np.sqrt(((q[:, None, :] - near) ** 2).sum(-1)).min(axis=1)
    return float(best.max())


def min_nonadjacent_distance(state):
    """Smallest distance between segments that share no node (segment-pair
    sweep); ``inf`` when there are none."""
    p = state.xi[:-1]
    q = state.xi[1:]
    m = p.shape[0]
    closed = not state.is_open
    best = np.inf
    for i in range(m):
        j = np.arange(i + 2, m)
        if closed and i == 0:
            j = j[j != m - 1]
        if j.size == 0:
            continue
        best = min(best, float(_seg_seg_distance(p[i], q[i], p[j], q[j]).min()))
    return best


def _seg_seg_distance(a0, a1, b0, b1):
    # distances between segment a and segments b; exact unless they cross
    def point_seg(x, s0, s1):
        d = s1 - s0
        t = np.clip(np.einsum("...j,...j->...", x - s0, d) / np.einsum("...j,...j->...", d, d), 0, 1)
        return np.hypot(*(x - s0 - t[..., None] * d).T)

    dist = np.minimum.reduce([
        point_seg(a0[None, :], b0, b1),
        point_seg(a1[None, :], b0, b1),
        point_seg(b0, a0[None, :], a1[None, :]),
        point_seg(b1, a0[None, :], a1[None, :]),
    ])
    cross = _segments_cross(a0, a1, b0, b1)
    return np.where(cross, 0.0, dist)


def _segments_cross(a0, a1, b0, b1):
    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    o1 = orient(a0, a1, b0)
    o2 = orient(a0, a1, b1)
    o3 = orient(b0, b1, a0[None, :])
    o4 = orient(b0, b1, a1[None, :])
    # orientations at roundoff level (collinear pieces) do not count as crossings
    la = np.hypot(*(a1 - a0))
    lb = np.hypot(*(b1 - b0).T)
    tol = 1e-12 * la * lb
    return (o1 * o2 < -tol**2) & (o3 * o4 < -tol**2) & (np.abs(o1) > tol) & (np.abs(o2) > tol) \
        & (np.abs(o3) > tol) & (np.abs(o4) > tol)
