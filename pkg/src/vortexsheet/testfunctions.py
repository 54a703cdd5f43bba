"""Compactly supported space-time test functions with exact derivatives.

A test function is ``phi(x, t) = g(t) * psi(x)`` where ``psi`` is supported
in the closed disk of radius ``radius`` around ``center`` and ``g`` is
supported in ``[t_start, t_stop]`` (``t_start`` may be negative so that
``phi(., 0)`` is nonzero).
"""

from dataclasses import dataclass, field

import numpy as np

SPATIAL_KINDS = ("gaussian_bump_truncated", "polynomial_bump", "linear_core")
TIME_KINDS = ("bump", "plateau", "constant")


def _bump(u):
    """exp(-1/u) for u > 0 and 0 otherwise, with its first two derivatives."""
    u = np.asarray(u, dtype=float)
    pos = u > 0
    us = np.where(pos, u, 1.0)
    f = np.where(pos, np.exp(-1.0 / us), 0.0)
    f1 = np.where(pos, f / us**2, 0.0)
    f2 = np.where(pos, f * (1.0 / us**4 - 2.0 / us**3), 0.0)
    return f, f1, f2


def _smoothstep(v):
    """C-infinity step: 0 for v <= 0, 1 for v >= 1, with two derivatives."""
    a, a1, a2 = _bump(v)
    b, b1, b2 = _bump(1.0 - v)
    b1, b2 = -b1, b2
    s = a + b
    s = np.where(s > 0, s, 1.0)
    f = a / s
    num1 = a1 * b - a * b1
    f1 = num1 / s**2
    f2 = ((a2 * b - a * b2) * s - 2.0 * num1 * (a1 + b1)) / s**3
    v = np.asarray(v, dtype=float)
    f = np.where(v >= 1, 1.0, np.where(v <= 0, 0.0, f))
    f1 = np.where((v >= 1) | (v <= 0), 0.0, f1)
    f2 = np.where((v >= 1) | (v <= 0), 0.0, f2)
    return f, f1, f2


def _profile(kind, u, core):
    """Radial profile q(u) of u = |x - c|^2 / R^2 and its u-derivatives."""
    u = np.asarray(u, dtype=float)
    inside = u < 1.0
    if kind == "gaussian_bump_truncated":
        us = np.where(inside, u, 0.0)
        om = 1.0 - us
        q = np.where(inside, np.exp(-us / om), 0.0)
        q1 = np.where(inside, -q / om**2, 0.0)
        q2 = np.where(inside, q * (1.0 / om**4 - 2.0 / om**3), 0.0)
        return q, q1, q2
    if kind == "polynomial_bump":
        om = np.where(inside, 1.0 - u, 0.0)
        return om**4, -4.0 * om**3, 12.0 * om**2
    if kind == "linear_core":
        u0 = core**2
        f, f1, f2 = _smoothstep((1.0 - u) / (1.0 - u0))
        return f, -f1 / (1.0 - u0), f2 / (1.0 - u0) ** 2
    raise ValueError(f"unknown spatial kind {kind!r}")


@dataclass(frozen=True)
class TestFunction:
    """phi(x, t) = g(t) * (offset + slope . (x - center)) * q(|x - center|^2 / radius^2).

    ``slope`` and ``offset`` only matter for ``linear_core``, whose profile is
    identically 1 for |x - center| <= core * radius, making phi exactly affine
    there.  The other kinds use offset 1 and slope 0.
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple
    radius: float
    time_kind: str = "bump"
    t_start: float = -1.0
    t_stop: float = 1.0
    t_flat: float = 0.0
    slope: tuple = (0.0, 0.0)
    offset: float = 1.0
    core: float = 0.5
    id: str = ""
    _hess_bound: float = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in SPATIAL_KINDS:
            raise ValueError(f"unknown spatial kind {self.kind!r}")
        if self.time_kind not in TIME_KINDS:
            raise ValueError(f"unknown time profile {self.time_kind!r}")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(map(float, self.center)))
        object.__setattr__(self, "slope", tuple(map(float, self.slope)))

    # -- time profile --------------------------------------------------

    def time_profile(self, t):
        """g(t) and g'(t)."""
        t = np.asarray(t, dtype=float)
        if self.time_kind == "constant":
            return np.ones_like(t), np.zeros_like(t)
        if self.time_kind == "plateau":
            width = self.t_stop - self.t_flat
            f, f1, _ = _smoothstep((self.t_stop - t) / width)
            return f, -f1 / width
        # smooth bump exp(1 - 1/(1 - tau^2)) on |tau| < 1
        mid = 0.5 * (self.t_start + self.t_stop)
        half = 0.5 * (self.t_stop - self.t_start)
        tau = (t - mid) / half
        inside = np.abs(tau) < 1.0
        ts = np.where(inside, tau, 0.0)
        om = 1.0 - ts**2
        g = np.where(inside, np.exp(1.0 - 1.0 / om), 0.0)
        dg = np.where(inside, g * (-2.0 * ts / om**2) / half, 0.0)
        return g, dg

    @property
    def support_end(self):
        return np.inf if self.time_kind == "constant" else self.t_stop

    # -- spatial part --------------------------------------------------

    def _spatial(self, x):
        x = np.asarray(x, dtype=float)
        c = np.asarray(self.center)
        d = x - c
        r2 = self.radius**2
        u = np.einsum("...i,...i->...", d, d) / r2
        q, q1, q2 = _profile(self.kind, u, self.core)
        if self.kind == "linear_core":
            a = np.asarray(self.slope)
            lin = self.offset + d @ a
        else:
            a = np.zeros(2)
            lin = self.offset * np.ones_like(u)
        return d, u, q, q1, q2, a, lin

    def psi(self, x):
        _, _, q, _, _, _, lin = self._spatial(x)
        return lin * q

    def grad_psi(self, x):
        d, _, q, q1, _, a, lin = self._spatial(x)
        gq = (2.0 * q1 / self.radius**2)[..., None] * d
        return lin[..., None] * gq + q[..., None] * a

    def hess_psi(self, x):
        d, _, q, q1, q2, a, lin = self._spatial(x)
        r2 = self.radius**2
        eye = np.eye(2)
        hq = (4.0 * q2 / r2**2)[..., None, None] * d[..., :, None] * d[..., None, :] \
            + (2.0 * q1 / r2)[..., None, None] * eye
        gq = (2.0 * q1 / r2)[..., None] * d
        return lin[..., None, None] * hq + a[:, None] * gq[..., None, :] + gq[..., :, None] * a[None, :]

    # -- space-time ----------------------------------------------------

    def __call__(self, x, t):
        g, _ = self.time_profile(t)
        return g * self.psi(x)

    def grad(self, x, t):
        g, _ = self.time_profile(t)
        return np.asarray(g)[..., None] * self.grad_psi(x)

    def dt(self, x, t):
        _, dg = self.time_profile(t)
        return dg * self.psi(x)

    def hessian(self, x, t):
        g, _ = self.time_profile(t)
        return np.asarray(g)[..., None, None] * self.hess_psi(x)

    def in_support(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        return np.einsum("...i,...i->...", d, d) <= self.radius**2

    def hessian_bound(self):
        """Upper bound for sup_x ||hess psi(x)||_2 (spectral norm), max |g| = 1.

        Sampled on a fine polar grid and inflated by 5%.
        """
        if self._hess_bound is None:
            rho = np.linspace(0.0, 1.0, 801) * self.radius
            ang = np.linspace(0.0, 2 * np.pi, 181)
            pts = np.asarray(self.center) + np.stack(
                [np.outer(rho, np.cos(ang)), np.outer(rho, np.sin(ang))], axis=-1)
            h = self.hess_psi(pts.reshape(-1, 2))
            norms = np.linalg.norm(h, ord=2, axis=(1, 2))
            object.__setattr__(self, "_hess_bound", 1.05 * float(norms.max()))
        return self._hess_bound

    def to_dict(self):
        return {
            "id": self.id, "kind": self.kind, "center": list(self.center),
            "radius": self.radius, "time_kind": self.time_kind,
            "t_start": self.t_start, "t_stop": self.t_stop, "t_flat": self.t_flat,
            "slope": list(self.slope), "offset": self.offset, "core": self.core,
        }
