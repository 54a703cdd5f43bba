"""Exact and semi-analytic reference sheets.

* Prandtl-Munk: the flat sheet on [-1, 1] with gamma(s) = s / sqrt(1 - s^2)
  translating rigidly with velocity (0, -1/2).  Nodes sit at s_j = -cos(pi j/N)
  and the parameter is theta = pi j / N, in which sigma(theta) = -cos(theta) is
  bounded.
* flat_uniform: the stationary flat periodic sheet of uniform density.
* periodic_perturbed: a sinusoidally displaced periodic sheet, initial data for
  Kelvin-Helmholtz runs.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import QuadratureSpec, pv_velocity
from .state import SheetState, SheetTrajectory

KINDS = ("flat_uniform", "prandtl_munk", "periodic_perturbed")


@dataclass(frozen=True)
class OracleSpec:
    """``params`` per kind:

    * prandtl_munk: none.
    * flat_uniform: ``gamma_bar`` (1.0), ``period`` (2 pi).
    * periodic_perturbed: ``gamma_bar`` (1.0), ``period`` (2 pi),
      ``amplitude`` (0.01), ``k`` (1).
    """

    kind: str
    N: int = 128
    T: float = 1.0
    dt: float = 0.05
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")

    def param(self, name):
        defaults = {"gamma_bar": 1.0, "period": 2.0 * np.pi, "amplitude": 0.01, "k": 1}
        return self.params.get(name, defaults[name])

    def times(self):
        n = max(1, int(round(self.T / self.dt)))
        return np.arange(n + 1) * (self.T / n)

    def to_dict(self):
        return {"kind": self.kind, "N": self.N, "T": self.T, "dt": self.dt,
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def prandtl_munk_state(N, t=0.0):
    theta = np.pi * np.arange(N + 1) / N
    s = -np.cos(theta)
    xi = np.column_stack([s, np.full(N + 1, -0.5 * t)])
    return SheetState(t=t, eta=theta, xi=xi, sigma=-np.cos(theta))


def prandtl_munk_trajectory(spec):
    """Exact translating trajectory xi(s, t) = (s, -t/2) on the stored time grid."""
    if spec.kind != "prandtl_munk":
        raise ValueError("spec is not a Prandtl-Munk spec")
    return SheetTrajectory(tuple(prandtl_munk_state(spec.N, t) for t in spec.times()))


def prandtl_munk_lp_norm(N, p):
    """L^p(ds) norm of gamma on the N-node Chebyshev discretization.

    In theta, |gamma|^p ds = |cos theta|^p sin(theta)^(1-p) d theta; the
    midpoint rule on the theta grid never samples the tip, so the value stays
    finite for every N and grows without bound (logarithmically for p = 2) as
    N increases when p >= 2.
    """
    theta = np.pi * (np.arange(N) + 0.5) / N
    integrand = np.abs(np.cos(theta)) ** p * np.sin(theta) ** (1.0 - p)
    return float((integrand.sum() * np.pi / N) ** (1.0 / p))


def flat_uniform_state(spec):
    """Flat periodic sheet y = 0 with density gamma_bar; N unique nodes."""
    L = spec.param("period")
    g = spec.param("gamma_bar")
    eta = np.arange(spec.N + 1) * (L / spec.N)
    xi = np.column_stack([eta, np.zeros_like(eta)])
    return SheetState(t=0.0, eta=eta, xi=xi, sigma=np.full(spec.N + 1, g),
                      topology="periodic", period=L)


def periodic_perturbed(spec):
    """Periodic sheet xi(eta) = (eta, A sin(k 2 pi eta / L)), sigma = gamma_bar."""
    L = spec.param("period")
    g = spec.param("gamma_bar")
    amp = spec.param("amplitude")
    k = spec.param("k")
    eta = np.arange(spec.N + 1) * (L / spec.N)
    y = amp * np.sin(2.0 * np.pi * k * eta / L)
    y[-1] = y[0]
    xi = np.column_stack([eta, y])
    return SheetState(t=0.0, eta=eta, xi=xi, sigma=np.full(spec.N + 1, g),
                      topology="periodic", period=L)


def build(spec):
    """State (flat_uniform, periodic_perturbed) or trajectory (prandtl_munk)."""
    if spec.kind == "prandtl_munk":
        return prandtl_munk_trajectory(spec)
    if spec.kind == "flat_uniform":
        return flat_uniform_state(spec)
    return periodic_perturbed(spec)


class PowerIterationError(RuntimeError):
    pass


def _power_iteration(B, tol=1e-13, max_iter=20000):
    """Eigenvalue of largest real part of a small real matrix whose leading
    eigenvalues are real, by power iteration on B + c I with c = ||B||."""
    c = np.linalg.norm(B, 2)
    if c == 0.0:
        return 0.0
    A = B + c * np.eye(B.shape[0])
    v = np.ones(B.shape[0]) / np.sqrt(B.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        w = A @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return -c
        v_new = w / nw
        lam_new = float(v_new @ A @ v_new)
        if abs(lam_new - lam) <= tol * c and np.linalg.norm(v_new - v) <= 1e-8:
            return lam_new - c
        v, lam = v_new, lam_new
    raise PowerIterationError("power iteration did not converge")


def kh_linearized_growth(spec, wavenumbers=(1, 2, 4), q=None, h=1e-7):
    """Leading growth rate of the discrete Lagrangian sheet dynamics about the
    flat uniform state, per wavenumber.

    The Jacobian of the node-velocity map is applied by central differences to
    the four displacement fields (cos, sin) x (x, y) of each wavenumber; the
    flat state is translation invariant so this subspace is invariant, and the
    leading eigenvalue of the projected 4 x 4 matrix is found by power
    iteration.  ``spec.params['amplitude'] == 0`` returns zero rates.
    """
    q = q or QuadratureSpec()
    base = flat_uniform_state(spec)
    if spec.params.get("amplitude", 1.0) == 0:
        return {int(k): 0.0 for k in wavenumbers}
    m = spec.N
    L = spec.param("period")
    eta = base.eta[:m]
    rates = {}
    for k in wavenumbers:
        if not 0 < k < m // 2:
            raise ValueError(f"wavenumber {k} not resolved by {m} nodes")
        arg = 2.0 * np.pi * k * eta / L
        fields = []
        for profile in (np.cos(arg), np.sin(arg)):
            for comp in (0, 1):
                f = np.zeros((m, 2))
                f[:, comp] = profile
                fields.append(f / np.linalg.norm(profile))
        P = np.stack([f.ravel() for f in fields], axis=1)
        B = np.empty((4, 4))
        for j, f in enumerate(fields):
            cols = []
            for sgn in (+1.0, -1.0):
                xi = base.xi.copy()
                xi[:m] += sgn * h * f
                xi[m] = xi[0] + np.array([L, 0.0])
                cols.append(pv_velocity(base.replace(xi=xi), q)[:m].ravel())
            B[:, j] = P.T @ ((cols[0] - cols[1]) / (2.0 * h))
        rates[int(k)] = float(_power_iteration(B))
    return rates


def perturbed_circle(N, radial=((2, 0.05, 0.0), (3, 0.03, np.pi / 2)),
                     density=((1, 0.1, np.pi / 2), (2, 0.05, 0.0))):
    """Smooth closed sheet r(eta) = 1 + sum a cos(k eta - p) with nodal
    density 1 + sum b cos(k eta - p); ``radial`` and ``density`` hold
    (k, amplitude, phase) triples.  Not an exact solution; it is the shared
    smooth initial datum of the comparison studies."""
    eta = np.linspace(0.0, 2.0 * np.pi, N + 1)
    r = 1.0 + sum(a * np.cos(k * eta - p) for k, a, p in radial)
    sig = 1.0 + sum(b * np.cos(k * eta - p) for k, b, p in density)
    xi = np.column_stack([r * np.cos(eta), r * np.sin(eta)])
    xi[-1] = xi[0]
    sig[-1] = sig[0]
    return SheetState(t=0.0, eta=eta, xi=xi, sigma=sig, topology="closed")


def segment_state(N, length=1.0, gamma=1.0):
    """Straight open segment [0, length] x {0} with uniform density."""
    eta = np.linspace(0.0, length, N + 1)
    xi = np.column_stack([eta, np.zeros_like(eta)])
    return SheetState(t=0.0, eta=eta, xi=xi, sigma=np.full(N + 1, float(gamma)))
