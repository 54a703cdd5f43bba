"""Sheet states, trajectories and their JSON / JSON-lines serialization."""

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DegenerateSegmentError, SheetError

PARAM_KINDS = ("lagrangian", "arclength", "circulation", "graph")
TOPOLOGIES = ("open", "closed", "periodic")

# closure / periodicity tolerance, relative to the curve size
_CLOSE_TOL = 1e-9
_CIRCULATION_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SheetState:
    """One time slice of a vortex sheet.

    ``sigma`` is the vorticity density with respect to the parameter ``eta``,
    so the sheet carries the measure ``sigma(eta) d eta`` on the curve
    ``xi(eta)``.

    Closed sheets repeat the first node at the end.  Periodic sheets are
    stored over one period with the last node equal to the first shifted by
    ``(period, 0)``; the parameter period is ``eta[-1] - eta[0]``.
    ``markers`` optionally lists parameter values of tracked material points.
    """

    t: float
    eta: np.ndarray
    xi: np.ndarray
    sigma: np.ndarray
    param_kind: str = "lagrangian"
    topology: str = "open"
    period: Optional[float] = None
    markers: Optional[np.ndarray] = None
    _validated: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        eta = np.array(self.eta, dtype=float)
        xi = np.array(self.xi, dtype=float)
        sigma = np.array(self.sigma, dtype=float)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "sigma", sigma)
        if self.markers is not None:
            object.__setattr__(self, "markers", np.array(self.markers, dtype=float))
        if self.period is not None:
            object.__setattr__(self, "period", float(self.period))
        for arr in (eta, xi, sigma):
            arr.setflags(write=False)
        self._validate()

    def _validate(self):
        eta, xi, sigma = self.eta, self.xi, self.sigma
        if self.param_kind not in PARAM_KINDS:
            raise SheetError(f"unknown param_kind {self.param_kind!r}")
        if self.topology not in TOPOLOGIES:
            raise SheetError(f"unknown topology {self.topology!r}")
        if eta.ndim != 1 or eta.size < 3:
            raise SheetError("eta must be a 1-d grid with at least 3 nodes")
        n = eta.size
        if xi.shape != (n, 2):
            raise SheetError(f"xi must have shape ({n}, 2), got {xi.shape}")
        if sigma.shape != (n,):
            raise SheetError(f"sigma must have shape ({n},), got {sigma.shape}")
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(xi))
                and np.all(np.isfinite(sigma))):
            raise SheetError("non-finite values in sheet state")
        if np.any(np.diff(eta) <= 0):
            raise SheetError("eta must be strictly increasing")
        seg = np.hypot(*np.diff(xi, axis=0).T)
        if np.any(seg == 0.0):
            j = int(np.flatnonzero(seg == 0.0)[0])
            raise DegenerateSegmentError(f"nodes {j} and {j + 1} coincide")
        scale = max(float(np.ptp(xi[:, 0])), float(np.ptp(xi[:, 1])), 1.0)
        if self.topology == "closed":
            if np.hypot(*(xi[-1] - xi[0])) > _CLOSE_TOL * scale:
                raise SheetError("closed sheet: first and last nodes must coincide")
        if self.topology == "periodic":
            if self.period is None or self.period <= 0:
                raise SheetError("periodic sheet needs a positive period")
            shift = xi[-1] - xi[0] - np.array([self.period, 0.0])
            if np.hypot(*shift) > _CLOSE_TOL * scale:
                raise SheetError("periodic sheet: last node must equal first + (period, 0)")
            if abs(sigma[-1] - sigma[0]) > _CLOSE_TOL * max(1.0, np.abs(sigma).max()):
                raise SheetError("periodic sheet: density must repeat")
        if self.param_kind == "circulation":
            if np.max(np.abs(sigma - 1.0)) > _CIRCULATION_TOL:
                raise SheetError("circulation parametrization requires sigma == 1")

    @property
    def n(self):
        return self.eta.size

    @property
    def is_open(self):
        return self.topology == "open"

    @property
    def param_period(self):
        return float(self.eta[-1] - self.eta[0])

    def quad_nodes(self):
        """Return ``(eta, xi, sigma, weights)`` for quadrature over the sheet.

        Open sheets use the trapezoid rule on all nodes; closed and periodic
        sheets drop the repeated end node and use cyclic trapezoid weights.
        """
        if self.is_open:
            d = np.diff(self.eta)
            w = np.zeros(self.n)
            w[:-1] += 0.5 * d
            w[1:] += 0.5 * d
            return self.eta, self.xi, self.sigma, w
        d = np.diff(self.eta)
        w = 0.5 * (d + np.roll(d, 1))
        return self.eta[:-1], self.xi[:-1], self.sigma[:-1], w

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    # -- serialization -------------------------------------------------

    def to_dict(self):
        out = {
            "t": self.t,
            "param_kind": self.param_kind,
            "topology": self.topology,
            "eta": self.eta.tolist(),
            "xi": self.xi.tolist(),
            "sigma": self.sigma.tolist(),
        }
        if self.period is not None:
            out["period"] = self.period
        if self.markers is not None:
            out["markers"] = self.markers.tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                t=d["t"],
                eta=d["eta"],
                xi=d["xi"],
                sigma=d["sigma"],
                param_kind=d.get("param_kind", "lagrangian"),
                topology=d.get("topology", "open"),
                period=d.get("period"),
                markers=d.get("markers"),
            )
        except KeyError as exc:
            raise SheetError(f"missing field {exc.args[0]!r} in sheet state") from None

    def to_json(self, **extra):
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, separators=(",", ":"))


@dataclass(frozen=True, eq=False)
class SheetTrajectory:
    """Time-ordered sequence of sheet states."""

    states: tuple

    def __post_init__(self):
        states = tuple(self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise SheetError("empty trajectory")
        times = np.array([s.t for s in states])
        if np.any(np.diff(times) <= 0):
            raise SheetError("trajectory times must be strictly increasing")
        topo = {s.topology for s in states}
        if len(topo) != 1:
            raise SheetError("all states of a trajectory must share topology")

    @property
    def times(self):
        return np.array([s.t for s in self.states])

    @property
    def topology(self):
        return self.states[0].topology

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def subsample(self, space_stride=1, time_stride=1):
        """Coarsen by keeping every ``space_stride``-th node and
        ``time_stride``-th state; both end nodes and the final time are kept
        only when the strides divide the grids exactly."""
        states = self.states[::time_stride]
        out = []
        for s in states:
            if (s.n - 1) % space_stride:
                raise SheetError(f"stride {space_stride} does not divide {s.n - 1} intervals")
            markers = s.markers
            out.append(s.replace(eta=s.eta[::space_stride], xi=s.xi[::space_stride],
                                 sigma=s.sigma[::space_stride], markers=markers))
        return SheetTrajectory(tuple(out))


def write_jsonl(path, trajectory, **extra):
    with open(path, "w") as fh:
        for state in trajectory:
            fh.write(state.to_json(**extra))
            fh.write("\n")


def read_jsonl(path):
    states = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SheetError(f"{path}:{lineno}: {exc}") from None
            states.append(SheetState.from_dict(d))
    return SheetTrajectory(tuple(states))
