"""Periodic orbits of the uncontrolled reduced flow on level sets of ``F``.

An orbit is stored as ``n`` states sampled at equal time spacing over one
period, so the invariant measure it generates is the uniform distribution on
the nodes and every orbit average is a plain mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import ContractViolation, DegenerateOrbitError, DomainError, OrbitError
from .integrate import IntegratorConfig, refine_event_crossing, rk4_step, write_csv
from .models import LOTKA_VOLTERRA, ModelSpec

DEFAULT_NODES = 256
MAX_NODES = 4096


@dataclass
class PeriodicOrbit:
    level: np.ndarray
    period: float
    nodes: np.ndarray
    closure_error: float

    @property
    def n(self) -> int:
        return len(self.nodes)

    def subsample(self, stride: int) -> "PeriodicOrbit":
        return PeriodicOrbit(self.level, self.period, self.nodes[::stride].copy(), self.closure_error)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            k = len(self.level)
            fh.write(",".join([f"z{i + 1}" for i in range(k)] + ["T_z"]) + "\n")
            fh.write(",".join(format(float(v), ".17g") for v in [*self.level, self.period]) + "\n")
        rows = self.nodes
        header = [f"y{i + 1}" for i in range(rows.shape[1])]
        with open(path, "a") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "PeriodicOrbit":
        with open(path) as fh:
            lines = fh.read().splitlines()
        head = [float(v) for v in lines[1].split(",")]
        nodes = np.array([[float(v) for v in line.split(",")] for line in lines[3:] if line])
        return cls(np.array(head[:-1]), head[-1], nodes, float("nan"))


def _reduced_rhs(model: ModelSpec, control):
    u = model.reduced_control if control is None else np.atleast_1d(np.asarray(control, dtype=float))
    model.check_control(u)
    return (lambda tau, y: model.f(u, y)), u


def orbit_from_point(
    model: ModelSpec,
    y0,
    cfg: IntegratorConfig | None = None,
    *,
    n: int = DEFAULT_NODES,
    tau_max: float = 200.0,
    control=None,
) -> PeriodicOrbit:
    """Periodic orbit of the reduced flow through ``y0``.

    The return time is the first same-direction crossing of the section
    through ``y0`` orthogonal to ``f(y0)``, refined by bisection on the
    dense output.  Nodes are then produced by integrating exactly one period
    with a step that divides ``period / n``.
    """
    cfg = cfg or IntegratorConfig()
    if n < 64:
        raise ContractViolation("an orbit needs at least 64 nodes")
    rhs, _ = _reduced_rhs(model, control)
    y0 = model.check_state(np.array(y0, dtype=float))
    f0 = rhs(0.0, y0)
    if np.linalg.norm(f0) <= 1e-8:
        raise DegenerateOrbitError(f"{y0} is an equilibrium of the reduced flow")

    def event(y):
        return float(np.dot(y - y0, f0))

    h = cfg.dt
    tau, y, e = 0.0, y0, 0.0
    left = False
    period = None
    while tau < tau_max:
        y_new = rk4_step(rhs, tau, y, h)
        if not np.all(np.isfinite(y_new)):
            raise OrbitError(f"reduced flow blew up at tau={tau}")
        e_new = event(y_new)
        if e_new < 0:
            left = True
        elif left and e < 0 <= e_new:
            period, _ = refine_event_crossing(
                tau, y, rhs(tau, y), tau + h, y_new, rhs(tau + h, y_new), event, cfg.event_refine_tol
            )
            break
        tau, y, e = tau + h, y_new, e_new
    if period is None:
        raise OrbitError(f"no return to the section within tau_max={tau_max}")

    per_node = max(1, math.ceil(period / (n * cfg.dt)))
    hs = period / (n * per_node)
    nodes = np.empty((n, model.m))
    y = y0.copy()
    for i in range(n):
        nodes[i] = y
        for j in range(per_node):
            y = rk4_step(rhs, (i * per_node + j) * hs, y, hs)
    closure = float(np.linalg.norm(y - y0))
    level = model.F(y0)
    return PeriodicOrbit(level=level, period=float(period), nodes=nodes, closure_error=closure)


def seed_point_for_level(model: ModelSpec, z) -> np.ndarray:
    """A point on the level set ``F(y) = z`` along a fixed model-specific ray."""
    z = float(np.atleast_1d(z)[0])
    lo, hi = model.level_range
    if not lo < z < hi:
        raise DomainError(f"level {z} outside the admissible range ({lo}, {hi})")
    if model.kind == LOTKA_VOLTERRA:
        # F(1, s) = ln s - s - 1 decreases strictly for s > 1
        def resid(s):
            return math.log(s) - s - 1.0 - z

        upper = 2.0
        while resid(upper) > 0:
            upper *= 2.0
        s = brentq(resid, 1.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        return np.array([1.0, s])
    return np.array([math.sqrt(z), 0.0])


def _test_monomials(nodes: np.ndarray, degree: int = 5) -> np.ndarray:
    cols = []
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            cols.append(nodes[:, 0] ** a * nodes[:, 1] ** b)
    return np.stack(cols, axis=1)


def orbit_for_level(
    model: ModelSpec,
    z,
    cfg: IntegratorConfig | None = None,
    *,
    n: int = DEFAULT_NODES,
    adaptive: bool = True,
    tau_max: float = 200.0,
) -> PeriodicOrbit:
    """Orbit on the level ``z``.

    With ``adaptive`` the node count is doubled until the means of all
    monomials of degree <= 5 over ``n`` and ``2n`` nodes agree to 1e-5.
    """
    y0 = seed_point_for_level(model, z)
    while True:
        fine = orbit_from_point(model, y0, cfg, n=2 * n if adaptive else n, tau_max=tau_max)
        if not adaptive:
            return fine
        coarse = fine.subsample(2)
        a = _test_monomials(coarse.nodes).mean(axis=0)
        b = _test_monomials(fine.nodes).mean(axis=0)
        if np.all(np.abs(a - b) <= 1e-5 * np.maximum(1.0, np.abs(b))) or 2 * n >= MAX_NODES:
            return coarse
        n *= 2


def orbits_on_grid(model: ModelSpec, z_grid, cfg: IntegratorConfig | None = None, *, n: int = DEFAULT_NODES) -> list[PeriodicOrbit]:
    return [orbit_for_level(model, z, cfg, n=n) for z in np.asarray(z_grid, dtype=float)]


def orbit_average(orbit: PeriodicOrbit, q):
    """Time average of ``q`` over one period (mean over the equal-time nodes)."""
    if orbit.n == 0:
        raise ContractViolation("empty orbit")
    try:
        vals = np.asarray(q(orbit.nodes), dtype=float)
        if vals.shape[:1] != (orbit.n,):
            raise ValueError
    except (ValueError, TypeError, IndexError):
        vals = np.array([np.asarray(q(y), dtype=float) for y in orbit.nodes])
    mean = vals.mean(axis=0)
    return float(mean) if np.ndim(mean) == 0 else mean


def write_orbits(orbits, directory) -> list:
    """Write one CSV per orbit plus an index of levels and periods."""
    import os

    paths = []
    for i, orb in enumerate(orbits):
        path = os.path.join(directory, f"orbit_{i:03d}.csv")
        orb.to_csv(path)
        paths.append(path)
    write_csv(
        os.path.join(directory, "orbits_index.csv"),
        ["z", "T_z", "closure_error", "n"],
        [[float(o.level[0]), o.period, o.closure_error, o.n] for o in orbits],
    )
    return paths
