"""Feedback synthesis from a dual certificate and the averaged closed loop.

The feedback picks, at each ``(y, z)``, the control minimizing

    cost_scale * r(u, y) + zeta'(z) h(u, y) + grad eta_z(y) . f(u, y)

over the control box.  Its orbit averages give the drift ``h*(z)`` and cost
``r*(z)`` of the averaged system ``z' = h*(z)``, whose discounted cost is
compared with the certificate value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre, polynomial

from .errors import ContractViolation
from .integrate import write_csv
from .lp import DualSolution
from .measures import mean_functionals, occupational_from_policy
from .models import ModelSpec
from .orbits import orbits_on_grid

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FeedbackPolicy:
    """Pointwise minimizer built from a certificate.

    When ``f`` does not depend on the control and ``r = u^2 + rho``,
    ``h = u b`` the minimizer is ``clamp(-zeta'(z) b(y) / (2 cost_scale))``.
    Otherwise the objective is scanned on ``control_grid`` points and the best
    point refined by one golden-section search over its neighbouring cells.
    ``z`` is clamped to the hull of the certificate grid before ``zeta'`` is
    evaluated.
    """

    dual: DualSolution
    model: ModelSpec
    u_lo: float | None = None
    u_hi: float | None = None
    cost_scale: float = 1.0
    control_grid: int = 33

    def __post_init__(self):
        if self.u_lo is None:
            self.u_lo = float(self.model.u_lo[0])
        if self.u_hi is None:
            self.u_hi = float(self.model.u_hi[0])
        if self.u_lo > self.u_hi:
            raise ContractViolation("empty control box")
        if not self.cost_scale > 0:
            raise ContractViolation("cost_scale must be positive")
        if self.control_grid < 2:
            raise ContractViolation("control grid needs at least two points")
        self._zlo = float(self.dual.z_grid[0])
        self._zhi = float(self.dual.z_grid[-1])
        # power-series form of zeta' in the scaled variable, for scalar calls
        bz = self.dual.basis_z
        coef = np.concatenate([[0.0], self.dual.lam])
        if bz.family == "legendre":
            coef = legendre.leg2poly(coef)
        self._dcoef = (polynomial.polyder(coef) / bz.scale)[::-1].tolist()

    @property
    def closed_form(self) -> bool:
        return self.model.control_free_f

    def dzeta(self, z: float) -> float:
        """``zeta'(z)`` by Horner's rule on the cached coefficients."""
        s = (z - self.dual.basis_z.center) / self.dual.basis_z.scale
        acc = 0.0
        for c in self._dcoef:
            acc = acc * s + c
        return acc

    def _z(self, z) -> float:
        return min(max(float(np.atleast_1d(z)[0]), self._zlo), self._zhi)

    def _objective(self, u: np.ndarray, y: np.ndarray, dz: float, omega: np.ndarray) -> np.ndarray:
        """Objective at scalar controls ``u`` (shape ``(q,)``) for one state."""
        uu = u[:, None]
        yy = np.broadcast_to(y, (len(u), y.size))
        val = self.cost_scale * np.asarray(self.model.r(uu, yy), dtype=float)
        val = val + dz * self.model.h(uu, yy)[:, 0]
        if omega.size:
            val = val + self.dual.basis_y.grad_dot(yy, self.model.f(uu, yy)) @ omega
        return val

    def _search(self, y: np.ndarray, dz: float, omega: np.ndarray) -> float:
        grid = np.linspace(self.u_lo, self.u_hi, self.control_grid)
        vals = self._objective(grid, y, dz, omega)
        best = vals.min()
        ties = np.flatnonzero(vals <= best)
        i = int(ties[np.argmin(np.abs(grid[ties]))])
        a = grid[max(i - 1, 0)]
        b = grid[min(i + 1, len(grid) - 1)]
        c = b - GOLDEN * (b - a)
        d = a + GOLDEN * (b - a)
        while b - a > 1e-10 * max(1.0, abs(a) + abs(b)):
            fc, fd = self._objective(np.array([c, d]), y, dz, omega)
            if fc <= fd:
                b, d = d, c
                c = b - GOLDEN * (b - a)
            else:
                a, c = c, d
                d = a + GOLDEN * (b - a)
        u = 0.5 * (a + b)
        if self._objective(np.array([u]), y, dz, omega)[0] > best:
            u = grid[i]
        return float(min(max(u, self.u_lo), self.u_hi))

    def __call__(self, y, z) -> np.ndarray:
        """Control at one state (shape ``(du,)``) or at a stack of states on one level."""
        y = np.asarray(y, dtype=float)
        zc = self._z(z)
        dz = self.dzeta(zc)
        if self.closed_form:
            b, _ = self.model.control_split(y)
            u = np.clip(-0.5 * dz * b / self.cost_scale, self.u_lo, self.u_hi)
            return u
        omega = self.dual.omega_at(zc)
        if y.ndim == 1:
            return np.array([self._search(y, dz, omega)])
        return np.array([[self._search(row, dz, omega)] for row in y])


def feedback_u(policy: FeedbackPolicy, y, z) -> np.ndarray:
    return policy(y, z)


@dataclass
class AcgTables:
    z_grid: np.ndarray
    h_star: np.ndarray
    r_star: np.ndarray
    periods: np.ndarray

    def __post_init__(self):
        self.z_grid = np.asarray(self.z_grid, dtype=float)
        self.h_star = np.asarray(self.h_star, dtype=float).reshape(len(self.z_grid), -1)
        self.r_star = np.asarray(self.r_star, dtype=float)
        self.periods = np.asarray(self.periods, dtype=float)
        if np.any(np.diff(self.z_grid) <= 0):
            raise ContractViolation("table grid must be strictly ascending")
        if not (np.all(np.isfinite(self.h_star)) and np.all(np.isfinite(self.r_star))):
            raise ContractViolation("tables must be finite")

    def h_at(self, z: float) -> float:
        return float(np.interp(z, self.z_grid, self.h_star[:, 0]))

    def r_at(self, z: float) -> float:
        return float(np.interp(z, self.z_grid, self.r_star))

    def to_csv(self, path) -> None:
        k = self.h_star.shape[1]
        header = ["z", "T_z"] + (["h_star"] if k == 1 else [f"h_star{i + 1}" for i in range(k)]) + ["r_star"]
        write_csv(path, header, np.column_stack([self.z_grid, self.periods, self.h_star, self.r_star]))

    @classmethod
    def from_csv(cls, path) -> "AcgTables":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 2:-1], data[:, -1], data[:, 1])


def tabulate_acg(model: ModelSpec, policy, z_grid, orbits: list | None = None) -> AcgTables:
    """Orbit averages of ``h`` and ``r`` under ``policy`` on every grid level."""
    z_grid = np.asarray(z_grid, dtype=float)
    if orbits is None:
        orbits = orbits_on_grid(model, z_grid)
    if len(orbits) != len(z_grid):
        raise ContractViolation("one orbit is needed per grid level")
    h, r, T = [], [], []
    for orb in orbits:
        mf = mean_functionals(model, occupational_from_policy(orb, policy, model))
        h.append(mf.h_bar)
        r.append(mf.r_bar)
        T.append(orb.period)
    return AcgTables(z_grid, np.array(h), np.array(r), np.array(T))


@dataclass
class AveragedTrajectory:
    times: np.ndarray
    z: np.ndarray
    r_star: np.ndarray
    cost: np.ndarray
    R_tilde: float
    tail_bound: float
    saturated: bool = False

    def z_at(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.z)

    def to_csv(self, path) -> None:
        write_csv(path, ["t", "z", "r_star", "cost"], np.column_stack([self.times, self.z, self.r_star, self.cost]))

    @classmethod
    def from_csv(cls, path) -> "AveragedTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], data[:, 2], data[:, 3], float(data[-1, 3]), math.nan)


def integrate_averaged(
    tables: AcgTables,
    z0,
    C: float,
    *,
    dt: float = 0.01,
    tail_tol: float = 1e-4,
    t_max: float | None = None,
) -> AveragedTrajectory:
    """RK4 for ``z' = h*(z)`` with the discounted cost of ``r*(z)`` alongside.

    The run stops once the tail ``exp(-C t) max|r*| / C`` drops to
    ``tail_tol`` (or at ``t_max``); ``R_tilde`` is the integral so far and
    ``tail_bound`` the tail at that time.  At the ends of the table grid the
    outward part of the drift is set to zero and ``saturated`` is raised.
    """
    if not C > 0:
        raise ContractViolation("discount must be positive")
    zlo, zhi = float(tables.z_grid[0]), float(tables.z_grid[-1])
    z0 = float(np.atleast_1d(z0)[0])
    if not zlo - 1e-12 <= z0 <= zhi + 1e-12:
        raise ContractViolation(f"z0={z0} outside the table grid [{zlo}, {zhi}]")
    r_max = float(np.abs(tables.r_star).max())
    saturated = [False]

    def drift(z):
        v = tables.h_at(min(max(z, zlo), zhi))
        if (z >= zhi and v > 0) or (z <= zlo and v < 0):
            saturated[0] = True
            return 0.0
        return v

    def rhs(t, x):
        return np.array([drift(x[0]), math.exp(-C * t) * tables.r_at(min(max(x[0], zlo), zhi))])

    t = 0.0
    x = np.array([z0, 0.0])
    times, zs, costs = [t], [z0], [0.0]
    while True:
        tail = math.exp(-C * t) * r_max / C
        if tail <= tail_tol or (t_max is not None and t >= t_max - 1e-12):
            break
        h = dt if t_max is None else min(dt, t_max - t)
        k1 = rhs(t, x)
        k2 = rhs(t + 0.5 * h, x + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, x + 0.5 * h * k2)
        k4 = rhs(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if x[0] > zhi or x[0] < zlo:
            x[0] = min(max(x[0], zlo), zhi)
            saturated[0] = True
        t += h
        times.append(t)
        zs.append(x[0])
        costs.append(x[1])
    zs = np.array(zs)
    r = np.interp(zs, tables.z_grid, tables.r_star)
    return AveragedTrajectory(
        times=np.array(times),
        z=zs,
        r_star=r,
        cost=np.array(costs),
        R_tilde=float(costs[-1]),
        tail_bound=math.exp(-C * t) * r_max / C,
        saturated=saturated[0],
    )


def optimality_gap(R_tilde: float, a_MN: float, C: float) -> float:
    """``R_tilde - a_MN / C``: how far a run is from the certificate's lower bound."""
    if not C > 0:
        raise ContractViolation("discount must be positive")
    return R_tilde - a_MN / C
