"""Linear programming: a revised simplex core and the semi-infinite dual solver.

The dual problem asks for the largest ``t`` such that for every level ``z``
on the grid, every orbit node ``y`` on that level and every control ``u``

    r(u, y) + zeta'(z) h(u, y) + grad eta_z(y) . f(u, y) + C (zeta(z0) - zeta(z)) >= t

with ``zeta = sum lam_i psi_i`` and ``eta_z = sum omega_{z,j} phi_j``.  It is
solved by constraint exchange.  Rather than re-solving the growing primal
from scratch, the solver works on its LP dual, where a new constraint is a
new column: the previous basis stays feasible and the simplex resumes from
it.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.polynomial import legendre

from .errors import ContractViolation, ExchangeError, SolverError
from .models import ModelSpec, ProblemSpec
from .orbits import PeriodicOrbit, orbits_on_grid

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


# ---------------------------------------------------------------------------
# revised simplex core


class _RevisedSimplex:
    """Primal revised simplex for ``min c x  s.t.  A x = b, x >= 0``.

    Keeps an explicit basis inverse updated by rank-one pivots and rebuilt
    every ``refactor_every`` pivots.  Pricing is Dantzig's rule; after
    ``bland_after`` iterations, or after a long run of degenerate pivots, it
    falls back to Bland's rule, which cannot cycle.  Columns can be appended
    between solves; the current basis remains feasible because new columns
    enter at zero.
    """

    def __init__(self, A, b, c, basis, *, refactor_every: int = 100, bland_after: int | None = None):
        self.A = sp.csc_matrix(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.m = self.A.shape[0]
        self.basis = np.array(basis, dtype=int)
        if self.basis.shape != (self.m,):
            raise ContractViolation("basis must list one column per row")
        self.blocked = np.zeros(self.A.shape[1], dtype=bool)
        self.refactor_every = refactor_every
        self.bland_after = bland_after
        self.iterations = 0
        self._refactor()
        if np.any(self.x_B < -1e-9 * (1.0 + np.abs(self.b).max())):
            raise ContractViolation("starting basis is not primal feasible")

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def add_columns(self, cols, costs) -> None:
        cols = sp.csc_matrix(cols, dtype=float)
        if cols.shape[0] != self.m:
            raise ContractViolation("new columns have the wrong number of rows")
        self.A = sp.hstack([self.A, cols], format="csc")
        self.c = np.concatenate([self.c, np.asarray(costs, dtype=float)])
        self.blocked = np.concatenate([self.blocked, np.zeros(cols.shape[1], dtype=bool)])

    def _refactor(self) -> None:
        B = self.A[:, self.basis].toarray()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise SolverError("basis matrix became singular") from exc
        self.x_B = self.Binv @ self.b
        self._since_refactor = 0

    def _column(self, j: int) -> np.ndarray:
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        return self.Binv[:, self.A.indices[lo:hi]] @ self.A.data[lo:hi]

    def duals(self) -> np.ndarray:
        return self.c[self.basis] @ self.Binv

    def objective(self) -> float:
        return float(self.c[self.basis] @ self.x_B)

    def solution(self) -> np.ndarray:
        x = np.zeros(self.n)
        x[self.basis] = np.maximum(self.x_B, 0.0)
        return x

    def solve(self, max_iter: int | None = None) -> str:
        m, n = self.m, self.n
        bland_after = self.bland_after if self.bland_after is not None else 10 * (m + n)
        max_iter = max_iter if max_iter is not None else 50 * (m + n) + 1000
        cscale = max(1.0, float(np.abs(self.c).max()) if n else 1.0)
        dtol = 1e-9 * cscale
        ptol = 1e-9
        ftol = 1e-10 * max(1.0, float(np.abs(self.b).max()))
        start = self.iterations
        degenerate_run = 0
        use_bland = False
        in_basis = np.zeros(n, dtype=bool)
        in_basis[self.basis] = True
        while True:
            done = self.iterations - start
            if done >= max_iter:
                raise SolverError(f"simplex iteration cap {max_iter} reached")
            if done >= bland_after or degenerate_run > 2 * m:
                use_bland = True
            y = self.duals()
            d = self.c - self.A.T @ y
            d[in_basis | self.blocked] = 0.0
            candidates = np.flatnonzero(d < -dtol)
            if candidates.size == 0:
                return OPTIMAL
            q = int(candidates[0]) if use_bland else int(candidates[np.argmin(d[candidates])])
            col = self._column(q)
            pos = col > ptol * max(1.0, float(np.abs(col).max()))
            if not np.any(pos):
                return UNBOUNDED
            # Harris: relax the bound by ftol, then take the largest pivot
            rows = np.flatnonzero(pos)
            xb = np.maximum(self.x_B[rows], 0.0)
            theta_max = ((xb + ftol) / col[rows]).min()
            ties = rows[xb / col[rows] <= theta_max]
            if use_bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(col[ties])])
            theta = max(self.x_B[r], 0.0) / col[r]
            degenerate_run = degenerate_run + 1 if theta <= 1e-12 else 0
            if theta > 1e-12 and done < bland_after:
                use_bland = False
            # rank-one update of the basis inverse
            piv_row = self.Binv[r] / col[r]
            self.Binv -= np.outer(col, piv_row)
            self.Binv[r] = piv_row
            self.x_B -= theta * col
            self.x_B[r] = theta
            in_basis[self.basis[r]] = False
            in_basis[q] = True
            self.basis[r] = q
            self.iterations += 1
            self._since_refactor += 1
            if self._since_refactor >= self.refactor_every:
                self._refactor()

    def pivot_out(self, r: int) -> bool:
        """Replace basic position ``r`` (at zero level) by any usable nonbasic column."""
        row = self.Binv[r] @ self.A
        row = np.asarray(row).ravel()
        row[self.basis] = 0.0
        row[self.blocked] = 0.0
        cand = np.flatnonzero(np.abs(row) > 1e-9)
        if cand.size == 0:
            return False
        q = int(cand[np.argmax(np.abs(row[cand]))])
        col = self._column(q)
        piv_row = self.Binv[r] / col[r]
        self.Binv -= np.outer(col, piv_row)
        self.Binv[r] = piv_row
        theta = self.x_B[r] / col[r]
        self.x_B -= theta * col
        self.x_B[r] = theta
        self.basis[r] = q
        return True


# ---------------------------------------------------------------------------
# general finite LPs


@dataclass
class FiniteLP:
    """``max`` (or ``min``) ``c x`` subject to row constraints and variable bounds.

    ``senses`` holds ``"<="``, ``">="`` or ``"="`` per row.  ``bounds`` is a
    list of ``(lo, hi)`` pairs with ``None`` for an infinite side; it defaults
    to ``x >= 0``.
    """

    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    bounds: list | None = None
    maximize: bool = True

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.A = np.asarray(self.A, dtype=float).reshape(-1, self.c.size)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.senses = list(self.senses)
        n = self.c.size
        if self.b.size != self.A.shape[0] or len(self.senses) != self.A.shape[0]:
            raise ContractViolation("rows of A, b and senses disagree")
        if any(s not in ("<=", ">=", "=") for s in self.senses):
            raise ContractViolation(f"unknown constraint sense in {self.senses}")
        if self.bounds is None:
            self.bounds = [(0.0, None)] * n
        if len(self.bounds) != n:
            raise ContractViolation("one (lo, hi) pair is needed per variable")
        for lo, hi in self.bounds:
            if lo is not None and hi is not None and lo > hi:
                raise ContractViolation(f"empty bound interval ({lo}, {hi})")


@dataclass
class LPResult:
    status: str
    x: np.ndarray
    value: float
    duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0


def solve_finite_lp(lp: FiniteLP) -> LPResult:
    """Two-phase revised simplex.

    ``duals`` holds one multiplier per row, signed so that for a
    maximization ``c = A^T duals`` plus bound multipliers, ``duals >= 0`` on
    ``<=`` rows and ``duals <= 0`` on ``>=`` rows.
    """
    n = lp.c.size
    # x = offset + T x_std with x_std >= 0
    cols_T, offset, extra_rows = [], np.zeros(n), []
    for j, (lo, hi) in enumerate(lp.bounds):
        e = np.zeros(n)
        e[j] = 1.0
        if lo is not None:
            offset[j] = lo
            cols_T.append(e)
            if hi is not None:
                extra_rows.append((len(cols_T) - 1, hi - lo))
        elif hi is not None:
            offset[j] = hi
            cols_T.append(-e)
        else:
            cols_T.append(e)
            cols_T.append(-e)
    T = np.array(cols_T).T.reshape(n, -1)
    ns = T.shape[1]

    rows = [lp.A @ T]
    rhs = [lp.b - lp.A @ offset]
    senses = list(lp.senses)
    for k, cap in extra_rows:
        e = np.zeros((1, ns))
        e[0, k] = 1.0
        rows.append(e)
        rhs.append(np.array([cap]))
        senses.append("<=")
    A = np.vstack(rows) if rows else np.zeros((0, ns))
    b = np.concatenate(rhs) if rhs else np.zeros(0)
    m = A.shape[0]
    n_orig_rows = lp.A.shape[0]

    slack_cols = []
    for i, s in enumerate(senses):
        if s != "=":
            e = np.zeros(m)
            e[i] = 1.0 if s == "<=" else -1.0
            slack_cols.append(e)
    S = np.array(slack_cols).T.reshape(m, -1)
    A = np.hstack([A, S])
    flip = np.where(b < 0, -1.0, 1.0)
    A = A * flip[:, None]
    b = b * flip
    n_struct = A.shape[1]

    obj = -lp.c if lp.maximize else lp.c
    c2 = np.concatenate([obj @ T, np.zeros(S.shape[1])])
    if m == 0:
        # only bounds: each variable goes to its best end
        if np.any(c2 < 0):
            return LPResult(UNBOUNDED, np.full(n, np.nan), math.nan)
        x = offset.copy()
        return LPResult(OPTIMAL, x, float(lp.c @ x), np.zeros(0))

    A_full = np.hstack([A, np.eye(m)])
    phase1 = np.concatenate([np.zeros(n_struct), np.ones(m)])
    sim = _RevisedSimplex(A_full, b, phase1, np.arange(n_struct, n_struct + m))
    sim.solve()
    if sim.objective() > 1e-9 * (1.0 + np.abs(b).max()):
        return LPResult(INFEASIBLE, np.full(n, np.nan), math.nan, iterations=sim.iterations)
    sim.blocked[n_struct:] = True
    for r in range(m):
        if sim.basis[r] >= n_struct:
            sim.pivot_out(r)
    sim.c = np.concatenate([c2, np.zeros(m)])
    sim._refactor()
    status = sim.solve()
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, np.full(n, np.nan), math.nan, iterations=sim.iterations)
    xs = sim.solution()[:ns]
    x = offset + T @ xs
    y = sim.duals() * flip
    duals = (-y if lp.maximize else y)[:n_orig_rows]
    return LPResult(OPTIMAL, x, float(lp.c @ x), duals, sim.iterations)


# ---------------------------------------------------------------------------
# polynomial bases


@functools.lru_cache(maxsize=None)
def _legendre_derivative_matrix(degree: int) -> np.ndarray:
    D = np.zeros((degree + 1, degree + 1))
    for i in range(degree + 1):
        e = np.zeros(degree + 1)
        e[i] = 1.0
        d = legendre.legder(e)
        D[: d.size, i] = d
    return D


def _vander(s: np.ndarray, degree: int, family: str) -> tuple[np.ndarray, np.ndarray]:
    """Values and derivatives (in ``s``) of the 1-D family up to ``degree``."""
    if family == "legendre":
        # legvander promotes 0-d input to 1-d; keep the caller's shape
        V = legendre.legvander(s, degree).reshape(np.shape(s) + (degree + 1,))
        return V, V @ _legendre_derivative_matrix(degree)
    powers = np.arange(degree + 1)
    V = s[..., None] ** powers
    D = np.zeros_like(V)
    if degree >= 1:
        D[..., 1:] = powers[1:] * V[..., :-1]
    return V, D


_FAMILIES = ("power", "legendre")


@dataclass(frozen=True)
class MonomialBasisZ:
    """``psi_i(z) = p_i((z - center) / scale)`` for ``i = 1..N``.

    With ``family="power"`` the ``p_i`` are monomials; ``"legendre"`` uses
    Legendre polynomials, which span the same space modulo constants and are
    far better conditioned on ``[-1, 1]``.
    """

    N: int
    center: float = 0.0
    scale: float = 1.0
    family: str = "power"

    def __post_init__(self):
        if self.N < 1:
            raise ContractViolation("the z basis needs N >= 1")
        if not self.scale > 0:
            raise ContractViolation("scale must be positive")
        if self.family not in _FAMILIES:
            raise ContractViolation(f"unknown basis family {self.family!r}")

    @classmethod
    def on_interval(cls, N: int, lo: float, hi: float, family: str = "legendre") -> "MonomialBasisZ":
        return cls(N, 0.5 * (lo + hi), 0.5 * (hi - lo), family)

    def values(self, z) -> np.ndarray:
        s = (np.asarray(z, dtype=float) - self.center) / self.scale
        return _vander(s, self.N, self.family)[0][..., 1:]

    def derivatives(self, z) -> np.ndarray:
        s = (np.asarray(z, dtype=float) - self.center) / self.scale
        return _vander(s, self.N, self.family)[1][..., 1:] / self.scale

    def to_dict(self) -> dict:
        return {"N": self.N, "center": self.center, "scale": self.scale, "family": self.family}


@dataclass(frozen=True)
class MonomialBasisY:
    """Products ``phi_e(y) = prod_k p_{e_k}((y_k - center_k) / scale_k)``.

    ``kind="tensor"`` takes every exponent vector with entries in
    ``0..degree`` except the zero vector; ``kind="total"`` takes
    ``1 <= sum(e) <= degree``.  For two states and degree 5 these give 35
    and 20 functions.  The constant is always left out: its gradient is zero.
    """

    degree: int
    center: tuple = (0.0, 0.0)
    scale: tuple = (1.0, 1.0)
    kind: str = "tensor"
    family: str = "power"

    def __post_init__(self):
        if self.degree < 0:
            raise ContractViolation("degree must be non-negative")
        if self.kind not in ("tensor", "total"):
            raise ContractViolation(f"unknown basis kind {self.kind!r}")
        if self.family not in _FAMILIES:
            raise ContractViolation(f"unknown basis family {self.family!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "scale", tuple(float(v) for v in self.scale))
        if len(self.center) != len(self.scale) or any(s <= 0 for s in self.scale):
            raise ContractViolation("center and scale must match and scales be positive")

    @classmethod
    def on_box(cls, degree: int, lo, hi, kind: str = "tensor", family: str = "legendre") -> "MonomialBasisY":
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls(degree, tuple(0.5 * (lo + hi)), tuple(0.5 * (hi - lo)), kind, family)

    @property
    def dim(self) -> int:
        return len(self.center)

    @functools.cached_property
    def exponents(self) -> tuple:
        out = []
        for e in itertools.product(range(self.degree + 1), repeat=self.dim):
            total = sum(e)
            if total == 0:
                continue
            if self.kind == "total" and total > self.degree:
                continue
            out.append(e)
        return tuple(sorted(out, key=lambda e: (sum(e), e)))

    @property
    def M(self) -> int:
        return len(self.exponents)

    def _tables(self, y):
        y = np.asarray(y, dtype=float)
        s = (y - np.array(self.center)) / np.array(self.scale)
        return [_vander(s[..., k], self.degree, self.family) for k in range(self.dim)]

    def values(self, y) -> np.ndarray:
        tabs = self._tables(y)
        E = np.array(self.exponents, dtype=int).reshape(-1, self.dim)
        out = np.ones(np.shape(y)[:-1] + (len(E),))
        for k, (V, _) in enumerate(tabs):
            out = out * V[..., E[:, k]]
        return out

    def gradients(self, y) -> np.ndarray:
        """Gradients of every basis function, shape ``(..., M, dim)``."""
        tabs = self._tables(y)
        E = np.array(self.exponents, dtype=int).reshape(-1, self.dim)
        grads = []
        for k in range(self.dim):
            g = tabs[k][1][..., E[:, k]] / self.scale[k]
            for l, (V, _) in enumerate(tabs):
                if l != k:
                    g = g * V[..., E[:, l]]
            grads.append(g)
        return np.stack(grads, axis=-1)

    def grad_dot(self, y, v) -> np.ndarray:
        """``grad phi_j(y) . v`` for every basis function, shape ``(..., M)``."""
        return np.einsum("...jk,...k->...j", self.gradients(y), np.asarray(v, dtype=float))

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "center": list(self.center),
            "scale": list(self.scale),
            "kind": self.kind,
            "family": self.family,
        }


# ---------------------------------------------------------------------------
# rows of the semi-infinite dual


@dataclass(frozen=True)
class ConstraintRow:
    """``const + lam . lam_coef + omega . omega_coef + t_coef * t >= 0``."""

    t_coef: float
    lam_coef: np.ndarray
    omega_coef: np.ndarray
    const: float


LEVEL_TOL = 1e-6


def constraint_row(model: ModelSpec, basis_z: MonomialBasisZ, basis_y: MonomialBasisY, z, u, y, z0, discount: float) -> ConstraintRow:
    y = model.check_state(np.asarray(y, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    z = float(np.atleast_1d(z)[0])
    z0 = float(np.atleast_1d(z0)[0])
    if abs(float(model.F(y)[0]) - z) > LEVEL_TOL:
        raise ContractViolation(f"state {y} is not on level {z}")
    h = float(model.h(u, y)[0])
    lam = basis_z.derivatives(z) * h + discount * (basis_z.values(z0) - basis_z.values(z))
    omega = basis_y.grad_dot(y, model.f(u, y)) if basis_y.M else np.zeros(0)
    return ConstraintRow(-1.0, lam, omega, float(model.r(u, y)))


@dataclass
class _LevelData:
    """Per-level pieces of the row, split by powers of a scalar control.

    The row value is ``r2 u^2 + (r1 + lam.L1 + omega.W1) u + r0 + lam.L0 + omega.W0``.
    """

    nodes: np.ndarray
    r0: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    L0: np.ndarray
    L1: np.ndarray
    W0: np.ndarray
    W1: np.ndarray


def _level_data(model: ModelSpec, basis_z, basis_y, z, nodes, z0, discount) -> _LevelData:
    n = len(nodes)
    u0 = np.zeros((n, 1))
    u1 = np.ones((n, 1))
    um = -np.ones((n, 1))
    ra, rb, rc = model.r(u0, nodes), model.r(u1, nodes), model.r(um, nodes)
    r2 = 0.5 * (rb + rc) - ra
    r1 = 0.5 * (rb - rc)
    h0 = model.h(u0, nodes)[:, 0]
    h1 = model.h(u1, nodes)[:, 0] - h0
    dpsi = basis_z.derivatives(z)
    shift = discount * (basis_z.values(z0) - basis_z.values(z))
    L0 = np.outer(h0, dpsi) + shift
    L1 = np.outer(h1, dpsi)
    if basis_y.M:
        f0 = model.f(u0, nodes)
        f1 = model.f(u1, nodes) - f0
        grads = basis_y.gradients(nodes)
        W0 = np.einsum("njk,nk->nj", grads, f0)
        W1 = np.einsum("njk,nk->nj", grads, f1)
    else:
        W0 = W1 = np.zeros((n, 0))
    return _LevelData(nodes, ra, r1, r2, L0, L1, W0, W1)


def _best_controls(data: _LevelData, lam, omega, lo, hi, control_grid) -> tuple[np.ndarray, np.ndarray]:
    """Minimize the row value over ``u`` in ``[lo, hi]`` at every node.

    The row is quadratic in ``u``; the minimizer is found in closed form when
    the quadratic coefficient is positive and on ``control_grid`` otherwise.
    Ties go to the smaller control.
    """
    a2 = data.r2
    a1 = data.r1 + data.L1 @ lam + data.W1 @ omega
    a0 = data.r0 + data.L0 @ lam + data.W0 @ omega
    if np.all(a2 > 0):
        u = np.clip(-a1 / (2.0 * a2), lo, hi)
    else:
        grid = np.clip(np.asarray(control_grid, dtype=float), lo, hi)
        vals = a2[:, None] * grid**2 + a1[:, None] * grid
        u = grid[np.argmin(vals, axis=1)]
    return u, a2 * u * u + a1 * u + a0


# ---------------------------------------------------------------------------
# the exchange solver


@dataclass
class DualSolution:
    lam: np.ndarray
    z_grid: np.ndarray
    omega: np.ndarray
    value: float
    max_violation: float
    basis_z: MonomialBasisZ
    basis_y: MonomialBasisY
    z0: float
    discount: float
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list)

    def zeta(self, z) -> np.ndarray:
        return self.basis_z.values(z) @ self.lam

    def dzeta(self, z) -> np.ndarray:
        return self.basis_z.derivatives(z) @ self.lam

    def omega_at(self, z) -> np.ndarray:
        """``omega`` of the grid node nearest to ``z``."""
        i = int(np.argmin(np.abs(self.z_grid - float(np.atleast_1d(z)[0]))))
        return self.omega[i]

    def to_dict(self) -> dict:
        return {
            "format": "avgctl-dual-solution",
            "version": 1,
            "basis_z": self.basis_z.to_dict(),
            "basis_y": self.basis_y.to_dict(),
            "z0": self.z0,
            "discount": self.discount,
            "lambda": self.lam.tolist(),
            "z_grid": self.z_grid.tolist(),
            "omega": self.omega.tolist(),
            "value": self.value,
            "max_violation": self.max_violation,
            "iterations": self.iterations,
            "converged": self.converged,
            "history": list(self.history),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DualSolution":
        if d.get("format") != "avgctl-dual-solution":
            raise ContractViolation("not a dual solution file")
        by = d["basis_y"]
        basis_y = MonomialBasisY(by["degree"], tuple(by["center"]), tuple(by["scale"]), by["kind"], by["family"])
        M = basis_y.M
        omega = np.array(d["omega"], dtype=float).reshape(len(d["z_grid"]), M)
        return cls(
            lam=np.array(d["lambda"], dtype=float),
            z_grid=np.array(d["z_grid"], dtype=float),
            omega=omega,
            value=float(d["value"]),
            max_violation=float(d["max_violation"]),
            basis_z=MonomialBasisZ(**d["basis_z"]),
            basis_y=basis_y,
            z0=float(d["z0"]),
            discount=float(d["discount"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            history=list(d.get("history", [])),
        )

    def save(self, path) -> None:
        # json writes floats with repr, which round-trips exactly
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DualSolution":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def default_z_grid(problem: ProblemSpec, size: int) -> np.ndarray:
    """Equispaced levels from ``min(z_lo, z0)`` to ``z_hi``, so ``z0`` is a node."""
    if size < 2:
        raise ContractViolation("the z grid needs at least two nodes")
    lo = min(problem.z_lo[0], problem.z0[0])
    return np.linspace(lo, problem.z_hi[0], size)


def default_bases(problem: ProblemSpec, z_grid, orbits, N: int = 10, degree: int = 5, kind: str = "tensor"):
    """Legendre bases scaled to the z grid and to the bounding box of the orbits."""
    z_grid = np.asarray(z_grid, dtype=float)
    nodes = np.concatenate([o.nodes for o in orbits])
    basis_z = MonomialBasisZ.on_interval(N, float(z_grid[0]), float(z_grid[-1]))
    basis_y = MonomialBasisY.on_box(degree, nodes.min(axis=0), nodes.max(axis=0), kind=kind)
    return basis_z, basis_y


def _whitening(d: _LevelData, null_tol: float) -> np.ndarray:
    """Map from whitened coordinates to ``omega`` for one level, shape ``(M, r)``."""
    S = np.vstack([d.W0, d.W1])
    if S.shape[1] == 0:
        return np.zeros((0, 0))
    _, sv, Vt = np.linalg.svd(S, full_matrices=False)
    if sv[0] == 0.0:
        return np.zeros((S.shape[1], 0))
    keep = sv > null_tol * sv[0]
    # unit-norm node vectors; the sqrt(n) keeps entries of order one
    return Vt[keep].T / sv[keep] * math.sqrt(S.shape[0])


def _initial_nodes(nodes: np.ndarray) -> list:
    return sorted({int(np.argmax(nodes[:, 0])), int(np.argmin(nodes[:, 0]))})


def solve_dual_exchange(
    model: ModelSpec,
    problem: ProblemSpec,
    basis_z: MonomialBasisZ,
    basis_y: MonomialBasisY,
    z_grid,
    control_grid=33,
    orbits: list | None = None,
    tol: float = 1e-6,
    *,
    max_iter: int = 500,
    coef_bound: float = 1e3,
    rows_per_level: int = 3,
    control_box: tuple | None = None,
    refactor_every: int = 100,
    null_tol: float = 1e-8,
) -> DualSolution:
    """Maximize ``t`` over ``(t, lam, omega)`` by constraint exchange.

    Every grid level contributes the rows at its orbit nodes; the inner
    minimum over the control is exact (see ``_best_controls``).  Each round
    adds up to ``rows_per_level`` of the most violated rows per level and
    resumes the simplex from the previous basis.

    On each level the ``omega`` block enters the rows only through
    ``grad phi . f`` at the orbit nodes, and polynomials close to functions of
    the conserved quantity make that map nearly singular.  The LP therefore
    works in whitened coordinates from an SVD of the node matrix, dropping
    directions whose relative singular value is below ``null_tol``.  The
    whitened coefficients and ``lam`` are kept in ``[-coef_bound, coef_bound]``,
    which makes every intermediate LP bounded.
    """
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid.ndim != 1 or z_grid.size == 0:
        raise ContractViolation("empty z grid")
    if np.any(np.diff(z_grid) <= 0):
        raise ContractViolation("z grid must be strictly ascending")
    if orbits is None:
        orbits = orbits_on_grid(model, z_grid)
    if len(orbits) != z_grid.size:
        raise ContractViolation("one orbit is needed per grid level")
    if isinstance(control_grid, (int, np.integer)):
        control_grid = np.linspace(model.u_lo[0], model.u_hi[0], int(control_grid))
    lo, hi = control_box if control_box is not None else (model.u_lo[0], model.u_hi[0])
    C = problem.discount
    z0 = problem.z0[0]

    N, M, G = basis_z.N, basis_y.M, z_grid.size
    levels, transforms = [], []
    for z, orb in zip(z_grid, orbits):
        if not isinstance(orb, PeriodicOrbit):
            raise ContractViolation("orbits must be PeriodicOrbit instances")
        off = np.abs(model.F(orb.nodes)[:, 0] - z).max()
        if off > LEVEL_TOL:
            raise ContractViolation(f"orbit nodes are {off:.2e} off level {z}")
        d = _level_data(model, basis_z, basis_y, z, orb.nodes, z0, C)
        T = _whitening(d, null_tol)
        d.W0, d.W1 = d.W0 @ T, d.W1 @ T
        levels.append(d)
        transforms.append(T)
    widths = [T.shape[1] for T in transforms]
    starts = N + np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(int)
    nv = N + int(sum(widths))

    def column(g, j, u):
        d = levels[g]
        lam_c = d.L0[j] + u * d.L1[j]
        om_c = d.W0[j] + u * d.W1[j]
        const = d.r2[j] * u * u + d.r1[j] * u + d.r0[j]
        idx = np.concatenate([[0], 1 + np.arange(N), 1 + starts[g] + np.arange(widths[g])])
        vals = np.concatenate([[1.0], -lam_c, -om_c])
        return idx, vals, const

    def build(cols):
        idx = np.concatenate([c[0] for c in cols])
        vals = np.concatenate([c[1] for c in cols])
        ptr = np.cumsum([0] + [len(c[0]) for c in cols])
        mat = sp.csc_matrix((vals, idx, ptr), shape=(1 + nv, len(cols)))
        return mat, np.array([c[2] for c in cols])

    start = []
    for g, d in enumerate(levels):
        for j in _initial_nodes(d.nodes):
            for u in sorted({lo, hi}):
                start.append(column(g, j, u))

    # first row column plus one box column per coefficient give a feasible basis
    first_idx, first_vals, _ = start[0]
    a0 = np.zeros(1 + nv)
    a0[first_idx] = first_vals
    box = sp.hstack([sp.eye(1 + nv, format="csc")[:, 1:], -sp.eye(1 + nv, format="csc")[:, 1:]], format="csc")
    box_cost = np.full(2 * nv, coef_bound)
    basis = [2 * nv]
    for i in range(nv):
        basis.append(i if -a0[1 + i] >= 0 else nv + i)
    basis = np.array(basis)
    # reorder so the basis lines up with the row that each column covers
    order = np.empty(1 + nv, dtype=int)
    order[0] = 2 * nv
    order[1:] = basis[1:]
    mat0, cost0 = build(start)
    A = sp.hstack([box, mat0], format="csc")
    c = np.concatenate([box_cost, cost0])
    rhs = np.zeros(1 + nv)
    rhs[0] = 1.0
    sim = _RevisedSimplex(A, rhs, c, order, refactor_every=refactor_every)

    history = []
    best = None
    violation = math.inf
    for it in range(1, max_iter + 1):
        status = sim.solve()
        if status != OPTIMAL:
            raise SolverError(f"exchange LP ended with status {status}")
        y = sim.duals()
        t, lam = float(y[0]), y[1 : 1 + N]
        theta = [y[1 + s0 : 1 + s0 + w] for s0, w in zip(starts, widths)]
        new_cols = []
        worst = 0.0
        for g, d in enumerate(levels):
            u, q = _best_controls(d, lam, theta[g], lo, hi, control_grid)
            q = q - t
            worst = min(worst, float(q.min()))
            for j in np.argsort(q, kind="stable")[:rows_per_level]:
                if q[j] < -tol:
                    new_cols.append(column(g, int(j), float(u[j])))
        violation = -worst
        value = sim.objective()
        history.append(value)
        best = DualSolution(
            lam=lam.copy(),
            z_grid=z_grid.copy(),
            omega=np.array([T @ th for T, th in zip(transforms, theta)]).reshape(G, M),
            value=value,
            max_violation=max(violation, 0.0),
            basis_z=basis_z,
            basis_y=basis_y,
            z0=z0,
            discount=C,
            iterations=it,
            converged=violation <= tol,
            history=history.copy(),
        )
        if violation <= tol:
            return best
        mat, cost = build(new_cols)
        sim.add_columns(mat, cost)
    raise ExchangeError(f"exchange did not reach tolerance {tol} in {max_iter} rounds (violation {violation:.3e})", best=best)


@dataclass
class CertificateDiagnostics:
    z: np.ndarray
    zeta: np.ndarray
    dzeta: np.ndarray
    monotone_flag: bool


def certificate_diagnostics(dual: DualSolution, basis_z: MonomialBasisZ | None = None, z_grid=None) -> CertificateDiagnostics:
    """Values and slopes of ``zeta`` on the grid; flags a strictly decreasing ``zeta``."""
    basis_z = basis_z or dual.basis_z
    z = np.asarray(dual.z_grid if z_grid is None else z_grid, dtype=float)
    zeta = basis_z.values(z) @ dual.lam
    dz = basis_z.derivatives(z) @ dual.lam
    return CertificateDiagnostics(z, zeta, dz, bool(np.all(dz < 0)))
