"""Builtin control systems with a slow observable.

Each model supplies the fast field ``f(u, y)``, the perturbation ``g(u, y)``,
the constant of motion ``F(y)`` with its Jacobian, the observable drift
``h = F'(y) g(u, y)`` and the running cost ``r(u, y)``.  All field functions
broadcast over leading axes: ``y`` has shape ``(..., m)`` and ``u`` shape
``(..., du)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ContractViolation, DomainError

ROTATION = "rotation_example1"
LOTKA_VOLTERRA = "lotka_volterra_example2"
MODEL_KINDS = (ROTATION, LOTKA_VOLTERRA)

_CONTROL_TOL = 1e-12
Z_TOL = 1e-3


@dataclass(frozen=True)
class ModelSpec:
    """A builtin model selected by ``kind``.

    ``perturbation_gain`` only affects the rotation model, whose perturbation
    is ``g(u, y) = gain * u * y``.  ``target_level`` is the observable level
    the Lotka-Volterra running cost pulls towards.
    """

    kind: str
    perturbation_gain: float = 0.0
    target_level: float = -2.05

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ContractViolation(f"unknown model kind {self.kind!r}")

    # dimensions and boxes -------------------------------------------------

    @property
    def m(self) -> int:
        return 2

    @property
    def k(self) -> int:
        return 1

    @property
    def du(self) -> int:
        return 1

    @property
    def u_lo(self) -> np.ndarray:
        return np.array([-1.0]) if self.kind == ROTATION else np.array([0.0])

    @property
    def u_hi(self) -> np.ndarray:
        return np.array([1.0])

    @property
    def state_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Box used for random sampling and the Lipschitz estimate of ``f``."""
        if self.kind == ROTATION:
            return np.array([-10.0, -10.0]), np.array([10.0, 10.0])
        return np.array([0.05, 0.05]), np.array([10.0, 10.0])

    @property
    def reduced_control(self) -> np.ndarray:
        """Control used when the reduced flow is run as an uncontrolled system."""
        return np.array([1.0]) if self.kind == ROTATION else np.array([0.0])

    @property
    def control_free_f(self) -> bool:
        """True when ``f`` does not depend on the control."""
        return self.kind == LOTKA_VOLTERRA

    @property
    def level_range(self) -> tuple[float, float]:
        """Open interval of observable levels carrying a periodic orbit."""
        if self.kind == ROTATION:
            return 0.0, np.inf
        return -np.inf, -2.0

    # checks ---------------------------------------------------------------

    def check_state(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.m:
            raise ContractViolation(f"state must have {self.m} components, got shape {y.shape}")
        if self.kind == LOTKA_VOLTERRA and np.any(y <= 0.0):
            raise DomainError("Lotka-Volterra states must be strictly positive")
        return y

    def check_control(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape == (1,):
            v = float(u[0])
            lo = -1.0 if self.kind == ROTATION else 0.0
            if not lo - _CONTROL_TOL <= v <= 1.0 + _CONTROL_TOL:
                raise ContractViolation(f"control {u} outside box [{lo}, 1.0]")
            return u
        if u.shape[-1] != self.du:
            raise ContractViolation(f"control must have {self.du} components, got shape {u.shape}")
        if np.any(u < self.u_lo - _CONTROL_TOL) or np.any(u > self.u_hi + _CONTROL_TOL):
            raise ContractViolation(f"control {u} outside box [{self.u_lo}, {self.u_hi}]")
        return u

    # fields ---------------------------------------------------------------

    def f(self, u, y) -> np.ndarray:
        if type(y) is np.ndarray and y.ndim == 1:
            y1, y2 = y.tolist()
            if self.kind == ROTATION:
                v = float(np.asarray(u).reshape(-1)[0])
                return np.array((v * y2, -v * y1))
            return np.array((-y1 + y1 * y2, y2 - y1 * y2))
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        if self.kind == ROTATION:
            v = np.asarray(u, dtype=float)[..., 0]
            return np.stack([v * y2, -v * y1], axis=-1)
        return np.stack([-y1 + y1 * y2, y2 - y1 * y2], axis=-1)

    def g(self, u, y) -> np.ndarray:
        if type(y) is np.ndarray and y.ndim == 1 and np.ndim(u) <= 1:
            y1, y2 = y.tolist()
            v = float(np.asarray(u).reshape(-1)[0])
            if self.kind == ROTATION:
                gain = self.perturbation_gain * v
                return np.array((gain * y1, gain * y2))
            return np.array((-v * y1, 0.0))
        y = np.asarray(y, dtype=float)
        v = np.asarray(u, dtype=float)[..., 0]
        if self.kind == ROTATION:
            return self.perturbation_gain * v[..., None] * y
        y1 = y[..., 0]
        return np.stack([-v * y1, np.zeros_like(y1 * v)], axis=-1)

    def F(self, y) -> np.ndarray:
        if type(y) is np.ndarray and y.ndim == 1:
            y1, y2 = y.tolist()
            if self.kind == ROTATION:
                return np.array((y1 * y1 + y2 * y2,))
            return np.array((math.log(y2) - y2 + math.log(y1) - y1,))
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        if self.kind == ROTATION:
            z = y1 * y1 + y2 * y2
        else:
            z = np.log(y2) - y2 + np.log(y1) - y1
        return z[..., None]

    def F_jac(self, y) -> np.ndarray:
        """Jacobian of ``F``, shape ``(..., k, m)``."""
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        if self.kind == ROTATION:
            row = np.stack([2.0 * y1, 2.0 * y2], axis=-1)
        else:
            row = np.stack([1.0 / y1 - 1.0, 1.0 / y2 - 1.0], axis=-1)
        return row[..., None, :]

    def h(self, u, y) -> np.ndarray:
        """Observable drift ``F'(y) g(u, y)``."""
        return np.einsum("...ij,...j->...i", self.F_jac(y), self.g(u, y))

    def r(self, u, y) -> np.ndarray:
        if type(y) is np.ndarray and y.ndim == 1 and np.ndim(u) <= 1:
            v = float(np.asarray(u).reshape(-1)[0])
            if self.kind == ROTATION:
                return v * v
            y1, y2 = y.tolist()
            return v * v + (math.log(y2) - y2 + math.log(y1) - y1 - self.target_level) ** 2
        u = np.asarray(u, dtype=float)
        cost = np.sum(u * u, axis=-1)
        if self.kind == LOTKA_VOLTERRA:
            cost = cost + (self.F(y)[..., 0] - self.target_level) ** 2
        return cost

    def control_split(self, y) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(b, rho)`` with ``h = u * b(y)`` and ``r = u**2 + rho(y)``.

        Both builtin models have this structure; feedback synthesis uses it
        for a closed-form argmin.
        """
        if type(y) is np.ndarray and y.ndim == 1 and self.kind == LOTKA_VOLTERRA:
            y1, y2 = y.tolist()
            rho = (math.log(y2) - y2 + math.log(y1) - y1 - self.target_level) ** 2
            return np.array((y1 - 1.0,)), rho
        y = np.asarray(y, dtype=float)
        if self.kind == ROTATION:
            z = self.F(y)
            return 2.0 * self.perturbation_gain * z, np.zeros(y.shape[:-1])
        b = (y[..., 0] - 1.0)[..., None]
        rho = (self.F(y)[..., 0] - self.target_level) ** 2
        return b, rho

    def jacobian_f(self, u, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        y1, y2 = y[..., 0], y[..., 1]
        if self.kind == ROTATION:
            v = np.asarray(u, dtype=float)[..., 0] * np.ones_like(y1)
            zero = np.zeros_like(v)
            return np.stack([np.stack([zero, v], -1), np.stack([-v, zero], -1)], -2)
        return np.stack(
            [np.stack([-1.0 + y2, y1], -1), np.stack([-y2, 1.0 - y1], -1)], -2
        )


class Fields(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    F: np.ndarray
    F_jac: np.ndarray
    h: np.ndarray
    r: float


def eval_fields(model: ModelSpec, u, y) -> Fields:
    """Evaluate every field of ``model`` at a single ``(u, y)``."""
    y = model.check_state(y)
    u = model.check_control(u)
    jac = model.F_jac(y)
    g = model.g(u, y)
    return Fields(
        f=model.f(u, y),
        g=g,
        F=model.F(y),
        F_jac=jac,
        h=jac @ g,
        r=float(model.r(u, y)),
    )


def check_constant_of_motion(model: ModelSpec, sample_count: int, seed: int) -> float:
    """Max of ``|F'(y) f(u, y)|`` over random samples from the state and control boxes."""
    if sample_count < 1:
        raise ContractViolation("empty sample set")
    rng = np.random.default_rng(seed)
    lo, hi = model.state_box
    y = rng.uniform(lo, hi, size=(sample_count, model.m))
    u = rng.uniform(model.u_lo, model.u_hi, size=(sample_count, model.du))
    model.check_state(y)
    resid = np.einsum("nij,nj->ni", model.F_jac(y), model.f(u, y))
    return float(np.max(np.abs(resid)))


@functools.lru_cache(maxsize=None)
def lipschitz_f(model: ModelSpec, grid: int = 201) -> float:
    """Max spectral norm of the Jacobian of ``f`` over the state and control boxes."""
    lo, hi = model.state_box
    a = np.linspace(lo[0], hi[0], grid)
    b = np.linspace(lo[1], hi[1], grid)
    y = np.stack(np.meshgrid(a, b, indexing="ij"), axis=-1).reshape(-1, 2)
    best = 0.0
    for u in (model.u_lo, model.u_hi):
        jac = model.jacobian_f(np.broadcast_to(u, (len(y), model.du)), y)
        best = max(best, float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)))))
    return best


def rotation_example1(perturbation_gain: float = 0.0) -> ModelSpec:
    return ModelSpec(ROTATION, perturbation_gain=perturbation_gain)


def lotka_volterra_example2(target_level: float = -2.05) -> ModelSpec:
    return ModelSpec(LOTKA_VOLTERRA, target_level=target_level)


@dataclass(frozen=True)
class ProblemSpec:
    """A model together with the discounted problem data.

    ``y0``, ``z0``, ``z_lo`` and ``z_hi`` are stored as tuples so problems
    stay hashable; use the ``*_array`` helpers for numpy views.
    """

    model: ModelSpec
    epsilon: float
    discount: float
    y0: tuple
    z0: tuple | None = None
    z_lo: tuple = (-3.0,)
    z_hi: tuple = (-2.05,)
    stop_level: float | None = None
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        model = self.model
        y0 = np.asarray(self.y0, dtype=float)
        model.check_state(y0)
        object.__setattr__(self, "y0", tuple(float(v) for v in y0))
        fy0 = model.F(y0)
        if self.z0 is None:
            object.__setattr__(self, "z0", tuple(float(v) for v in fy0))
        z0 = np.asarray(self.z0, dtype=float)
        if z0.shape != (model.k,):
            raise ContractViolation(f"z0 must have {model.k} components")
        if np.any(np.abs(z0 - fy0) > 1e-9):
            raise ContractViolation(f"z0={z0} differs from F(y0)={fy0} by more than 1e-9")
        if not self.epsilon > 0:
            raise ContractViolation("epsilon must be positive")
        if not self.discount > 0:
            raise ContractViolation("discount must be positive")
        z_lo = np.asarray(self.z_lo, dtype=float)
        z_hi = np.asarray(self.z_hi, dtype=float)
        if np.any(z_lo >= z_hi):
            raise ContractViolation("need z_lo < z_hi componentwise")
        # published y0 sits 7e-5 below Z; tolerate that much
        if np.any(z0 < z_lo - Z_TOL) or np.any(z0 > z_hi + Z_TOL):
            raise ContractViolation(f"z0={z0} outside [{z_lo}, {z_hi}]")
        object.__setattr__(self, "z0", tuple(float(v) for v in z0))
        object.__setattr__(self, "z_lo", tuple(float(v) for v in z_lo))
        object.__setattr__(self, "z_hi", tuple(float(v) for v in z_hi))

    @property
    def y0_array(self) -> np.ndarray:
        return np.array(self.y0)

    @property
    def z0_array(self) -> np.ndarray:
        return np.array(self.z0)


def example2_problem(epsilon: float = 0.1, discount: float = 0.1) -> ProblemSpec:
    """The perturbed Lotka-Volterra problem with its published data."""
    return ProblemSpec(
        model=lotka_volterra_example2(),
        epsilon=epsilon,
        discount=discount,
        y0=(0.8916, 3.1370),
        z0=None,
        z_lo=(-3.0,),
        z_hi=(-2.05,),
        stop_level=-2.05,
    )
