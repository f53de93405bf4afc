"""Occupational measures over (control, state) atoms on one level set.

A measure generated by a feedback on a periodic orbit puts weight ``1/n`` on
each of the ``n`` equal-time orbit nodes, paired with the control the
feedback applies there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .integrate import write_csv
from .models import ModelSpec
from .orbits import PeriodicOrbit

WEIGHT_TOL = 1e-12
LEVEL_TOL = 1e-6


@dataclass
class OccupationalMeasure:
    weights: np.ndarray
    controls: np.ndarray
    states: np.ndarray
    level: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.controls = np.atleast_2d(np.asarray(self.controls, dtype=float))
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.level = np.atleast_1d(np.asarray(self.level, dtype=float))
        n = self.weights.size
        if n == 0:
            raise ContractViolation("a measure needs at least one atom")
        if len(self.controls) != n or len(self.states) != n:
            raise ContractViolation("weights, controls and states must have one row per atom")
        if np.any(self.weights < 0):
            raise ContractViolation("negative atom weight")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ContractViolation(f"weights sum to {self.weights.sum()!r}, not 1")

    @property
    def atoms(self) -> list:
        return list(zip(self.weights, self.controls, self.states))

    def __len__(self):
        return self.weights.size

    def check_support(self, model: ModelSpec) -> float:
        """Largest ``|F(y) - level|`` over the atoms; raises above 1e-6."""
        off = float(np.abs(model.F(self.states) - self.level).max())
        if off > LEVEL_TOL:
            raise ContractViolation(f"atoms lie {off:.3e} off level {self.level}")
        model.check_control(self.controls)
        return off

    def to_csv(self, path) -> None:
        du, m = self.controls.shape[1], self.states.shape[1]
        header = ["weight"] + [f"u{i + 1}" for i in range(du)] + [f"y{i + 1}" for i in range(m)]
        write_csv(path, header, np.column_stack([self.weights, self.controls, self.states]))


def _policy_controls(policy, nodes: np.ndarray, level: np.ndarray) -> np.ndarray:
    try:
        u = np.asarray(policy(nodes, level), dtype=float)
        if u.ndim == 2 and len(u) == len(nodes):
            return u
    except (ValueError, TypeError, IndexError):
        pass
    return np.array([np.atleast_1d(np.asarray(policy(y, level), dtype=float)) for y in nodes])


def occupational_from_policy(orbit: PeriodicOrbit, policy, model: ModelSpec | None = None) -> OccupationalMeasure:
    """Uniform atoms on the orbit nodes with the controls chosen by ``policy(y, z)``.

    Controls are checked against the box of ``model``, or of ``policy.model``
    when the policy carries one.
    """
    if orbit.n == 0:
        raise ContractViolation("empty orbit")
    model = model if model is not None else getattr(policy, "model", None)
    level = np.atleast_1d(np.asarray(orbit.level, dtype=float))
    u = _policy_controls(policy, orbit.nodes, level)
    if model is not None:
        model.check_control(u)
    n = orbit.n
    return OccupationalMeasure(np.full(n, 1.0 / n), u, orbit.nodes.copy(), level.copy())


@dataclass(frozen=True)
class MeanFunctionals:
    h_bar: np.ndarray
    r_bar: float


def mean_functionals(model: ModelSpec, mu: OccupationalMeasure) -> MeanFunctionals:
    h = model.h(mu.controls, mu.states)
    r = np.asarray(model.r(mu.controls, mu.states), dtype=float)
    return MeanFunctionals(mu.weights @ h, float(mu.weights @ r))


def mixture(first: OccupationalMeasure, second: OccupationalMeasure, weight: float = 0.5) -> OccupationalMeasure:
    """``weight * first + (1 - weight) * second`` on a common level."""
    if not 0.0 <= weight <= 1.0:
        raise ContractViolation("mixture weight must lie in [0, 1]")
    if not np.allclose(first.level, second.level, rtol=0.0, atol=LEVEL_TOL):
        raise ContractViolation("mixed measures must live on the same level")
    w = np.concatenate([weight * first.weights, (1.0 - weight) * second.weights])
    w = w / w.sum()
    return OccupationalMeasure(
        w,
        np.vstack([first.controls, second.controls]),
        np.vstack([first.states, second.states]),
        first.level.copy(),
    )
