"""Fixed-step RK4 integration of the reduced and perturbed systems.

The perturbed system is integrated in the slow time ``t`` where it reads
``dy/dt = f(u, y) / eps + g(u, y)``.  The internal step is ``eps * cfg.dt`` so
that ``cfg.dt`` is always a step in the fast time ``tau = t / eps``.  The
discounted cost ``int exp(-C t) r(u, y) dt`` is carried as an extra state
component and therefore integrated to the same order as the state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolation, DomainError, IntegrationError
from .models import ModelSpec, ProblemSpec


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    method: str = "rk4"
    event_refine_tol: float = 1e-10

    def __post_init__(self):
        if not self.dt > 0:
            raise ContractViolation("dt must be positive")
        if not self.event_refine_tol > 0:
            raise ContractViolation("event_refine_tol must be positive")
        if self.method != "rk4":
            raise ContractViolation(f"unsupported method {self.method!r}")


@dataclass
class Trajectory:
    """Sampled solution.  ``controls[i]`` is the control applied at ``times[i]``.

    ``r_values`` holds the undiscounted running cost at each sample when the
    integrator knows it; it is not part of the CSV format.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    observables: np.ndarray
    running_cost: np.ndarray
    r_values: np.ndarray | None = None
    switch_time: float | None = None

    def __post_init__(self):
        n = len(self.times)
        for name in ("states", "controls", "observables", "running_cost"):
            if len(getattr(self, name)) != n:
                raise ContractViolation(f"{name} length differs from times")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise ContractViolation("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def final_cost(self) -> float:
        return float(self.running_cost[-1])

    def to_csv(self, path) -> None:
        m = self.states.shape[1]
        du = self.controls.shape[1]
        k = self.observables.shape[1]
        header = (
            ["t"]
            + [f"y{i + 1}" for i in range(m)]
            + [f"u{i + 1}" for i in range(du)]
            + [f"z{i + 1}" for i in range(k)]
            + ["cost"]
        )
        data = np.column_stack(
            [self.times, self.states, self.controls, self.observables, self.running_cost]
        )
        write_csv(path, header, data)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as fh:
            header = next(csv.reader(fh))
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        m = sum(1 for h in header if h.startswith("y"))
        du = sum(1 for h in header if h.startswith("u"))
        k = sum(1 for h in header if h.startswith("z"))
        i = 1
        states = data[:, i : i + m]
        i += m
        controls = data[:, i : i + du]
        i += du
        observables = data[:, i : i + k]
        return cls(data[:, 0], states, controls, observables, data[:, -1])


def write_csv(path, header, rows) -> None:
    """Write a numeric table with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")


def rk4_step(rhs, t, y, h):
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _as_control_fn(control, model: ModelSpec) -> Callable[[float], np.ndarray]:
    if callable(control):
        return control
    u = model.check_control(np.atleast_1d(np.asarray(control, dtype=float)))
    return lambda tau: u


def _check_state(model: ModelSpec, y, t) -> None:
    if not np.all(np.isfinite(y)):
        raise IntegrationError(f"non-finite state at t={t}", last_time=t)
    if model.kind == "lotka_volterra_example2" and np.any(y[: model.m] <= 0.0):
        raise IntegrationError(f"state left the positive quadrant at t={t}", last_time=t)


def _guarded_step(rhs, t, x, h):
    """RK4 step that reports a domain exit inside a stage as an integration failure."""
    try:
        return rk4_step(rhs, t, x, h)
    except ContractViolation:
        raise
    except (ValueError, DomainError, ZeroDivisionError) as exc:
        raise IntegrationError(f"state left the domain during a step at t={t}: {exc}", last_time=t) from exc


def integrate_reduced(model: ModelSpec, control, y0, t_span, cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate ``dy/dtau = f(u(tau), y)`` over ``t_span`` in fast time."""
    cfg = cfg or IntegratorConfig()
    tau0, tau1 = _span(t_span)
    y = model.check_state(np.array(y0, dtype=float))
    ufn = _as_control_fn(control, model)
    n = max(1, math.ceil((tau1 - tau0) / cfg.dt - 1e-9))
    h = (tau1 - tau0) / n

    def rhs(tau, x):
        return model.f(ufn(tau), x)

    times = tau0 + h * np.arange(n + 1)
    states = np.empty((n + 1, model.m))
    controls = np.empty((n + 1, model.du))
    states[0] = y
    for i in range(n):
        controls[i] = ufn(times[i])
        y = _guarded_step(rhs, times[i], y, h)
        _check_state(model, y, times[i])
        states[i + 1] = y
    controls[n] = ufn(times[n])
    return Trajectory(
        times=times,
        states=states,
        controls=controls,
        observables=model.F(states),
        running_cost=np.zeros(n + 1),
    )


def _span(t_span):
    if np.isscalar(t_span):
        a, b = 0.0, float(t_span)
    else:
        a, b = (float(v) for v in t_span)
    if not b > a:
        raise ContractViolation("integration span must have positive length")
    return a, b


def integrate_perturbed(
    problem: ProblemSpec,
    policy,
    t_span,
    cfg: IntegratorConfig | None = None,
    *,
    y0=None,
    stop_level: float | None = None,
    fallback=None,
    record_stride: int = 1,
) -> Trajectory:
    """Integrate the perturbed system in slow time under ``policy(t, y)``.

    The policy is evaluated at every Runge-Kutta stage, so a state feedback
    is integrated as a continuous closed loop.  When ``stop_level`` is given,
    the first crossing of ``F(y)`` through that level switches the control to
    ``fallback`` for the rest of the run.  The crossing step is re-integrated
    up to the crossing instant so the switch happens on the level itself.
    """
    cfg = cfg or IntegratorConfig()
    model = problem.model
    eps = problem.epsilon
    C = problem.discount
    m = model.m
    t0, t1 = _span(t_span)
    y = model.check_state(np.array(problem.y0 if y0 is None else y0, dtype=float))
    if fallback is None:
        fallback_u = np.zeros(model.du)
        fallback = lambda t, yy: fallback_u  # noqa: E731
    elif not callable(fallback):
        fallback_u = model.check_control(np.atleast_1d(np.asarray(fallback, dtype=float)))
        fallback = lambda t, yy: fallback_u  # noqa: E731
    if not callable(policy):
        const_u = model.check_control(np.atleast_1d(np.asarray(policy, dtype=float)))
        policy = lambda t, yy: const_u  # noqa: E731

    n = max(1, math.ceil((t1 - t0) / (eps * cfg.dt) - 1e-9))
    h = (t1 - t0) / n
    active = [policy]

    def control_at(t, yy):
        return model.check_control(np.atleast_1d(active[0](t, yy)))

    def rhs(t, x):
        yy = x[:m]
        u = control_at(t, yy)
        out = np.empty(m + 1)
        out[:m] = model.f(u, yy) / eps + model.g(u, yy)
        out[m] = math.exp(-C * t) * float(model.r(u, yy))
        return out

    n_rec = n // record_stride + 1 + (1 if n % record_stride else 0)
    times = np.empty(n_rec)
    states = np.empty((n_rec, m))
    controls = np.empty((n_rec, model.du))
    costs = np.empty(n_rec)
    rvals = np.empty(n_rec)

    x = np.concatenate([y, [0.0]])
    z_prev = float(model.F(y)[0])
    direction = None
    if stop_level is not None:
        direction = 1.0 if z_prev < stop_level else -1.0
    switch_time = None
    j = 0
    t = t0
    for i in range(n + 1):
        t = t0 + i * h
        record = i % record_stride == 0 or i == n
        if record:
            yy = x[:m]
            u = control_at(t, yy)
            times[j] = t
            states[j] = yy
            controls[j] = u
            costs[j] = x[m]
            rvals[j] = float(model.r(u, yy))
            j += 1
        if i == n:
            break
        x_old = x
        x = _guarded_step(rhs, t, x, h)
        _check_state(model, x, t + h)
        if stop_level is not None and switch_time is None:
            z_new = float(model.F(x[:m])[0])
            if direction * (z_new - stop_level) >= 0.0:
                theta = _crossing_fraction(
                    lambda th: float(model.F(rk4_step(rhs, t, x_old, th * h)[:m])[0]) - stop_level,
                    z_prev - stop_level,
                    z_new - stop_level,
                )
                switch_time = t + theta * h
                x_s = _guarded_step(rhs, t, x_old, theta * h) if theta > 0 else x_old
                active[0] = fallback
                x = _guarded_step(rhs, switch_time, x_s, (1.0 - theta) * h) if theta < 1 else x_s
                _check_state(model, x, t + h)
            z_prev = z_new

    states = states[:j]
    traj = Trajectory(
        times=times[:j],
        states=states,
        controls=controls[:j],
        observables=model.F(states),
        running_cost=costs[:j],
        r_values=rvals[:j],
        switch_time=switch_time,
    )
    return traj


def _crossing_fraction(resid, r0, r1, iters: int = 60) -> float:
    """Fraction of a step at which ``resid`` vanishes, by linear interpolation refined with bisection."""
    if r1 == r0:
        return 1.0
    lo, hi = 0.0, 1.0
    theta = min(max(r0 / (r0 - r1), 0.0), 1.0)
    for _ in range(iters):
        val = resid(theta)
        if abs(val) <= 1e-13:
            break
        if (val < 0) == (r0 < 0):
            lo = theta
        else:
            hi = theta
        theta = 0.5 * (lo + hi)
    return theta


@dataclass(frozen=True)
class DiscountedCost:
    value: float
    tail_bound: float


def discounted_cost(traj: Trajectory, C: float, M_r: float, model: ModelSpec | None = None) -> DiscountedCost:
    """Trapezoid value of ``int exp(-C t) r dt`` over the samples plus a tail bound.

    The tail bound ``(2 / C) * M_r * exp(-C t_final)`` covers the neglected
    horizon when ``|r| <= M_r`` there.
    """
    if len(traj) == 0:
        raise ContractViolation("empty trajectory")
    if not C > 0:
        raise ContractViolation("discount must be positive")
    if traj.r_values is not None:
        r = traj.r_values
    elif model is not None:
        r = model.r(traj.controls, traj.states)
    else:
        raise ContractViolation("trajectory carries no running cost; pass the model")
    t = traj.times
    w = np.exp(-C * t) * r
    value = float(np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(t))) if len(t) > 1 else 0.0
    tail = (2.0 / C) * M_r * math.exp(-C * float(t[-1]))
    return DiscountedCost(value=value, tail_bound=tail)


def hermite(t0, y0, d0, t1, y1, d1, t):
    """Cubic Hermite interpolant between two samples with derivatives."""
    h = t1 - t0
    s = (t - t0) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


def refine_event_crossing(t0, y0, d0, t1, y1, d1, event, tol: float = 1e-10):
    """Locate a sign change of ``event`` between two steps.

    Bisects on the cubic Hermite dense output until ``|event| <= tol`` and
    returns ``(t, y)`` at the crossing.
    """
    y0 = np.asarray(y0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    e0 = float(event(y0))
    e1 = float(event(y1))
    if e0 == 0.0:
        return float(t0), y0
    if e1 == 0.0:
        return float(t1), y1
    if e0 * e1 > 0:
        raise ContractViolation("event does not change sign over the bracket")
    a, b = float(t0), float(t1)
    ea = e0
    for _ in range(200):
        mid = 0.5 * (a + b)
        ym = hermite(t0, y0, d0, t1, y1, d1, mid)
        em = float(event(ym))
        if abs(em) <= tol or b - a <= 4 * np.finfo(float).eps * max(1.0, abs(mid)):
            return mid, ym
        if (em < 0) == (ea < 0):
            a, ea = mid, em
        else:
            b = mid
    return mid, ym
