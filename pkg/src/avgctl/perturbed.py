"""Evaluation of synthesized feedbacks on the perturbed system.

Two ways of applying a feedback ``u(y, z)`` are provided.  The closed loop
uses ``u(y, F(y))`` along the actual trajectory.  The frozen schedule cuts
time into blocks of length ``Delta(eps) = eps / (2 L_f) * ln(1 / eps)``; on
each block it freezes ``z`` at its starting value, runs a reference copy of
the reduced flow from the block's starting state and applies the feedback
along that reference, open loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .integrate import IntegratorConfig, Trajectory, _check_state, _guarded_step, integrate_perturbed, write_csv
from .models import ProblemSpec, lipschitz_f

DEFAULT_CFG = IntegratorConfig(dt=0.01)


@dataclass
class EvaluationReport:
    epsilon: float
    cost: float
    trajectory: Trajectory
    sup_observable_gap: float = math.nan
    switch_time: float | None = None
    block_length: float | None = None
    block_drift: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not (self.sup_observable_gap >= 0 or math.isnan(self.sup_observable_gap)):
            raise ContractViolation("observable gap must be non-negative")

    @property
    def max_block_drift(self) -> float:
        return math.nan if self.block_drift is None else float(np.max(self.block_drift))

    def to_csv(self, path) -> None:
        write_csv(
            path,
            ["epsilon", "cost", "sup_observable_gap", "switch_time", "block_length", "max_block_drift"],
            [[
                self.epsilon,
                self.cost,
                self.sup_observable_gap,
                math.nan if self.switch_time is None else self.switch_time,
                math.nan if self.block_length is None else self.block_length,
                self.max_block_drift,
            ]],
        )


def observable_gap(traj: Trajectory, averaged) -> float:
    """``sup_t |F(y(t)) - z(t)|`` over the recorded samples."""
    if averaged is None:
        return math.nan
    if traj.times[-1] > averaged.times[-1] + 1e-9:
        raise ContractViolation("averaged trajectory does not cover the run")
    z = averaged.z_at(traj.times)
    return float(np.max(np.abs(traj.observables[:, 0] - z)))


def _stop_level(problem: ProblemSpec, stop_rule):
    if stop_rule is True:
        return problem.stop_level
    if stop_rule in (False, None):
        return None
    return float(stop_rule)


def simulate_closed_loop(
    problem: ProblemSpec,
    policy,
    T: float,
    stop_rule=True,
    *,
    cfg: IntegratorConfig | None = None,
    averaged=None,
    record_stride: int = 10,
) -> EvaluationReport:
    """Run ``u = policy(y, F(y))`` for ``t`` in ``[0, T]``.

    ``stop_rule`` is ``True`` for the problem's stop level, a number for an
    explicit level, or ``False``.  After the first crossing the control is
    zero.  ``cost`` is the discounted cost over ``[0, T]``.
    """
    model = problem.model
    cfg = cfg or DEFAULT_CFG

    def feedback(t, y):
        return policy(y, model.F(y))

    traj = integrate_perturbed(
        problem,
        feedback,
        (0.0, T),
        cfg,
        stop_level=_stop_level(problem, stop_rule),
        record_stride=record_stride,
    )
    return EvaluationReport(
        epsilon=problem.epsilon,
        cost=traj.final_cost,
        trajectory=traj,
        sup_observable_gap=observable_gap(traj, averaged),
        switch_time=traj.switch_time,
    )


def block_length(epsilon: float, L_f: float) -> float:
    """``eps / (2 L_f) * ln(1 / eps)``, in slow time."""
    if not 0 < epsilon < 1:
        raise ContractViolation("the block length needs 0 < eps < 1")
    if not L_f > 0:
        raise ContractViolation("Lipschitz constant must be positive")
    return epsilon / (2.0 * L_f) * math.log(1.0 / epsilon)


def simulate_frozen(
    problem: ProblemSpec,
    policy,
    T: float,
    stop_rule=True,
    *,
    cfg: IntegratorConfig | None = None,
    L_f: float | None = None,
    averaged=None,
    record_stride: int = 10,
) -> EvaluationReport:
    """Apply the feedback block by block along frozen reference trajectories.

    ``block_drift[l]`` is the largest ``|y_eps - y_ref|`` seen on block
    ``l``.  The stop rule works as in the closed loop, with the crossing
    placed by linear interpolation of ``F`` over the step.
    """
    model = problem.model
    cfg = cfg or DEFAULT_CFG
    eps, C, m = problem.epsilon, problem.discount, model.m
    L_f = lipschitz_f(model) if L_f is None else L_f
    delta = block_length(eps, L_f)
    stop = _stop_level(problem, stop_rule)
    zero = np.zeros(model.du)

    n_block = max(1, math.ceil(delta / (eps * cfg.dt) - 1e-9))
    h_nominal = delta / n_block

    # state: y_eps (m), y_ref (m), cost (1); control from the reference copy
    def make_rhs(z_frozen, switched):
        def rhs(t, x):
            y, yr = x[:m], x[m : 2 * m]
            u = zero if switched else model.check_control(np.atleast_1d(policy(yr, z_frozen)))
            out = np.empty(2 * m + 1)
            out[:m] = model.f(u, y) / eps + model.g(u, y)
            out[m : 2 * m] = model.f(u, yr) / eps
            out[2 * m] = math.exp(-C * t) * float(model.r(u, y))
            return out

        return rhs

    y = model.check_state(problem.y0_array)
    x = np.concatenate([y, y, [0.0]])
    t = 0.0
    switched = False
    switch_time = None
    z_prev = float(model.F(y)[0])
    direction = None if stop is None else (1.0 if z_prev < stop else -1.0)
    drifts = []
    times, states, controls, costs = [], [], [], []
    step = 0
    while t < T - 1e-12:
        # new block: freeze the level and restart the reference copy
        x[m : 2 * m] = x[:m]
        z_l = model.F(x[:m])
        t_end = min(t + delta, T)
        drift = 0.0
        rhs = make_rhs(z_l, switched)
        while t < t_end - 1e-12:
            h = min(h_nominal, t_end - t)
            if step % record_stride == 0:
                yr = x[m : 2 * m]
                u = zero if switched else np.atleast_1d(policy(yr, z_l))
                times.append(t)
                states.append(x[:m].copy())
                controls.append(np.array(u, dtype=float))
                costs.append(x[2 * m])
            x_old = x
            x = _guarded_step(rhs, t, x, h)
            _check_state(model, x[:m], t + h)
            if stop is not None and not switched:
                z_new = float(model.F(x[:m])[0])
                if direction * (z_new - stop) >= 0.0:
                    theta = min(max((stop - z_prev) / (z_new - z_prev), 0.0), 1.0) if z_new != z_prev else 1.0
                    x_s = _guarded_step(rhs, t, x_old, theta * h) if theta > 0 else x_old
                    switched = True
                    switch_time = t + theta * h
                    rhs = make_rhs(z_l, True)
                    x = _guarded_step(rhs, switch_time, x_s, (1.0 - theta) * h) if theta < 1 else x_s
                z_prev = z_new
            drift = max(drift, float(np.linalg.norm(x[:m] - x[m : 2 * m])))
            t += h
            step += 1
        drifts.append(drift)
    times.append(t)
    states.append(x[:m].copy())
    controls.append(zero.copy() if switched else np.atleast_1d(policy(x[m : 2 * m], model.F(x[m : 2 * m]))))
    costs.append(x[2 * m])
    states = np.array(states)
    traj = Trajectory(
        times=np.array(times),
        states=states,
        controls=np.array(controls),
        observables=model.F(states),
        running_cost=np.array(costs),
        switch_time=switch_time,
    )
    return EvaluationReport(
        epsilon=eps,
        cost=float(x[2 * m]),
        trajectory=traj,
        sup_observable_gap=observable_gap(traj, averaged),
        switch_time=switch_time,
        block_length=delta,
        block_drift=np.array(drifts),
    )


def averaging_experiment(
    problem: ProblemSpec,
    policy,
    averaged,
    eps_list,
    T: float,
    *,
    cfg: IntegratorConfig | None = None,
    stop_rule=True,
) -> list[dict]:
    """Closed-loop runs over ``eps_list`` compared with the averaged trajectory.

    ``cost_gap`` compares the cost over ``[0, T]`` with the averaged cost
    accumulated over the same horizon.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ContractViolation("eps_list must be strictly descending")
    if averaged.times[-1] < T - 1e-9:
        raise ContractViolation("averaged trajectory does not cover [0, T]")
    R_T = float(np.interp(T, averaged.times, averaged.cost))
    rows = []
    for eps in eps_list:
        prob = ProblemSpec(
            problem.model, eps, problem.discount, problem.y0, problem.z0,
            problem.z_lo, problem.z_hi, problem.stop_level, problem.meta,
        )
        rep = simulate_closed_loop(prob, policy, T, stop_rule, cfg=cfg, averaged=averaged)
        rows.append(
            {
                "epsilon": eps,
                "sup_observable_gap": rep.sup_observable_gap,
                "cost": rep.cost,
                "cost_gap": abs(rep.cost - R_T),
            }
        )
    return rows
