"""Command-line driver.

    avgctl VERB [--config PATH] [--out DIR] [--eps FLOAT] [--grid INT] [--tol FLOAT] [--seed INT]

Verbs: orbit, solve, synthesize, simulate, sweep, reproduce-example2.
Configs are flat JSON objects with a ``schema_version`` key; the bundled
``example2.json`` is used when ``--config`` is absent.  Failures print a JSON
object with an ``error`` code to stderr and exit with status 2.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np

from .errors import AvgCtlError, ConfigError, ContractViolation, ExchangeError, IntegrationError, OrbitError, SolverError
from .integrate import IntegratorConfig, write_csv
from .lp import DualSolution, certificate_diagnostics, default_bases, default_z_grid, solve_dual_exchange
from .models import MODEL_KINDS, ModelSpec, ProblemSpec, check_constant_of_motion
from .orbits import orbits_on_grid, write_orbits
from .perturbed import averaging_experiment, simulate_closed_loop, simulate_frozen
from .synthesis import FeedbackPolicy, integrate_averaged, optimality_gap, tabulate_acg

SCHEMA_VERSION = 1
DUAL_FILE = "dual_solution.json"
VERBS = ("orbit", "solve", "synthesize", "simulate", "sweep", "reproduce-example2")


@dataclass(frozen=True)
class RunConfig:
    schema_version: int
    model: str
    epsilon: float
    discount: float
    y0: tuple
    z0: tuple | None = None
    z_lo: tuple = (-3.0,)
    z_hi: tuple = (-2.05,)
    stop_level: float | None = None
    perturbation_gain: float = 0.0
    target_level: float = -2.05
    N: int = 10
    degree: int = 5
    basis_kind: str = "tensor"
    z_grid_size: int = 20
    control_grid_size: int = 33
    orbit_dt: float = 1e-3
    dt: float = 0.01
    exchange_tol: float = 1e-6
    max_exchange_iter: int = 500
    horizon: float = 80.0
    sweep_eps: tuple = (0.2, 0.1, 0.05, 0.025)
    sweep_horizon: float = 40.0
    seed: int = 0
    out: str = "out"

    def problem(self) -> ProblemSpec:
        model = ModelSpec(self.model, perturbation_gain=self.perturbation_gain, target_level=self.target_level)
        return ProblemSpec(model, self.epsilon, self.discount, self.y0, self.z0, self.z_lo, self.z_hi, self.stop_level)


_REQUIRED = ("schema_version", "model", "epsilon", "discount", "y0")
_INT_RANGES = {
    "N": (1, 30),
    "degree": (0, 10),
    "z_grid_size": (2, 400),
    "control_grid_size": (2, 1000),
    "max_exchange_iter": (1, 100000),
    "seed": (0, 2**63 - 1),
}
_POSITIVE = ("discount", "orbit_dt", "dt", "exchange_tol", "horizon", "sweep_horizon")


def _fail(message, field=None, line=None):
    raise ConfigError(message, field=field, line=line)


def _vector(name, value, length=None):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        _fail(f"{name} must be a number or a list of numbers", field=name)
    if length is not None and len(value) != length:
        _fail(f"{name} must have {length} entries", field=name)
    if not all(math.isfinite(v) for v in value):
        _fail(f"{name} must be finite", field=name)
    return tuple(float(v) for v in value)


def validate_config(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        _fail("config must be a JSON object", line=1)
    known = {f.name for f in fields(RunConfig)}
    for key in raw:
        if key not in known:
            _fail(f"unknown key {key!r}", field=key)
    for key in _REQUIRED:
        if key not in raw:
            _fail(f"missing required key {key!r}", field=key)
    if raw["schema_version"] != SCHEMA_VERSION:
        _fail(f"unsupported schema_version {raw['schema_version']!r}", field="schema_version")
    if raw["model"] not in MODEL_KINDS:
        _fail(f"model must be one of {MODEL_KINDS}", field="model")
    vals = dict(raw)
    for key in ("y0", "z_lo", "z_hi"):
        if key in vals:
            vals[key] = _vector(key, vals[key], 2 if key == "y0" else 1)
    if vals.get("z0") is not None:
        vals["z0"] = _vector("z0", vals["z0"], 1)
    if "sweep_eps" in vals:
        vals["sweep_eps"] = _vector("sweep_eps", vals["sweep_eps"])
        if not vals["sweep_eps"] or any(not 0 < e < 1 for e in vals["sweep_eps"]):
            _fail("sweep_eps entries must lie in (0, 1)", field="sweep_eps")
    for key, (lo, hi) in _INT_RANGES.items():
        if key in vals:
            v = vals[key]
            if isinstance(v, bool) or not isinstance(v, int) or not lo <= v <= hi:
                _fail(f"{key} must be an integer in [{lo}, {hi}]", field=key)
    for key in ("epsilon", "discount", "orbit_dt", "dt", "exchange_tol", "horizon", "sweep_horizon",
                "perturbation_gain", "target_level", "stop_level"):
        if key in vals and vals[key] is not None:
            v = vals[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                _fail(f"{key} must be a finite number", field=key)
            vals[key] = float(v)
    for key in _POSITIVE:
        if key in vals and not vals[key] > 0:
            _fail(f"{key} must be positive", field=key)
    if not 0 < vals["epsilon"] < 1:
        _fail("epsilon must lie in (0, 1)", field="epsilon")
    if vals.get("basis_kind", "tensor") not in ("tensor", "total"):
        _fail("basis_kind must be 'tensor' or 'total'", field="basis_kind")
    if "out" in vals and not isinstance(vals["out"], str):
        _fail("out must be a string", field="out")
    cfg = RunConfig(**vals)
    try:
        cfg.problem()
    except (ContractViolation, ValueError) as exc:
        field = "z0" if "z0" in str(exc) else "y0"
        _fail(str(exc), field=field)
    return cfg


def load_config(path) -> RunConfig:
    """Parse and validate a config file; raises ``ConfigError`` with field or line details."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        _fail(f"cannot read config: {exc}")
    if not text.strip():
        _fail("empty config file", line=1)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(f"parse error: {exc.msg}", line=exc.lineno)
    return validate_config(raw)


def bundled_config(name: str) -> str:
    return str(resources.files("avgctl").joinpath("data", name))


# ---------------------------------------------------------------------------
# pipeline stages


class MissingCertificate(AvgCtlError):
    pass


def _write_summary(path, items) -> None:
    with open(path, "w") as fh:
        for name, value in items:
            fh.write(f"{name} {_fmt(value)}\n")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


class Pipeline:
    def __init__(self, cfg: RunConfig, out: str, dual_path: str | None = None):
        self.cfg = cfg
        self.out = out
        os.makedirs(out, exist_ok=True)
        self.problem = cfg.problem()
        self.model = self.problem.model
        self.dual_path = dual_path or os.path.join(out, DUAL_FILE)
        self._orbits = None
        self.summary = []

    @property
    def z_grid(self) -> np.ndarray:
        if self.model.kind == "rotation_example1":
            return np.linspace(self.problem.z_lo[0], self.problem.z_hi[0], self.cfg.z_grid_size)
        return default_z_grid(self.problem, self.cfg.z_grid_size)

    @property
    def orbits(self):
        if self._orbits is None:
            self._orbits = orbits_on_grid(self.model, self.z_grid, IntegratorConfig(dt=self.cfg.orbit_dt))
        return self._orbits

    def note(self, name, value):
        self.summary.append((name, value))
        print(f"{name} {_fmt(value)}")

    def orbit(self):
        d = os.path.join(self.out, "orbits")
        os.makedirs(d, exist_ok=True)
        write_orbits(self.orbits, d)
        resid = check_constant_of_motion(self.model, 1000, self.cfg.seed)
        self.note("orbit_count", len(self.orbits))
        self.note("period_min", min(o.period for o in self.orbits))
        self.note("period_max", max(o.period for o in self.orbits))
        self.note("conservation_residual", resid)

    def solve(self) -> DualSolution:
        bz, by = default_bases(self.problem, self.z_grid, self.orbits, self.cfg.N, self.cfg.degree, self.cfg.basis_kind)
        start = time.perf_counter()
        dual = solve_dual_exchange(
            self.model, self.problem, bz, by, self.z_grid,
            control_grid=self.cfg.control_grid_size, orbits=self.orbits,
            tol=self.cfg.exchange_tol, max_iter=self.cfg.max_exchange_iter,
        )
        dual.save(self.dual_path)
        diag = certificate_diagnostics(dual)
        write_csv(os.path.join(self.out, "certificate.csv"), ["z", "zeta", "dzeta"], np.column_stack([diag.z, diag.zeta, diag.dzeta]))
        self.note("a_MN", dual.value)
        self.note("max_violation", dual.max_violation)
        self.note("exchange_rounds", dual.iterations)
        self.note("basis_N", bz.N)
        self.note("basis_M", by.M)
        self.note("certificate_monotone", diag.monotone_flag)
        self.note("solve_seconds", round(time.perf_counter() - start, 3))
        return dual

    def load_dual(self) -> DualSolution:
        if not os.path.exists(self.dual_path):
            raise MissingCertificate(f"no dual solution at {self.dual_path}; run 'solve' first")
        return DualSolution.load(self.dual_path)

    def policy(self, dual) -> FeedbackPolicy:
        return FeedbackPolicy(dual, self.model, control_grid=self.cfg.control_grid_size)

    def synthesize(self, dual=None):
        dual = dual or self.load_dual()
        pol = self.policy(dual)
        tables = tabulate_acg(self.model, pol, dual.z_grid, self._orbits_for(dual))
        tables.to_csv(os.path.join(self.out, "acg_tables.csv"))
        avg = integrate_averaged(tables, self.problem.z0[0], self.problem.discount)
        avg.to_csv(os.path.join(self.out, "averaged_trajectory.csv"))
        C = self.problem.discount
        self.note("a_MN", dual.value)
        self.note("R_tilde", avg.R_tilde)
        self.note("R_tilde_tail_bound", avg.tail_bound)
        self.note("certificate_gap", C * avg.R_tilde - dual.value)
        self.note("averaged_gap", optimality_gap(avg.R_tilde, dual.value, C))
        return tables, avg

    def _orbits_for(self, dual):
        if np.array_equal(dual.z_grid, self.z_grid):
            return self.orbits
        return orbits_on_grid(self.model, dual.z_grid, IntegratorConfig(dt=self.cfg.orbit_dt))

    def simulate(self, dual=None):
        dual = dual or self.load_dual()
        pol = self.policy(dual)
        cfg = IntegratorConfig(dt=self.cfg.dt)
        rep = simulate_closed_loop(self.problem, pol, self.cfg.horizon, cfg=cfg)
        rep.trajectory.to_csv(os.path.join(self.out, "closed_loop_trajectory.csv"))
        rep.to_csv(os.path.join(self.out, "closed_loop_report.csv"))
        frozen = simulate_frozen(self.problem, pol, self.cfg.horizon, cfg=cfg)
        frozen.trajectory.to_csv(os.path.join(self.out, "frozen_trajectory.csv"))
        frozen.to_csv(os.path.join(self.out, "frozen_report.csv"))
        C = self.problem.discount
        self.note("epsilon", self.problem.epsilon)
        self.note("R_eps", rep.cost)
        # the fast-time convention eps * int exp(-C eps tau) r dtau gives the same number
        self.note("R_eps_fast_time", rep.cost)
        self.note("switch_time", rep.switch_time if rep.switch_time is not None else math.nan)
        self.note("perturbed_gap", optimality_gap(rep.cost, dual.value, C))
        self.note("R_eps_frozen", frozen.cost)
        self.note("frozen_block_length", frozen.block_length)
        self.note("frozen_max_drift", frozen.max_block_drift)
        self.note("frozen_drift_bound", self.problem.epsilon**0.25)
        return rep

    def sweep(self, dual=None, averaged=None):
        dual = dual or self.load_dual()
        pol = self.policy(dual)
        if averaged is None:
            tables = tabulate_acg(self.model, pol, dual.z_grid, self._orbits_for(dual))
            averaged = integrate_averaged(tables, self.problem.z0[0], self.problem.discount)
        rows = averaging_experiment(
            self.problem, pol, averaged, self.cfg.sweep_eps, self.cfg.sweep_horizon,
            cfg=IntegratorConfig(dt=self.cfg.dt),
        )
        write_csv(
            os.path.join(self.out, "sweep.csv"),
            ["epsilon", "sup_observable_gap", "cost", "cost_gap"],
            [[r["epsilon"], r["sup_observable_gap"], r["cost"], r["cost_gap"]] for r in rows],
        )
        for r in rows:
            self.note(f"sweep_gap_eps_{r['epsilon']:g}", r["sup_observable_gap"])
        return rows

    def reproduce(self):
        self.orbit()
        dual = self.solve()
        _, avg = self.synthesize(dual)
        self.simulate(dual)
        self.sweep(dual, avg)
        _write_summary(os.path.join(self.out, "summary.txt"), self.summary)


ERROR_CODES = (
    (MissingCertificate, "missing-certificate"),
    (ConfigError, "config-error"),
    (ExchangeError, "exchange-not-converged"),
    (SolverError, "solver-error"),
    (IntegrationError, "integration-error"),
    (OrbitError, "orbit-error"),
    (ContractViolation, "contract-violation"),
    (AvgCtlError, "error"),
)


def _error_json(exc: Exception, verb: str) -> dict:
    code = next((c for t, c in ERROR_CODES if isinstance(exc, t)), "error")
    out = {"error": code, "verb": verb, "message": str(exc)}
    if isinstance(exc, ConfigError):
        out["field"] = exc.field
        out["line"] = exc.line
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgctl", description="Averaging-based optimal control of singularly perturbed systems.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", help="run config (JSON); defaults to the bundled Example 2 config")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--eps", type=float, help="override epsilon")
    parser.add_argument("--grid", type=int, help="override the z-grid size")
    parser.add_argument("--tol", type=float, help="override the exchange tolerance")
    parser.add_argument("--seed", type=int, help="override the sampling seed")
    parser.add_argument("--dual", help="dual solution file (default OUT/dual_solution.json)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = args.config or bundled_config("example2.json")
        cfg = load_config(path)
        overrides = {}
        if args.eps is not None:
            overrides["epsilon"] = args.eps
        if args.grid is not None:
            overrides["z_grid_size"] = args.grid
        if args.tol is not None:
            overrides["exchange_tol"] = args.tol
        if args.seed is not None:
            overrides["seed"] = args.seed
        if overrides:
            raw = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
            raw = {k: list(v) if isinstance(v, tuple) else v for k, v in raw.items()}
            raw.update(overrides)
            cfg = validate_config(raw)
        out = args.out or cfg.out
        cfg = replace(cfg, out=out)
        pipe = Pipeline(cfg, out, args.dual)
        if args.verb == "reproduce-example2":
            pipe.reproduce()
        else:
            getattr(pipe, args.verb)()
            _write_summary(os.path.join(out, f"{args.verb}_summary.txt"), pipe.summary)
    except (AvgCtlError, ValueError, OSError) as exc:
        print(json.dumps(_error_json(exc, args.verb)), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
