"""Command-line front end: run, study, check, and grid subcommands over a
single TOML configuration file.

Exit codes are a stable contract: 0 success, 2 solver nonconvergence,
3 configuration or admissibility rejection, 4 failed audit or study
check.  All outputs are deterministic byte streams for a fixed config
(shortest round-trip float formatting, atomic write-then-rename); the
ROTHEWAVE_OUT environment variable overrides the output directory.
"""

import argparse
import math
import os
import sys

try:
    import tomllib
except ImportError:          # Python < 3.11
    import tomli as tomllib

import numpy as np

from .errors import AuditFailure, ConfigurationError, HypothesisViolated, StepNonconvergence
from .fem1d import FemFunction
from .operators import audit_hypotheses, build_suite
from .rothe import (
    energy_report,
    interpolants_csv,
    run,
    trajectory_csv,
    velocity_gap_identity,
    volume_load,
    zero_load,
)
from .stepper import SolverConfig
from .study import (
    StudyPlan,
    manufactured_case,
    run_cauchy_study,
    run_hypothesis_audit,
    run_order_study,
)
from .timegrid import build_grid, check_step_constraint, grid_from_steps, nodes_csv

# every key the config may contain; anything else is rejected
_SECTIONS = {
    "problem": ("kind", "p", "delta", "alpha"),
    "laws": ("g", "j", "j_scale"),
    "mesh": ("M",),
    "grid": ("kind", "N", "T", "ratio", "seed", "ratio_bound", "steps"),
    "solver": ("tol", "eps0", "eps_target", "max_newton"),
    "initial": ("u0", "v0", "u0_scale", "v0_scale"),
    "load": ("kind", "spatial", "profile", "amplitude", "omega"),
    "output": ("directory",),
    "study": ("kind", "levels"),
}

_SPATIAL = {
    "zero": (lambda x: np.zeros_like(x), lambda x: np.zeros_like(x)),
    "one": (lambda x: np.ones_like(x), lambda x: np.zeros_like(x)),
    "ramp": (lambda x: np.asarray(x, dtype=float), lambda x: np.ones_like(x)),
    "sine": (lambda x: np.sin(np.pi * x), lambda x: np.pi * np.cos(np.pi * x)),
    "sine_half": (lambda x: np.sin(0.5 * np.pi * x),
                  lambda x: 0.5 * np.pi * np.cos(0.5 * np.pi * x)),
}


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError("cannot read config %r: %s" % (path, exc))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError("malformed config %r: %s" % (path, exc))
    for section, body in data.items():
        if section not in _SECTIONS:
            raise ConfigurationError("unknown section [%s]" % section)
        if not isinstance(body, dict):
            raise ConfigurationError("section [%s] must be a table" % section)
        for key in body:
            if key not in _SECTIONS[section]:
                raise ConfigurationError("unknown key %r in section [%s]" % (key, section))
    return data


def _get(cfg: dict, section: str, key: str, default=None, required: bool = False):
    body = cfg.get(section, {})
    if key not in body:
        if required:
            raise ConfigurationError("missing required key %r in section [%s]" % (key, section))
        return default
    return body[key]


def _spatial(name: str):
    if name not in _SPATIAL:
        raise ConfigurationError("unknown spatial profile %r (choose from %s)"
                                 % (name, sorted(_SPATIAL)))
    return _SPATIAL[name]


def build_solver_config(cfg: dict) -> SolverConfig:
    return SolverConfig(
        tol=float(_get(cfg, "solver", "tol", 1e-8)),
        eps0=float(_get(cfg, "solver", "eps0", 1e-2)),
        eps_target=float(_get(cfg, "solver", "eps_target", 1e-6)),
        max_newton=int(_get(cfg, "solver", "max_newton", 60)),
    )


def build_grid_from_config(cfg: dict):
    kind = str(_get(cfg, "grid", "kind", "uniform"))
    T = float(_get(cfg, "grid", "T", 1.0))
    if kind == "explicit":
        steps = _get(cfg, "grid", "steps", required=True)
        return grid_from_steps([float(s) for s in steps])
    n = int(_get(cfg, "grid", "N", required=True))
    ratio = _get(cfg, "grid", "ratio")
    seed = int(_get(cfg, "grid", "seed", 0))
    bound = float(_get(cfg, "grid", "ratio_bound", 2.0))
    return build_grid(kind, n, T,
                      ratio=None if ratio is None else float(ratio),
                      seed=seed, ratio_bound=bound)


def _initial_function(space, name: str, scale: float) -> FemFunction:
    fn, _ = _spatial(name)
    return scale * FemFunction.interpolate(space, fn)


def build_problem(cfg: dict):
    """Suite plus initial data and load from the config; the manufactured
    kind fixes everything except mesh resolution and the damping weight."""
    kind = str(_get(cfg, "problem", "kind", required=True))
    m = int(_get(cfg, "mesh", "M", 100))
    if kind == "manufactured":
        for section in ("laws", "initial", "load"):
            if section in cfg:
                raise ConfigurationError(
                    "[%s] is fixed by the manufactured problem; remove the section" % section)
        for key in ("p", "delta"):
            if key in cfg.get("problem", {}):
                raise ConfigurationError(
                    "problem key %r is fixed by the manufactured problem" % key)
        alpha = float(_get(cfg, "problem", "alpha", 1.0))
        horizon = float(_get(cfg, "grid", "T", 1.0))
        case = manufactured_case(m, alpha=alpha, horizon=horizon)
        return case.suite, case.u0, case.v0, case.load
    if kind not in ("trace", "domain"):
        raise ConfigurationError(
            "problem kind must be 'trace', 'domain', or 'manufactured', got %r" % kind)
    suite = build_suite(
        kind, m,
        float(_get(cfg, "problem", "p", 2.0)),
        alpha=float(_get(cfg, "problem", "alpha", 1.0)),
        delta=float(_get(cfg, "problem", "delta", 0.0)),
        g_name=str(_get(cfg, "laws", "g", "zero")),
        j_name=str(_get(cfg, "laws", "j", "zero")),
        j_scale=float(_get(cfg, "laws", "j_scale", 1.0)),
    )
    space = suite.space
    u0 = _initial_function(space, str(_get(cfg, "initial", "u0", "zero")),
                           float(_get(cfg, "initial", "u0_scale", 1.0)))
    v0 = _initial_function(space, str(_get(cfg, "initial", "v0", "zero")),
                           float(_get(cfg, "initial", "v0_scale", 1.0)))
    load_kind = str(_get(cfg, "load", "kind", "zero"))
    if load_kind == "zero":
        load = zero_load(space)
    elif load_kind == "separable":
        fn, _ = _spatial(str(_get(cfg, "load", "spatial", required=True)))
        profile_name = str(_get(cfg, "load", "profile", required=True))
        amplitude = float(_get(cfg, "load", "amplitude", 1.0))
        omega = float(_get(cfg, "load", "omega", math.pi))
        if profile_name == "one":
            profile = lambda t: amplitude
        elif profile_name == "sine":
            profile = lambda t: amplitude * math.sin(omega * t)
        elif profile_name == "cosine":
            profile = lambda t: amplitude * math.cos(omega * t)
        else:
            raise ConfigurationError("unknown load profile %r" % profile_name)
        load = volume_load(space, fn, profile)
    else:
        raise ConfigurationError("load kind must be 'zero' or 'separable', got %r" % load_kind)
    return suite, u0, v0, load


def _output_dir(cfg: dict) -> str:
    out = os.environ.get("ROTHEWAVE_OUT")
    if not out:
        out = str(_get(cfg, "output", "directory", "out"))
    os.makedirs(out, exist_ok=True)
    return out


def _write_atomic(directory: str, name: str, text: str) -> None:
    path = os.path.join(directory, name)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def grid_table_csv(grid) -> str:
    """Full grid-parameter table; ratio and increment columns are blank
    where the quantity is undefined, the two family scalars sit on the
    last row."""
    n_steps = grid.num_steps
    lines = ["n,t_n,tau_n,tau_half_n,r_n,gamma_n,c_gamma,sigma"]
    for n in range(n_steps + 1):
        row = [str(n), repr(float(grid.nodes[n]))]
        row.append(repr(grid.tau(n)) if n >= 1 else "")
        row.append(repr(grid.tau_half(n)) if 1 <= n <= n_steps - 1 else "")
        row.append(repr(float(grid.ratios[n - 2])) if n >= 2 else "")
        row.append(repr(float(grid.gamma_n[n - 3])) if n >= 3 else "")
        if n == n_steps:
            row.append(repr(grid.c_gamma))
            row.append(repr(grid.sigma))
        else:
            row.extend(["", ""])
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- subcommands

def cmd_run(path: str) -> int:
    cfg = load_config(path)
    suite, u0, v0, load = build_problem(cfg)
    grid = build_grid_from_config(cfg)
    solver = build_solver_config(cfg)
    traj = run(suite, grid, u0, v0, load, solver)
    gap = velocity_gap_identity(traj)
    energy = energy_report(traj)
    out = _output_dir(cfg)
    _write_atomic(out, "trajectory.csv", trajectory_csv(traj))
    _write_atomic(out, "interpolants.csv", interpolants_csv(traj))
    _write_atomic(out, "grid.csv", nodes_csv(grid))
    _write_atomic(out, "identity.txt", gap.to_text())
    _write_atomic(out, "apriori.txt", energy.to_text())
    print("steps=%d" % (grid.num_steps - 1))
    print("identity_rel_diff=%r" % gap.rel_diff)
    print("energy_ratio=%r" % energy.ratio)
    print("wrote trajectory.csv interpolants.csv grid.csv identity.txt apriori.txt")
    return 0


def cmd_study(path: str) -> int:
    cfg = load_config(path)
    kind = str(_get(cfg, "study", "kind", required=True))
    levels = _get(cfg, "study", "levels", required=True)
    grid_kind = str(_get(cfg, "grid", "kind", "uniform"))
    plan = StudyPlan(
        levels=tuple(int(n) for n in levels),
        M=int(_get(cfg, "mesh", "M", 100)),
        grid_kind=grid_kind,
        T=float(_get(cfg, "grid", "T", 1.0)),
        seed=int(_get(cfg, "grid", "seed", 0)),
        ratio_bound=float(_get(cfg, "grid", "ratio_bound", 2.0)),
        solver=build_solver_config(cfg),
    )
    if kind == "order":
        if str(_get(cfg, "problem", "kind", required=True)) != "manufactured":
            raise ConfigurationError("the order study requires problem kind 'manufactured'")
        report = run_order_study(plan, alpha=float(_get(cfg, "problem", "alpha", 1.0)))
    elif kind == "cauchy":
        suite, u0, v0, load = build_problem(cfg)
        report = run_cauchy_study(plan, suite, u0, v0, load)
    elif kind == "hypothesis":
        problem_kind = str(_get(cfg, "problem", "kind", required=True))
        if problem_kind == "manufactured":
            alpha = float(_get(cfg, "problem", "alpha", 1.0))
            factory = lambda m: manufactured_case(m, alpha=alpha).suite
            u0_name, u0_scale = "sine", 1.0
            v0_name, v0_scale = "zero", 1.0
        else:
            if problem_kind not in ("trace", "domain"):
                raise ConfigurationError("unknown problem kind %r" % problem_kind)
            p = float(_get(cfg, "problem", "p", 2.0))
            alpha = float(_get(cfg, "problem", "alpha", 1.0))
            delta = float(_get(cfg, "problem", "delta", 0.0))
            g_name = str(_get(cfg, "laws", "g", "zero"))
            j_name = str(_get(cfg, "laws", "j", "zero"))
            j_scale = float(_get(cfg, "laws", "j_scale", 1.0))
            factory = lambda m: build_suite(problem_kind, m, p, alpha=alpha,
                                            delta=delta, g_name=g_name,
                                            j_name=j_name, j_scale=j_scale)
            u0_name = str(_get(cfg, "initial", "u0", "zero"))
            u0_scale = float(_get(cfg, "initial", "u0_scale", 1.0))
            v0_name = str(_get(cfg, "initial", "v0", "zero"))
            v0_scale = float(_get(cfg, "initial", "v0_scale", 1.0))
        u0_fn, u0_prime = _spatial(u0_name)
        v0_fn, _ = _spatial(v0_name)
        report = run_hypothesis_audit(
            plan, factory,
            lambda x: u0_scale * u0_fn(x),
            lambda x: u0_scale * u0_prime(x),
            lambda x: v0_scale * v0_fn(x))
    else:
        raise ConfigurationError(
            "study kind must be 'order', 'cauchy', or 'hypothesis', got %r" % kind)

    out = _output_dir(cfg)
    _write_atomic(out, "study.csv", report.to_csv())
    _write_atomic(out, "summary.txt", report.summary_text())
    sys.stdout.write(report.summary_text())
    print("wrote study.csv summary.txt")
    if report.aborted:
        return 2
    return 0 if report.passed else 4


def cmd_check(path: str) -> int:
    cfg = load_config(path)
    suite, _, _, _ = build_problem(cfg)
    grid = build_grid_from_config(cfg)
    print(suite.ledger.report_text(), end="")
    try:
        constraint = check_step_constraint(grid, suite.ledger)
    except HypothesisViolated as exc:
        print("check failed: %s" % exc)
        return 4
    print("step_bound=%r" % constraint.bound)
    print("tau_max=%r" % constraint.tau_max)
    print("admissible=%s" % ("true" if constraint.admissible else "false"))
    try:
        audit = audit_hypotheses(suite)
    except AuditFailure as exc:
        print("check failed: %s" % exc)
        return 4
    print(audit.to_text(), end="")
    if not constraint.admissible:
        print("check failed: tau_max exceeds the step bound")
        return 4
    print("check passed")
    return 0


def cmd_grid(path: str) -> int:
    cfg = load_config(path)
    grid = build_grid_from_config(cfg)
    sys.stdout.write(grid_table_csv(grid))
    return 0


# ---------------------------------------------------------------- entry point

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rothewave",
        description="variable-step solver for second-order evolution inclusions")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "solve one configuration end to end"),
                            ("study", "run a refinement study"),
                            ("check", "audit constants, hypotheses, and the step bound"),
                            ("grid", "print the grid-parameter table")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the TOML configuration file")
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "study": cmd_study, "check": cmd_check, "grid": cmd_grid}
    try:
        return handlers[args.command](args.config)
    except ConfigurationError as exc:
        print("configuration error: %s" % exc, file=sys.stderr)
        return 3
    except StepNonconvergence as exc:
        print("solver failure: %s" % exc, file=sys.stderr)
        return 2
    except AuditFailure as exc:
        print("audit failure: %s" % exc, file=sys.stderr)
        return 4


def entry() -> None:
    sys.exit(main())
