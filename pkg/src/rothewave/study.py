"""Desk-scale convergence and hypothesis studies.

Three study kinds over a shared plan object: a manufactured smooth case
with known exact state (empirical orders; no convergence rate is
guaranteed for this problem class, so the order bracket is a regression
check, not a guarantee), a Cauchy refinement study for nonsmooth laws (consecutive
interpolant distances must not increase), and a hypothesis audit that
tracks structural slacks and initial-data quality across a grid family.

Reports are flat row tables plus a key=value summary so the CLI can emit
byte-stable CSV.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, StepNonconvergence
from .fem1d import FemFunction, FemSpace, norm_V, _GAUSS_W, _GAUSS_X
from .operators import OperatorSuite, build_suite
from .rothe import (
    Load,
    Trajectory,
    bochner_distance,
    energy_report,
    make_interpolants,
    run,
    velocity_gap_identity,
    volume_load,
    _TW,
    _TX,
)
from .stepper import SolverConfig
from .timegrid import TimeGrid, build_grid, check_step_constraint, grid_from_steps


# ---------------------------------------------------------------- manufactured case

@dataclass(frozen=True)
class ManufacturedCase:
    """Smooth benchmark with exact state sin(pi x) cos(t) on the clamped
    domain layout (p = 2, identity damping law, quadratic potential), so
    the multivalued term is single-valued and every error is measurable."""

    suite: OperatorSuite
    alpha: float
    load: Load
    u0: FemFunction
    v0: FemFunction
    horizon: float

    @staticmethod
    def state_fn(t, x):
        return np.sin(np.pi * x) * math.cos(t)

    @staticmethod
    def velocity_fn(t, x):
        return -np.sin(np.pi * x) * math.sin(t)

    def state(self, t: float) -> FemFunction:
        return FemFunction.interpolate(self.suite.space, lambda x: self.state_fn(t, x))

    def velocity(self, t: float) -> FemFunction:
        return FemFunction.interpolate(self.suite.space, lambda x: self.velocity_fn(t, x))


def manufactured_case(num_elements: int = 200, alpha: float = 1.0,
                      horizon: float = 1.0) -> ManufacturedCase:
    suite = build_suite("domain", num_elements, 2.0, alpha=alpha, delta=0.0,
                        g_name="identity", j_name="quadratic", j_scale=1.0)
    pi2 = math.pi ** 2
    prof = lambda t: pi2 * math.cos(t) - (alpha * pi2 + 2.0) * math.sin(t)
    load = volume_load(suite.space, lambda x: np.sin(np.pi * x), prof)
    u0 = FemFunction.interpolate(suite.space, lambda x: np.sin(np.pi * x))
    v0 = FemFunction.zero(suite.space)
    return ManufacturedCase(suite=suite, alpha=alpha, load=load, u0=u0, v0=v0,
                            horizon=horizon)


def manufactured_strong_residual(case: ManufacturedCase, num_t: int = 40,
                                 num_x: int = 80) -> float:
    """Max pointwise defect of the exact state in the strong equation,
    assembled term by term (acceleration, velocity diffusion, damping law,
    elasticity, lower order, feedback) against the packaged load."""
    a = case.alpha
    ts = np.linspace(0.0, case.horizon, num_t)
    xs = np.linspace(0.0, 1.0, num_x)
    worst = 0.0
    pi2 = math.pi ** 2
    for t in ts:
        s = np.sin(np.pi * xs)
        u_tt = -s * math.cos(t)
        vel_diffusion = -a * pi2 * s * math.sin(t)  # -alpha (d_xx u'), d_xx u' = pi^2 s sin t
        damping = -s * math.sin(t)                             # g(u') with g = id
        elastic = pi2 * s * math.cos(t)                        # -d_xx u
        lower = s * math.cos(t)                                # |u|^0 u
        feedback = -s * math.sin(t)                            # selection of the quadratic law
        total = u_tt + vel_diffusion + damping + elastic + lower + feedback
        f = s * float(case.load.profile(t))
        worst = max(worst, float(np.max(np.abs(total - f))))
    return worst


def velocity_error(case: ManufacturedCase, traj: Trajectory) -> float:
    """||v_tau - u'_exact|| in L^2(0,T;H), 5-point Gauss in time per piece
    against the nodal interpolant of the exact velocity."""
    fam = make_interpolants(traj)
    mass = traj.space.mass_free
    bps = fam.v.breakpoints
    total = 0.0
    for i in range(fam.v.num_pieces):
        x0, x1 = float(bps[i]), float(bps[i + 1])
        for xg, wg in zip(_TX, _TW):
            t = x0 + (x1 - x0) * float(xg)
            d = fam.v.values[i] - case.velocity(t).coefficients
            total += (x1 - x0) * float(wg) * float(d @ (mass @ d))
    return math.sqrt(max(total, 0.0))


def state_error_max(case: ManufacturedCase, traj: Trajectory) -> float:
    """max_n || u^n - u_exact(t_n) ||_V over the stored states."""
    worst = 0.0
    for n, u in enumerate(traj.u):
        t = float(traj.grid.nodes[n])
        worst = max(worst, norm_V(u - case.state(t)))
    return worst


def contact_case(num_elements: int = 100, j_scale: float = 0.1,
                 amplitude: float = 10.0):
    """Nonsmooth benchmark on the trace layout: cubic-growth damping,
    bounded arctan perturbation, and the piecewise-linear downstep law at
    the contact end.  The ramp load is sized so the contact velocity
    crosses the law's kink during [0, T].

    Returns (suite, u0, v0, load).
    """
    suite = build_suite("trace", num_elements, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=j_scale)
    u0 = FemFunction.zero(suite.space)
    v0 = FemFunction.zero(suite.space)
    load = volume_load(suite.space, lambda x: np.asarray(x, dtype=float),
                       lambda t: amplitude * math.sin(math.pi * t))
    return suite, u0, v0, load


# ---------------------------------------------------------------- plans and reports

@dataclass(frozen=True)
class StudyPlan:
    """Refinement family: strictly increasing step counts over one shared
    horizon, mesh resolution, grid family kind, and solver settings."""

    levels: tuple
    M: int = 200
    grid_kind: str = "uniform"
    T: float = 1.0
    seed: int = 0
    ratio_bound: float = 2.0
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        levels = tuple(int(n) for n in self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigurationError("levels must be strictly increasing, got %r" % (levels,))
        if levels[0] < 3:
            raise ConfigurationError("the coarsest level needs at least 3 steps")
        if self.M < 2:
            raise ConfigurationError("mesh must have at least 2 elements")
        if not self.T > 0.0:
            raise ConfigurationError("horizon must be positive")
        if self.grid_kind not in ("uniform", "random"):
            raise ConfigurationError("grid family must be 'uniform' or 'random'")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class StudyReport:
    """Per-level rows plus an ordered summary block.

    `passed` is the verdict of the study's own checks; `aborted` marks a
    partial report cut short by a solver failure (the rows collected so
    far are kept for post-mortem).
    """

    kind: str
    columns: tuple
    rows: tuple
    summary: tuple
    passed: bool
    aborted: bool = False
    failures: tuple = ()

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row))
        return "\n".join(lines) + "\n"

    def summary_text(self) -> str:
        lines = ["kind=%s" % self.kind]
        lines += ["%s=%s" % (k, _fmt(v)) for k, v in self.summary]
        lines.append("passed=%s" % self.passed)
        lines.append("aborted=%s" % self.aborted)
        for msg in self.failures:
            lines.append("failure=%s" % msg)
        return "\n".join(lines) + "\n"


def _study_grid(plan: StudyPlan, level_index: int) -> TimeGrid:
    """Level grid of the plan's family.  The random family is nested: the
    seeded coarsest grid is refined by exact step halving, which keeps the
    ratio bound and sends the mesh-variation functional to zero."""
    n = plan.levels[level_index]
    if plan.grid_kind == "uniform":
        return build_grid("uniform", n, plan.T)
    base = plan.levels[0]
    if n % base != 0 or (n // base) & (n // base - 1):
        raise ConfigurationError(
            "random-family levels must double from the coarsest, got %r" % (plan.levels,))
    grid = build_grid("random", base, plan.T, seed=plan.seed,
                      ratio_bound=plan.ratio_bound)
    steps = grid.steps
    while steps.size < n:
        steps = np.repeat(steps / 2.0, 2)
    return grid_from_steps(steps)


# ---------------------------------------------------------------- order study

def run_order_study(plan: StudyPlan, alpha: float = 1.0) -> StudyReport:
    """Manufactured-case refinement: velocity and state errors per level,
    successive empirical orders, and the energy-monitor ratios.

    Checks: velocity errors strictly decrease; the family-wide velocity
    order sits in [0.8, 2.2].  A solver failure aborts with the partial
    rows kept.
    """
    if len(plan.levels) < 3:
        raise ConfigurationError("order study needs at least 3 levels")
    case = manufactured_case(plan.M, alpha=alpha, horizon=plan.T)
    columns = ("N", "tau_max", "velocity_error", "velocity_order",
               "state_error_V", "energy_ratio", "accel_dual_sum", "admissible")
    rows, failures = [], []
    errors, ratios, accels = [], [], []
    for i, n in enumerate(plan.levels):
        grid = _study_grid(plan, i)
        report = check_step_constraint(grid, case.suite.ledger)
        if not report.admissible:
            rows.append((n, grid.tau_max, None, None, None, None, None, False))
            failures.append("check:level N=%d inadmissible" % n)
            continue
        try:
            traj = run(case.suite, grid, case.u0, case.v0, case.load, plan.solver)
        except StepNonconvergence as exc:
            failures.append("solver:level N=%d nonconvergence (%s)" % (n, exc))
            return StudyReport(kind="order", columns=columns, rows=tuple(rows),
                               summary=(("levels_completed", len(rows)),),
                               passed=False, aborted=True, failures=tuple(failures))
        err = velocity_error(case, traj)
        energy = energy_report(traj)
        order = None
        if errors:
            order = math.log(errors[-1] / err) / math.log(n / plan.levels[i - 1])
        errors.append(err)
        ratios.append(energy.ratio)
        accels.append(energy.accel_dual_sum)
        rows.append((n, grid.tau_max, err, order, state_error_max(case, traj),
                     energy.ratio, energy.accel_dual_sum, True))

    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    if not decreasing:
        failures.append("check:velocity errors are not strictly decreasing")
    overall = None
    if len(errors) >= 2:
        overall = (math.log(errors[0] / errors[-1])
                   / math.log(plan.levels[len(errors) - 1] / plan.levels[0]))
        if not 0.8 <= overall <= 2.2:
            failures.append("check:velocity order %r outside [0.8, 2.2]" % overall)
    ratio_spread = (max(ratios) / min(ratios)) if ratios and min(ratios) > 0.0 else None
    accel_spread = (max(accels) / min(accels)) if accels and min(accels) > 0.0 else None
    summary = (("velocity_order", overall),
               ("errors_decreasing", decreasing),
               ("energy_ratio_spread", ratio_spread),
               ("accel_sum_spread", accel_spread))
    return StudyReport(kind="order", columns=columns, rows=tuple(rows),
                       summary=summary, passed=not failures,
                       failures=tuple(failures))


# ---------------------------------------------------------------- Cauchy study

def run_cauchy_study(plan: StudyPlan, suite: OperatorSuite, u0: FemFunction,
                     v0: FemFunction, load: Load) -> StudyReport:
    """Consecutive-level interpolant distances on a shared mesh:
    d_i = || v_{level i+1} - v_{level i} || in L^2(0,T;H), exact piecewise
    quadrature on the union of the two half-grids.  Requires d monotone
    nonincreasing across the consecutive pairs."""
    if len(plan.levels) < 2:
        raise ConfigurationError("Cauchy study needs at least 2 levels")
    mass = suite.space.mass_free
    columns = ("N", "tau_max", "energy_ratio", "cauchy_distance", "admissible")
    rows, failures, dists = [], [], []
    prev_fam = None
    for i, n in enumerate(plan.levels):
        grid = _study_grid(plan, i)
        report = check_step_constraint(grid, suite.ledger)
        if not report.admissible:
            rows.append((n, grid.tau_max, None, None, False))
            failures.append("check:level N=%d inadmissible" % n)
            prev_fam = None
            continue
        try:
            traj = run(suite, grid, u0, v0, load, plan.solver)
        except StepNonconvergence as exc:
            failures.append("solver:level N=%d nonconvergence (%s)" % (n, exc))
            return StudyReport(kind="cauchy", columns=columns, rows=tuple(rows),
                               summary=(("levels_completed", len(rows)),),
                               passed=False, aborted=True, failures=tuple(failures))
        fam = make_interpolants(traj)
        d = None
        if prev_fam is not None:
            d = bochner_distance(fam.v, prev_fam.v, mass)
            dists.append(d)
        rows.append((n, grid.tau_max, energy_report(traj).ratio, d, True))
        prev_fam = fam

    for k in range(1, len(dists)):
        if dists[k] > dists[k - 1]:
            failures.append("check:cauchy distance increased between pairs %d and %d"
                            " (%r > %r)" % (k - 1, k, dists[k], dists[k - 1]))
    drop = (dists[0] / dists[-1]) if len(dists) >= 2 and dists[-1] > 0.0 else None
    summary = (("num_distances", len(dists)),
               ("first_distance", dists[0] if dists else None),
               ("last_distance", dists[-1] if dists else None),
               ("total_drop", drop))
    return StudyReport(kind="cauchy", columns=columns, rows=tuple(rows),
                       summary=summary, passed=not failures,
                       failures=tuple(failures))


# ---------------------------------------------------------------- hypothesis audit

def interpolation_error_V(space: FemSpace, fn, dfn, p: float | None = None) -> float:
    """Gradient-seminorm interpolation error of the nodal interpolant of
    fn against the exact derivative dfn, per-element Gauss quadrature."""
    p = space.p if p is None else p
    v = FemFunction.interpolate(space, fn)
    slopes = v.slopes()
    h = space.element_sizes
    x_left = space.mesh_nodes[:-1]
    total = 0.0
    for xg, wg in zip(_GAUSS_X, _GAUSS_W):
        xs = x_left + h * float(xg)
        diff = np.abs(slopes - np.asarray(dfn(xs), dtype=float)) ** p
        total += float(np.sum(h * float(wg) * diff))
    return float(total ** (1.0 / p))


def run_hypothesis_audit(plan: StudyPlan, suite_factory, u0_fn, u0_prime,
                         v0_fn) -> StudyReport:
    """Structural audit across the refinement family: hypothesis slack,
    step-constraint slack, initial-data interpolation error (the mesh
    refines with the level so it can decrease), the scaled initial-velocity
    energy (must stay bounded), and the mesh-variation functional (must
    not increase).  No steps are solved."""
    columns = ("N", "M", "tau_max", "h0_slack", "step_slack",
               "u0_interp_error_V", "tau_v0_V_sq", "sigma", "admissible")
    rows, failures = [], []
    interp_errors, scaled_v0, sigmas = [], [], []
    for i, n in enumerate(plan.levels):
        m = int(round(plan.M * n / plan.levels[0]))
        suite = suite_factory(m)
        grid = _study_grid(plan, i)
        report = check_step_constraint(grid, suite.ledger)
        if not report.admissible:
            rows.append((n, m, grid.tau_max, suite.ledger.h0_margin, report.slack,
                         None, None, grid.sigma, False))
            failures.append("check:level N=%d inadmissible" % n)
            continue
        err = interpolation_error_V(suite.space, u0_fn, u0_prime)
        v0 = FemFunction.interpolate(suite.space, v0_fn)
        scaled = grid.tau_max * norm_V(v0) ** 2
        interp_errors.append(err)
        scaled_v0.append(scaled)
        sigmas.append(grid.sigma)
        rows.append((n, m, grid.tau_max, suite.ledger.h0_margin, report.slack,
                     err, scaled, grid.sigma, True))

    for k in range(1, len(interp_errors)):
        if interp_errors[k] >= interp_errors[k - 1] and interp_errors[k - 1] > 0.0:
            failures.append("check:interpolation error did not decrease at pair %d" % k)
    if scaled_v0 and max(scaled_v0) > 2.0 * scaled_v0[0] + 1e-12:
        failures.append("check:scaled initial-velocity energy grows across levels")
    for k in range(1, len(sigmas)):
        if sigmas[k] > sigmas[k - 1] + 1e-15:
            failures.append("check:mesh-variation functional increased at pair %d" % k)
    summary = (("interp_error_first", interp_errors[0] if interp_errors else None),
               ("interp_error_last", interp_errors[-1] if interp_errors else None),
               ("sigma_first", sigmas[0] if sigmas else None),
               ("sigma_last", sigmas[-1] if sigmas else None),
               ("max_scaled_v0", max(scaled_v0) if scaled_v0 else None))
    return StudyReport(kind="hypothesis", columns=columns, rows=tuple(rows),
                       summary=summary, passed=not failures,
                       failures=tuple(failures))
