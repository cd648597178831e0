"""Time-stepping driver and trajectory analysis.

Runs the variable-step scheme end to end: averaged loads, the admissibility
gate, one certified inclusion solve per node, and the exact update
u^{n+1} = u^n + tau_{n+1} v^n.  Completed trajectories are frozen and feed
the half-grid interpolants (piecewise-constant and piecewise-linear
velocity, displacement, selection, and load), Bochner-norm quadrature,
the running-integral operator, the velocity-gap identity, the energy
estimate monitors, and the dual-jump diagnostics.

All Bochner integrals here are exact: every integrand is piecewise
polynomial of degree <= 2 in t, so per-piece Simpson quadrature is not an
approximation.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import AuditFailure, ConfigurationError, InadmissibleStep, StepNonconvergence
from .fem1d import FemFunction, FemSpace, dual_norm_surrogate, norm_H, norm_V, norm_W, _GAUSS_W, _element_gauss_values
from .operators import OperatorSuite
from .stepper import SolverConfig, StepProblem, solve_step, verify_step
from .timegrid import TimeGrid, check_step_constraint

# 5-point Gauss-Legendre on [0, 1]; exact for time polynomials to degree 9.
_TX, _TW = np.polynomial.legendre.leggauss(5)
_TX = 0.5 * (_TX + 1.0)
_TW = 0.5 * _TW


# ---------------------------------------------------------------- loads

@dataclass(frozen=True)
class Load:
    """Separable right-hand side profile(t) * spatial, with the spatial
    part already in dual (load-vector) coordinates over the free nodes."""

    profile: object
    spatial: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "spatial", np.asarray(self.spatial, dtype=float))
        if self.spatial.ndim != 1:
            raise ConfigurationError("spatial load part must be a vector")
        if not callable(self.profile):
            raise ConfigurationError("load profile must be callable")

    def at(self, t: float) -> np.ndarray:
        return float(self.profile(t)) * self.spatial


def volume_load(space: FemSpace, fn, profile=None) -> Load:
    """Load from a vectorized spatial density fn(x): dual coordinates via
    the mass matrix of the nodal interpolant."""
    full = np.asarray(fn(space.mesh_nodes), dtype=float)
    dual = (space.mass_full @ full)[space.free]
    return Load(profile if profile is not None else (lambda t: 1.0), dual)


def dual_load(space: FemSpace, dual, profile=None) -> Load:
    dual = np.asarray(dual, dtype=float)
    if dual.shape != (space.n_free,):
        raise ConfigurationError("dual load length %d, expected %d" % (dual.size, space.n_free))
    return Load(profile if profile is not None else (lambda t: 1.0), dual)


def zero_load(space: FemSpace) -> Load:
    return Load(lambda t: 0.0, np.zeros(space.n_free))


def average_rhs(load: Load, grid: TimeGrid) -> tuple:
    """Window averages f^n = (1/tau_{n+1/2}) int_{t_{n-1/2}}^{t_{n+1/2}} f dt
    for n = 1..N-1, as dual vectors.

    The window is split at the node t_n and each half gets 5-point Gauss,
    so polynomial profiles up to degree 9 are averaged exactly.
    """
    out = []
    for n in range(1, grid.num_steps):
        t0 = grid.t_half(n - 1)
        tn = float(grid.nodes[n])
        t1 = grid.t_half(n)
        acc = 0.0
        for a, b in ((t0, tn), (tn, t1)):
            pts = a + (b - a) * _TX
            acc += (b - a) * float(np.dot(_TW, [float(load.profile(t)) for t in pts]))
        out.append((acc / grid.tau_half(n)) * load.spatial)
    return tuple(out)


# ---------------------------------------------------------------- trajectory

@dataclass(frozen=True)
class StepDiagnostics:
    """Independently re-checked per-step certificate numbers."""

    n: int
    iterations: int
    residual: float
    eps: float
    graph_distance: float
    graph_budget: float


@dataclass(frozen=True)
class Trajectory:
    """States u^0..u^N, velocities v^0..v^{N-1}, selections eta^1..eta^{N-1},
    averaged loads, and per-step diagnostics on one grid.

    A partial trajectory (attached to errors for post-mortem) satisfies the
    same length relations with fewer steps; `complete` distinguishes them.
    """

    suite: OperatorSuite
    grid: TimeGrid
    u: tuple
    v: tuple
    eta: tuple
    loads: tuple
    diagnostics: tuple
    admissibility: object = field(repr=False, default=None)

    def __post_init__(self):
        for name in ("u", "v", "eta", "loads", "diagnostics"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.u) != len(self.v) + 1:
            raise ConfigurationError("need one more state than velocities")
        if len(self.eta) != len(self.v) - 1 or len(self.diagnostics) != len(self.eta):
            raise ConfigurationError("selection/diagnostic counts do not match the steps")

    @property
    def space(self) -> FemSpace:
        return self.u[0].space

    @property
    def complete(self) -> bool:
        return len(self.v) == self.grid.num_steps

    def velocity_jumps(self) -> list:
        """v^j - v^{j-1} for j = 1..(solved steps)."""
        return [self.v[j] - self.v[j - 1] for j in range(1, len(self.v))]


def run(suite: OperatorSuite, grid: TimeGrid, u0: FemFunction, v0: FemFunction,
        load: Load, config: SolverConfig | None = None) -> Trajectory:
    """Drive the full scheme on an admissible grid.

    Gates on the structural hypothesis and the step-size bound before any
    step executes.  Every accepted step is re-verified independently of the
    solver's own bookkeeping; the first failed certificate aborts the run.
    Nonconvergence and certificate failures carry the partial trajectory
    on the exception as `partial`.
    """
    config = SolverConfig() if config is None else config
    if u0.space is not suite.space or v0.space is not suite.space:
        raise ConfigurationError("initial data must live on the suite's space")
    report = check_step_constraint(grid, suite.ledger)
    if not report.admissible:
        raise InadmissibleStep(
            "tau_max = %r exceeds the step bound %r" % (grid.tau_max, report.bound))
    loads = average_rhs(load, grid)

    u = [u0, u0 + grid.tau(1) * v0]
    v = [v0]
    eta, diags = [], []
    for n in range(1, grid.num_steps):
        prob = StepProblem(n=n, tau_half=grid.tau_half(n), t=float(grid.nodes[n]),
                           u=u[n], v_prev=v[n - 1], f=loads[n - 1])
        try:
            sol = solve_step(suite, prob, config, step_bound=report.bound)
        except StepNonconvergence as exc:
            exc.partial = Trajectory(suite, grid, u, v, eta, loads, diags, report)
            raise
        cert = verify_step(suite, prob, sol, config.tol)
        if not cert.ok:
            err = AuditFailure(
                "step %d certificate failed: residual=%r graph_distance=%r budget=%r"
                % (n, cert.residual, cert.graph_dist, cert.graph_budget),
                witness={"step": n, "certificate": cert})
            err.partial = Trajectory(suite, grid, u, v, eta, loads, diags, report)
            raise err
        v.append(sol.v)
        eta.append(sol.eta)
        diags.append(StepDiagnostics(n=n, iterations=sol.iterations,
                                     residual=cert.residual, eps=sol.eps,
                                     graph_distance=cert.graph_dist,
                                     graph_budget=cert.graph_budget))
        u.append(u[n] + grid.tau(n + 1) * sol.v)
    return Trajectory(suite, grid, u, v, eta, loads, diags, report)


# ---------------------------------------------------------------- interpolants

@dataclass(frozen=True)
class Interpolant:
    """Half-grid interpolant with pieces (b_i, b_{i+1}]; the first piece is
    closed on the left.  "constant" stores one row per piece, "linear" one
    row per breakpoint (continuous by construction)."""

    breakpoints: np.ndarray
    kind: str
    values: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0.0):
            raise ConfigurationError("breakpoints must be strictly increasing")
        if self.kind not in ("constant", "linear"):
            raise ConfigurationError("kind must be 'constant' or 'linear', got %r" % (self.kind,))
        rows = b.size - 1 if self.kind == "constant" else b.size
        if vals.shape[0] != rows:
            raise ConfigurationError("expected %d value rows, got %d" % (rows, vals.shape[0]))
        b.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", vals)

    @property
    def num_pieces(self) -> int:
        return self.breakpoints.size - 1

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def piece_index(self, t: float) -> int:
        if t < self.breakpoints[0] or t > self.breakpoints[-1]:
            raise ConfigurationError("t = %r outside [%r, %r]"
                                     % (t, self.breakpoints[0], self.breakpoints[-1]))
        return max(0, int(np.searchsorted(self.breakpoints, t, side="left")) - 1)

    def piece_eval(self, i: int, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self.values[i]
        b0 = self.breakpoints[i]
        b1 = self.breakpoints[i + 1]
        w = (t - b0) / (b1 - b0)
        return (1.0 - w) * self.values[i] + w * self.values[i + 1]

    def evaluate(self, t: float) -> np.ndarray:
        return self.piece_eval(self.piece_index(t), t)

    def piece_slope(self, i: int) -> np.ndarray:
        """d/dt on piece i (zero rows for the constant kind)."""
        if self.kind == "constant":
            return np.zeros(self.values.shape[1])
        return (self.values[i + 1] - self.values[i]) / (self.breakpoints[i + 1] - self.breakpoints[i])


def half_breakpoints(grid: TimeGrid) -> np.ndarray:
    """[0, t_{1/2}, ..., t_{N-1/2}, T]: N+1 pieces."""
    return np.concatenate(([0.0], grid.half_nodes, [grid.horizon]))


@dataclass(frozen=True)
class InterpolantFamily:
    """The five half-grid interpolants of one trajectory."""

    u: Interpolant
    v: Interpolant
    v_hat: Interpolant
    eta: Interpolant
    f: Interpolant


def make_interpolants(traj: Trajectory) -> InterpolantFamily:
    """Build the half-grid interpolants, including the padding rules:
    u and f vanish on the first and last half-intervals, v and eta repeat
    their boundary values, and the linear v_hat starts at v^0."""
    if not traj.complete:
        raise ConfigurationError("interpolants need a complete trajectory")
    bps = half_breakpoints(traj.grid)
    vc = [fn.coefficients for fn in traj.v]
    uc = [fn.coefficients for fn in traj.u]
    zero = np.zeros_like(vc[0])

    u_rows = [zero] + uc[1:-1] + [zero]
    v_rows = vc + [vc[-1]]
    vhat_rows = [vc[0]] + vc + [vc[-1]]
    eta_rows = [np.atleast_1d(np.asarray(e, dtype=float)) for e in traj.eta]
    eta_rows = [eta_rows[0]] + eta_rows + [eta_rows[-1]]
    f_zero = np.zeros_like(traj.loads[0])
    f_rows = [f_zero] + list(traj.loads) + [f_zero]

    return InterpolantFamily(
        u=Interpolant(bps, "constant", np.vstack(u_rows)),
        v=Interpolant(bps, "constant", np.vstack(v_rows)),
        v_hat=Interpolant(bps, "linear", np.vstack(vhat_rows)),
        eta=Interpolant(bps, "constant", np.vstack(eta_rows)),
        f=Interpolant(bps, "constant", np.vstack(f_rows)),
    )


# ---------------------------------------------------------------- Bochner quadrature

def _quad_form(gram):
    if gram is None:
        return lambda w: float(w @ w)
    return lambda w: float(w @ (gram @ w))


def bochner_sq(a: Interpolant, b: Interpolant | None = None, gram=None,
               pieces=None) -> float:
    """Exact squared L^2(0,T; .) distance between interpolants.

    The squared norm of an affine-in-t integrand is quadratic per piece, so
    Simpson on each union subinterval is exact.  `gram` is the spatial Gram
    matrix (None means the plain dot product).  `pieces` restricts the
    integral to the given piece indices of the union partition.
    """
    if b is not None and a.values.shape[1] != b.values.shape[1]:
        raise ConfigurationError("interpolants have different spatial dimension")
    q = _quad_form(gram)
    if b is None or np.array_equal(a.breakpoints, b.breakpoints):
        cuts = a.breakpoints
    else:
        cuts = np.union1d(a.breakpoints, b.breakpoints)
    total = 0.0
    index = range(cuts.size - 1) if pieces is None else pieces
    for i in index:
        x0, x1 = float(cuts[i]), float(cuts[i + 1])
        xm = 0.5 * (x0 + x1)
        ia = a.piece_index(xm)
        ib = b.piece_index(xm) if b is not None else None

        def diff(t):
            w = a.piece_eval(ia, t)
            return w - b.piece_eval(ib, t) if b is not None else w

        total += (x1 - x0) / 6.0 * (q(diff(x0)) + 4.0 * q(diff(xm)) + q(diff(x1)))
    return total


def bochner_distance(a: Interpolant, b: Interpolant | None = None, gram=None) -> float:
    return float(np.sqrt(max(bochner_sq(a, b, gram), 0.0)))


# ---------------------------------------------------------------- running integral

def apply_K(w: Interpolant, t: float) -> np.ndarray:
    """(Kw)(t) = int_0^t w(s) ds for a piecewise-constant interpolant;
    exact cumulative sum plus the partial piece."""
    if w.kind != "constant":
        raise ConfigurationError("running integral expects the constant kind")
    i = w.piece_index(t)
    lens = np.diff(w.breakpoints)
    acc = lens[:i] @ w.values[:i] if i > 0 else np.zeros(w.values.shape[1])
    return acc + (t - w.breakpoints[i]) * w.values[i]


def antiderivative(w: Interpolant) -> Interpolant:
    """K(w) as a continuous piecewise-linear interpolant on the same
    breakpoints (exact: w is constant per piece)."""
    if w.kind != "constant":
        raise ConfigurationError("running integral expects the constant kind")
    lens = np.diff(w.breakpoints)
    rows = np.vstack([np.zeros(w.values.shape[1]),
                      np.cumsum(lens[:, None] * w.values, axis=0)])
    return Interpolant(w.breakpoints, "linear", rows)


@dataclass(frozen=True)
class RecoveryReport:
    """L^2(0,T;V) defect of u^0 + K v against the displacement interpolant.

    The displacement interpolant is defined to vanish on the first and last
    half-intervals, which makes those two pieces artificially heavy; they
    are reported separately from the interior.
    """

    total: float
    interior: float
    endpoints: float


def recovery_report(traj: Trajectory) -> RecoveryReport:
    fam = make_interpolants(traj)
    ku = antiderivative(fam.v)
    shifted = Interpolant(ku.breakpoints, "linear", ku.values + traj.u[0].coefficients)
    gram = traj.space.stiffness_free
    last = fam.u.num_pieces - 1
    interior = bochner_sq(shifted, fam.u, gram, pieces=range(1, last))
    ends = bochner_sq(shifted, fam.u, gram, pieces=(0, last))
    return RecoveryReport(total=float(np.sqrt(interior + ends)),
                          interior=float(np.sqrt(interior)),
                          endpoints=float(np.sqrt(ends)))


# ---------------------------------------------------------------- identities and monitors

@dataclass(frozen=True)
class GapIdentityReport:
    """Squared Bochner gap between the linear and constant velocity
    interpolants versus its closed jump-sum form, plus the tau_max bound."""

    lhs: float
    rhs: float
    rel_diff: float
    bound: float
    bound_holds: bool

    def to_text(self) -> str:
        lines = ["gap_sq_quadrature=%r" % self.lhs,
                 "gap_sq_jump_form=%r" % self.rhs,
                 "rel_diff=%r" % self.rel_diff,
                 "tau_max_bound=%r" % self.bound,
                 "bound_holds=%s" % self.bound_holds]
        return "\n".join(lines) + "\n"


def velocity_gap_identity(traj: Trajectory) -> GapIdentityReport:
    """||v_hat - v||^2 in L^2(0,T;H) equals (1/3) sum tau_{j+1/2} |v^j - v^{j-1}|^2
    exactly; both evaluations are returned with their relative difference."""
    fam = make_interpolants(traj)
    mass = traj.space.mass_free
    lhs = bochner_sq(fam.v_hat, fam.v, mass)
    jumps = traj.velocity_jumps()
    jump_sq = [norm_H(d) ** 2 for d in jumps]
    rhs = sum(traj.grid.tau_half(j) * jump_sq[j - 1] for j in range(1, len(traj.v))) / 3.0
    bound = traj.grid.tau_max / 3.0 * sum(jump_sq)
    if lhs == rhs:
        rel = 0.0
    else:
        rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
    holds = max(lhs, rhs) <= bound * (1.0 + 1e-12) + 1e-300
    return GapIdentityReport(lhs=lhs, rhs=rhs, rel_diff=rel, bound=bound, bound_holds=holds)


def eta_dual_norm(space: FemSpace, eta, q: float) -> float:
    """Dual-target norm of one selection: |eta| at the contact node for the
    trace layout, the L^q(0,1) norm of the nodal selection for the domain
    layout."""
    if space.boundary_split == "trace":
        return abs(float(np.asarray(eta).reshape(())))
    full = np.asarray(eta, dtype=float)
    if full.shape != (space.n_nodes,):
        raise ConfigurationError("domain selection must be nodal, got shape %r" % (full.shape,))
    vals = _element_gauss_values(space, full)
    integral = np.sum(space.element_sizes[:, None] * _GAUSS_W * np.abs(vals) ** q)
    return float(integral ** (1.0 / q))


@dataclass(frozen=True)
class EnergyReport:
    """Energy-estimate monitors.

    lhs bundles the final-state energy, the velocity-jump sum, the
    W-seminorm dissipation, and the selection dual sum; rhs bundles the
    data terms.  The unquantified stability constant is tracked as the
    lhs/rhs ratio across refinement instead of being asserted pointwise.
    accel_dual_sum is the dual-surrogate bound on the discrete acceleration.
    """

    u_final_V_sq: float
    v_final_H_sq: float
    jump_sq_sum: float
    w_dissipation: float
    eta_dual_sum: float
    lhs: float
    rhs: float
    ratio: float
    accel_dual_sum: float

    def to_text(self) -> str:
        lines = ["u_final_V_sq=%r" % self.u_final_V_sq,
                 "v_final_H_sq=%r" % self.v_final_H_sq,
                 "jump_sq_sum=%r" % self.jump_sq_sum,
                 "w_dissipation=%r" % self.w_dissipation,
                 "eta_dual_sum=%r" % self.eta_dual_sum,
                 "lhs=%r" % self.lhs,
                 "rhs=%r" % self.rhs,
                 "ratio=%r" % self.ratio,
                 "accel_dual_sum=%r" % self.accel_dual_sum]
        return "\n".join(lines) + "\n"


def energy_report(traj: Trajectory) -> EnergyReport:
    if not traj.complete:
        raise ConfigurationError("energy monitors need a complete trajectory")
    space = traj.space
    grid = traj.grid
    p = traj.suite.ledger.p
    q = traj.suite.ledger.q
    mass = space.mass_free

    jumps = traj.velocity_jumps()
    jump_sq = sum(norm_H(d) ** 2 for d in jumps)
    w_diss = sum(grid.tau_half(j) * norm_W(traj.v[j]) ** p
                 for j in range(1, len(traj.v)))
    eta_sum = sum(grid.tau_half(j) * eta_dual_norm(space, traj.eta[j - 1], q) ** q
                  for j in range(1, len(traj.v)))
    lhs = (norm_V(traj.u[-1]) ** 2 + norm_H(traj.v[-1]) ** 2
           + jump_sq + w_diss + eta_sum)

    f_sum = sum(grid.tau_half(j) * dual_norm_surrogate(space, traj.loads[j - 1]) ** q
                for j in range(1, len(traj.v)))
    rhs = (1.0 + norm_V(traj.u[0]) + norm_H(traj.v[0]) ** 2
           + grid.tau(1) ** 2 * norm_V(traj.v[0]) ** 2 + f_sum)

    accel = 0.0
    for j in range(1, len(traj.v)):
        th = grid.tau_half(j)
        dual = mass @ (jumps[j - 1].coefficients / th)
        accel += th * dual_norm_surrogate(space, dual) ** q

    return EnergyReport(u_final_V_sq=norm_V(traj.u[-1]) ** 2,
                        v_final_H_sq=norm_H(traj.v[-1]) ** 2,
                        jump_sq_sum=jump_sq,
                        w_dissipation=w_diss,
                        eta_dual_sum=eta_sum,
                        lhs=lhs, rhs=rhs, ratio=lhs / rhs,
                        accel_dual_sum=accel)


@dataclass(frozen=True)
class DualJumpReport:
    """Consecutive-jump dual variation of the constant velocity interpolant.

    jump_sum is sum_k ||v^k - v^{k-1}||^q in the dual surrogate, a lower
    bound for the variation supremum over arbitrary partitions; scaled_bound
    is N^{q-1} times that sum, the partition-free upper-bound form.
    """

    jump_sum: float
    scaled_bound: float
    num_steps: int
    q: float

    def to_text(self) -> str:
        lines = ["jump_sum=%r" % self.jump_sum,
                 "scaled_bound=%r" % self.scaled_bound,
                 "num_steps=%d" % self.num_steps,
                 "q=%r" % self.q]
        return "\n".join(lines) + "\n"


def dual_jump_diagnostics(space: FemSpace, v_tau: Interpolant, q: float) -> DualJumpReport:
    """Jump diagnostics straight off the piecewise-constant interpolant;
    the constant padding of the last piece contributes nothing."""
    if v_tau.kind != "constant":
        raise ConfigurationError("jump diagnostics expect the constant kind")
    mass = space.mass_free
    jump_sum = 0.0
    for k in range(1, v_tau.values.shape[0]):
        d = v_tau.values[k] - v_tau.values[k - 1]
        if not np.any(d):
            continue
        jump_sum += dual_norm_surrogate(space, mass @ d) ** q
    n = v_tau.num_pieces - 1
    return DualJumpReport(jump_sum=jump_sum,
                          scaled_bound=float(n ** (q - 1.0)) * jump_sum,
                          num_steps=n, q=q)


# ---------------------------------------------------------------- exports

def trajectory_csv(traj: Trajectory) -> str:
    """One row per velocity index; diagnostic columns are blank at n = 0
    (no step is solved there)."""
    space = traj.space
    lines = ["n,t_n,v_H,v_W,u_V,step_iterations,step_residual,graph_distance"]
    for n in range(len(traj.v)):
        vals = [str(n), repr(float(traj.grid.nodes[n])),
                repr(norm_H(traj.v[n])), repr(norm_W(traj.v[n])),
                repr(norm_V(traj.u[n]))]
        if n == 0:
            vals += ["", "", ""]
        else:
            d = traj.diagnostics[n - 1]
            vals += [str(d.iterations), repr(d.residual), repr(d.graph_distance)]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


def interpolants_csv(traj: Trajectory) -> str:
    """H-norm traces of the constant and linear velocity interpolants,
    sampled at every breakpoint and piece midpoint."""
    fam = make_interpolants(traj)
    mass = traj.space.mass_free
    bps = fam.v.breakpoints
    ts = sorted(set(map(float, bps)) | {0.5 * (float(bps[i]) + float(bps[i + 1]))
                                        for i in range(bps.size - 1)})
    lines = ["t,v_const_H,v_linear_H"]
    for t in ts:
        wc = fam.v.evaluate(t)
        wl = fam.v_hat.evaluate(t)
        nc = float(np.sqrt(max(wc @ (mass @ wc), 0.0)))
        nl = float(np.sqrt(max(wl @ (mass @ wl), 0.0)))
        lines.append(",".join([repr(t), repr(nc), repr(nl)]))
    return "\n".join(lines) + "\n"
