"""One implicit step of the discrete inclusion.

Given u^n, v^{n-1}, the averaged load f^n and the half step tau, find v^n
and a selection eta^n with

    (1/tau) (v^n - v^{n-1}) + A(t_n, v^n) + B(t_n, u^n) + gamma* eta^n = f^n

in the discrete dual pairing, eta^n in the mollified law at gamma v^n.
The solve smooths the law with width eps, walks eps down a halving ladder
to eps_target, and certifies the returned pair: residual below tolerance
in the dual surrogate norm, selection within the graph-distance budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq

from .errors import ConfigurationError, InadmissibleStep, StepNonconvergence
from .fem1d import FemFunction, dual_norm_surrogate
from .operators import OperatorSuite

__all__ = [
    "SolverConfig",
    "StepProblem",
    "StepSolution",
    "StepCertificate",
    "solve_step",
    "verify_step",
]


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    eps0: float = 1e-2
    eps_target: float = 1e-6
    max_newton: int = 60       # Newton budget per continuation stage
    max_backtracks: int = 30
    relax: float = 0.5         # damping for the Riesz fallback sweep
    max_fallback: int = 40

    def __post_init__(self):
        if not (self.tol > 0.0 and self.eps_target > 0.0 and self.eps0 > 0.0):
            raise ConfigurationError("solver tolerances must be positive")
        if self.max_newton < 1:
            raise ConfigurationError("max_newton must be at least 1")


@dataclass(frozen=True)
class StepProblem:
    n: int
    tau_half: float
    t: float
    u: FemFunction
    v_prev: FemFunction
    f: np.ndarray

    def __post_init__(self):
        if not self.tau_half > 0.0:
            raise ConfigurationError("half step must be positive")
        nf = self.u.space.n_free
        if self.v_prev.space is not self.u.space or np.shape(self.f) != (nf,):
            raise ConfigurationError("step data shapes do not match the space")


@dataclass(frozen=True)
class StepSolution:
    v: FemFunction
    eta: object                      # scalar (trace) or nodal array (domain)
    iterations: int
    residual: float                  # dual surrogate of the final residual
    eps: float                       # final smoothing width
    graph_dist: float
    graph_budget: float
    history: tuple = field(repr=False, default=())


@dataclass(frozen=True)
class StepCertificate:
    residual: float
    graph_dist: float
    graph_budget: float
    residual_ok: bool
    graph_ok: bool

    @property
    def ok(self) -> bool:
        return self.residual_ok and self.graph_ok


def _eps_ladder(suite: OperatorSuite, config: SolverConfig) -> list:
    """Halving ladder eps0, eps0/2, ..., eps_target. Smooth laws skip the
    ladder: nothing blows up as eps shrinks, so one stage suffices."""
    if not suite.potential.breakpoints:
        return [config.eps_target]
    if config.eps0 <= config.eps_target:
        return [config.eps_target]
    ladder = []
    eps = config.eps0
    while eps > config.eps_target:
        ladder.append(eps)
        eps *= 0.5
    ladder.append(config.eps_target)
    return ladder


def solve_step(suite: OperatorSuite, problem: StepProblem,
               config: SolverConfig = SolverConfig(), *,
               step_bound: float | None = None,
               initial_guess: FemFunction | None = None) -> StepSolution:
    """Solve one step; deterministic given the inputs and config.

    step_bound, when given, is the admissible step-size bound from the
    grid check; a half step at or above it is refused outright.
    initial_guess overrides the default warm start v^{n-1}.
    """
    if step_bound is not None and not problem.tau_half < step_bound:
        raise InadmissibleStep(
            "half step %r is not below the admissible bound %r"
            % (problem.tau_half, step_bound))
    space = suite.space
    tau = problem.tau_half
    mass = space.mass_free
    # constant part of the residual: explicit elastic term minus load,
    # minus the mass pairing of v^{n-1}
    base = (suite.apply_B(problem.t, problem.u).total - np.asarray(problem.f, dtype=float)
            - (1.0 / tau) * (mass @ problem.v_prev.coefficients))

    def residual(v: FemFunction, eps: float) -> np.ndarray:
        return ((1.0 / tau) * (mass @ v.coefficients)
                + suite.apply_A(problem.t, v)
                + suite.gamma_pairing(suite.selection(v, eps))
                + base)

    def tangent(v: FemFunction, eps: float) -> sp.csr_matrix:
        return ((1.0 / tau) * mass
                + suite.tangent_A(problem.t, v)
                + suite.gamma_tangent(v, eps)).tocsr()

    v = problem.v_prev if initial_guess is None else initial_guess
    if v.space is not space:
        raise ConfigurationError("initial guess lives on a different space")
    iterations = 0
    history = []
    ladder = _eps_ladder(suite, config)
    for stage, eps in enumerate(ladder):
        final = stage == len(ladder) - 1
        stage_tol = config.tol if final else max(config.tol, 0.05 * eps)
        v, rn, its, ok = _newton_stage(space, residual, tangent, v, eps,
                                       stage_tol, config, history)
        iterations += its
        if not ok and space.boundary_split == "trace":
            v, rn, its = _trace_rescue(suite, problem, mass, base, eps,
                                       stage_tol, config)
            iterations += its
            history.append((eps, rn))
            ok = rn <= stage_tol
        if not ok:
            raise StepNonconvergence(
                "step %d stalled at residual %.3e (eps %.1e, tol %.1e)"
                % (problem.n, rn, eps, stage_tol),
                best=v, history=list(history))
    eps_final = ladder[-1]
    eta = suite.selection(v, eps_final)
    res_final = dual_norm_surrogate(space, residual(v, eps_final))
    worst, budget = suite.selection_certificates(v, eta, eps_final)
    return StepSolution(v=v, eta=eta, iterations=iterations,
                        residual=res_final, eps=eps_final,
                        graph_dist=worst, graph_budget=budget,
                        history=tuple(history))


def _newton_stage(space, residual, tangent, v, eps, stage_tol, config, history):
    """Damped Newton with a Riesz fixed-point fallback when the Newton
    direction yields no decrease. Returns (v, surrogate, iterations, ok)."""
    r = residual(v, eps)
    rn = dual_norm_surrogate(space, r)
    fallback_budget = config.max_fallback
    for it in range(config.max_newton):
        if rn <= stage_tol:
            history.append((eps, rn))
            return v, rn, it, True
        J = tangent(v, eps)
        try:
            step = sp.linalg.spsolve(J.tocsc(), -r)
        except RuntimeError:
            step = None
        improved = False
        if step is not None and np.all(np.isfinite(step)):
            lam = 1.0
            for _ in range(config.max_backtracks):
                cand = FemFunction(space, v.coefficients + lam * step)
                cr = residual(cand, eps)
                crn = dual_norm_surrogate(space, cr)
                if crn <= (1.0 - 1e-4 * lam) * rn:
                    v, r, rn = cand, cr, crn
                    improved = True
                    break
                lam *= 0.5
        if not improved:
            # fixed-point sweep v <- v - omega K^{-1} r, halving omega
            omega = config.relax
            while fallback_budget > 0 and not improved and omega > 1e-12:
                fallback_budget -= 1
                cand = FemFunction(space,
                                   v.coefficients - omega * space.solve_stiffness(r))
                cr = residual(cand, eps)
                crn = dual_norm_surrogate(space, cr)
                if crn < rn:
                    v, r, rn = cand, cr, crn
                    improved = True
                else:
                    omega *= 0.5
            if not improved:
                history.append((eps, rn))
                return v, rn, it + 1, rn <= stage_tol
    history.append((eps, rn))
    return v, rn, config.max_newton, rn <= stage_tol


def _trace_rescue(suite, problem, mass, base, eps, stage_tol, config):
    """Deterministic rescue for the trace layout: eliminate the smooth,
    strongly monotone part and solve the remaining scalar fixed-point
    equation eta = rho_eps(trace of v(eta)) by bracketing.

    The smoothed feedback slope scales like -jump/eps near a downward
    kink, which can leave the full Newton matrix indefinite when the
    trace parks inside the smoothing window; the reduced scalar equation
    has no such failure mode."""
    space = suite.space
    tau = problem.tau_half
    contact = np.zeros(space.n_free)
    contact[-1] = 1.0
    inner_iters = 0

    def smooth_solve(eta: float, start: FemFunction) -> FemFunction:
        nonlocal inner_iters
        v = start
        scale = max(1.0, float(np.linalg.norm(base)) + abs(eta))
        r = ((1.0 / tau) * (mass @ v.coefficients)
             + suite.apply_A(problem.t, v) + base + eta * contact)
        rn = float(np.linalg.norm(r))
        for _ in range(config.max_newton):
            if rn <= 1e-13 * scale:
                break
            J = ((1.0 / tau) * mass + suite.tangent_A(problem.t, v)).tocsc()
            step = sp.linalg.spsolve(J, -r)
            lam = 1.0
            for _ in range(config.max_backtracks):
                cand = FemFunction(space, v.coefficients + lam * step)
                cr = ((1.0 / tau) * (mass @ cand.coefficients)
                      + suite.apply_A(problem.t, cand) + base + eta * contact)
                crn = float(np.linalg.norm(cr))
                if crn <= (1.0 - 1e-4 * lam) * rn:
                    v, r, rn = cand, cr, crn
                    break
                lam *= 0.5
            inner_iters += 1
        return v

    cache = {"v": problem.v_prev}

    def phi(eta: float) -> float:
        v = smooth_solve(eta, cache["v"])
        cache["v"] = v
        return eta - float(suite.potential.mollified(v.trace_value(), eps))

    lo = hi = float(suite.potential.mollified(cache["v"].trace_value(), eps))
    width = max(1.0, abs(lo))
    for _ in range(80):
        lo, hi = lo - width, hi + width
        if phi(lo) <= 0.0 <= phi(hi):
            break
        width *= 2.0
    eta = brentq(phi, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    v = smooth_solve(float(eta), cache["v"])
    res = ((1.0 / tau) * (mass @ v.coefficients) + suite.apply_A(problem.t, v)
           + suite.gamma_pairing(suite.selection(v, eps)) + base)
    return v, dual_norm_surrogate(space, res), inner_iters


def verify_step(suite: OperatorSuite, problem: StepProblem,
                solution: StepSolution, tol: float) -> StepCertificate:
    """Independent certificate: re-assemble the residual from the returned
    pair (v, eta) and re-measure the selection's graph distance, without
    trusting any solver bookkeeping."""
    space = suite.space
    mass = space.mass_free
    r = ((1.0 / problem.tau_half)
         * (mass @ (solution.v.coefficients - problem.v_prev.coefficients))
         + suite.apply_A(problem.t, solution.v)
         + suite.apply_B(problem.t, problem.u).total
         + suite.gamma_pairing(solution.eta)
         - np.asarray(problem.f, dtype=float))
    res = dual_norm_surrogate(space, r)
    worst, budget = suite.selection_certificates(solution.v, solution.eta,
                                                 solution.eps)
    return StepCertificate(residual=res, graph_dist=worst, graph_budget=budget,
                           residual_ok=res <= tol, graph_ok=worst <= budget)
