"""Single-step oracles, certificates, and robustness at the law's kink."""

import numpy as np
import pytest

from rothewave.errors import ConfigurationError, InadmissibleStep, StepNonconvergence
from rothewave.fem1d import FemFunction, norm_H, norm_W
from rothewave.operators import build_suite, subdiff_interval
from rothewave.stepper import SolverConfig, StepProblem, StepSolution, solve_step, verify_step


def make_problem(suite, f, tau=1.0, t=0.0, u=None, v_prev=None, n=1):
    space = suite.space
    return StepProblem(
        n=n, tau_half=tau, t=t,
        u=FemFunction.zero(space) if u is None else u,
        v_prev=FemFunction.zero(space) if v_prev is None else v_prev,
        f=np.asarray(f, dtype=float))


def test_scalar_smooth_step_oracle():
    # one free node, h = 1/2: mass entry 1/3, stiffness entry 4; with
    # alpha = 1/12 the step equation collapses to (1/3) v + (1/3) v = 2/3
    suite = build_suite("domain", 2, 2.0, alpha=1.0 / 12.0, delta=0.0,
                        g_name="zero", j_name="zero")
    sol = solve_step(suite, make_problem(suite, [2.0 / 3.0]))
    assert sol.v.coefficients[0] == pytest.approx(1.0, abs=1e-10)
    assert sol.residual <= 1e-8
    assert sol.iterations <= 3


def test_scalar_inclusion_oracle():
    # v + subdiff |.| (v) owns 0 only at v = 0 with selection 0
    suite = build_suite("domain", 2, 2.0, alpha=1.0, delta=0.0,
                        g_name="zero", j_name="abs")
    sol = solve_step(suite, make_problem(suite, [0.0]))
    assert sol.v.coefficients[0] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(np.asarray(sol.eta), 0.0, atol=1e-12)
    lo, hi = subdiff_interval(suite.potential, 0.0)
    assert lo <= 0.0 <= hi
    assert sol.graph_dist <= sol.graph_budget


def test_consistency_fixed_point():
    suite = build_suite("trace", 10, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=0.1)
    space = suite.space
    rng = np.random.default_rng(4)
    u = FemFunction(space, rng.uniform(-0.5, 0.5, space.n_free))
    v_prev = FemFunction(space, rng.uniform(-0.5, 0.5, space.n_free))
    cfg = SolverConfig()
    eta_bar = suite.selection(v_prev, cfg.eps_target)
    f = (suite.apply_A(0.0, v_prev) + suite.apply_B(0.0, u).total
         + suite.gamma_pairing(eta_bar))
    sol = solve_step(suite, make_problem(suite, f, u=u, v_prev=v_prev), cfg)
    assert norm_H(sol.v - v_prev) <= 1e-10
    assert sol.residual <= 1e-12


def test_monotone_case_unique_solution():
    suite = build_suite("domain", 12, 2.0, alpha=1.0, delta=0.0,
                        g_name="identity", j_name="abs")
    space = suite.space
    rng = np.random.default_rng(9)
    f = rng.standard_normal(space.n_free)
    prob = make_problem(suite, f, tau=0.25)
    cfg = SolverConfig()
    a = solve_step(suite, prob, cfg)
    g1 = FemFunction(space, rng.uniform(-2.0, 2.0, space.n_free))
    b = solve_step(suite, prob, cfg, initial_guess=g1)
    assert norm_H(a.v - b.v) <= 10.0 * cfg.tol


def test_inadmissible_step_refused():
    suite = build_suite("domain", 2, 2.0, alpha=1.0, delta=0.0,
                        g_name="zero", j_name="zero")
    with pytest.raises(InadmissibleStep):
        solve_step(suite, make_problem(suite, [0.0], tau=0.6), step_bound=0.5)
    with pytest.raises(ConfigurationError):
        make_problem(suite, [0.0], tau=-1.0)


def test_certificates_on_generic_solve():
    suite = build_suite("trace", 16, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=0.1)
    space = suite.space
    rng = np.random.default_rng(21)
    u = FemFunction(space, 0.3 * rng.standard_normal(space.n_free))
    v_prev = FemFunction(space, 0.3 * rng.standard_normal(space.n_free))
    f = rng.standard_normal(space.n_free)
    cfg = SolverConfig()
    prob = make_problem(suite, f, tau=1.0 / 16.0, u=u, v_prev=v_prev)
    sol = solve_step(suite, prob, cfg)
    cert = verify_step(suite, prob, sol, cfg.tol)
    assert cert.ok
    assert cert.residual == pytest.approx(sol.residual, rel=1e-9, abs=1e-12)
    assert cert.graph_dist <= cert.graph_budget


def test_kink_straddling_load():
    # place the load so the smoothed equation has its roots around the
    # density's jump; the down-jump makes the step problem nonmonotone,
    # so any certified root is acceptable, not a particular one
    suite = build_suite("trace", 8, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=2.0)
    space = suite.space
    cfg = SolverConfig()
    target = FemFunction.interpolate(space, lambda x: x)  # trace value 1.0
    eta_star = suite.selection(target, cfg.eps_target)
    f = ((1.0 / 0.05) * (space.mass_free @ target.coefficients)
         + suite.apply_A(0.0, target) + suite.gamma_pairing(eta_star))
    prob = make_problem(suite, f, tau=0.05)
    sol = solve_step(suite, prob, cfg)
    cert = verify_step(suite, prob, sol, cfg.tol)
    assert cert.ok
    assert 0.9 <= sol.v.trace_value() <= 1.2


def test_trace_rescue_agrees_with_newton():
    from rothewave.stepper import _trace_rescue

    suite = build_suite("trace", 10, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="quadratic")
    space = suite.space
    rng = np.random.default_rng(17)
    f = rng.standard_normal(space.n_free)
    v_prev = FemFunction(space, 0.2 * rng.standard_normal(space.n_free))
    prob = make_problem(suite, f, tau=0.1, v_prev=v_prev)
    cfg = SolverConfig()
    direct = solve_step(suite, prob, cfg)
    base = (suite.apply_B(prob.t, prob.u).total - prob.f
            - (1.0 / prob.tau_half) * (space.mass_free @ v_prev.coefficients))
    v, res, _its = _trace_rescue(suite, prob, space.mass_free, base,
                                 cfg.eps_target, cfg.tol, cfg)
    assert res <= cfg.tol
    assert norm_H(v - direct.v) <= 1e-7


def test_nonconvergence_carries_best_iterate():
    suite = build_suite("domain", 8, 4.0, alpha=1.0, delta=0.0,
                        g_name="zero", j_name="double_well", j_scale=0.1)
    cfg = SolverConfig(tol=1e-14, max_newton=1, max_fallback=0)
    f = 1e6 * np.ones(suite.space.n_free)
    with pytest.raises(StepNonconvergence) as exc:
        solve_step(suite, make_problem(suite, f), cfg)
    assert isinstance(exc.value.best, FemFunction)
    assert len(exc.value.history) >= 1


def test_deterministic_given_config():
    suite = build_suite("trace", 12, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=0.1)
    space = suite.space
    rng = np.random.default_rng(33)
    f = rng.standard_normal(space.n_free)
    v_prev = FemFunction(space, rng.uniform(-1.0, 1.0, space.n_free))
    prob = make_problem(suite, f, tau=0.1, v_prev=v_prev)
    s1 = solve_step(suite, prob)
    s2 = solve_step(suite, prob)
    assert np.array_equal(s1.v.coefficients, s2.v.coefficients)
    assert s1.residual == s2.residual and s1.iterations == s2.iterations


def test_coercivity_probe_superlinear():
    # <T v, v> / ||v||_W must grow superlinearly along scaled states
    suite = build_suite("trace", 10, 3.0, alpha=1.0, delta=0.0,
                        g_name="arctan", j_name="downstep", j_scale=0.1)
    space = suite.space
    rng = np.random.default_rng(41)
    d = FemFunction(space, rng.standard_normal(space.n_free))
    d = (1.0 / norm_W(d)) * d
    tau, eps = 0.1, 1e-6
    ratios = []
    for scale in (1.0, 10.0, 100.0):
        v = scale * d
        eta = suite.selection(v, eps)
        pair = ((1.0 / tau) * norm_H(v) ** 2
                + float(suite.apply_A(0.0, v) @ v.coefficients)
                + float(suite.gamma_pairing(eta) @ v.coefficients))
        ratios.append(pair / norm_W(v))
    assert ratios[1] > 5.0 * ratios[0]
    assert ratios[2] > 5.0 * ratios[1]


def test_solution_dataclass_shapes():
    suite = build_suite("domain", 6, 2.0, alpha=1.0, delta=0.0,
                        g_name="zero", j_name="quadratic")
    space = suite.space
    sol = solve_step(suite, make_problem(suite, np.ones(space.n_free)))
    assert isinstance(sol, StepSolution)
    assert np.shape(sol.eta) == (space.n_nodes,)
    assert sol.eps == SolverConfig().eps_target
    tr_suite = build_suite("trace", 6, 2.0, alpha=1.0, delta=0.0,
                           g_name="zero", j_name="quadratic")
    sol2 = solve_step(tr_suite, make_problem(tr_suite, np.ones(6)))
    assert np.isscalar(sol2.eta) or np.shape(sol2.eta) == ()
