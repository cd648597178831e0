"""Acceptance suite: every shipped guarantee checked end to end, one
criterion per test, one printed pass/fail line per criterion.

The expensive trajectories (smooth convergence family, contact Cauchy
family) are solved once per session and shared across criteria.
"""

import math
import sys
import time

import numpy as np
import pytest

from rothewave.cli import main
from rothewave.fem1d import FemFunction
from rothewave.operators import build_suite
from rothewave.rothe import (
    bochner_distance,
    energy_report,
    make_interpolants,
    run,
    velocity_gap_identity,
)
from rothewave.stepper import StepProblem, StepSolution, solve_step, verify_step
from rothewave.study import contact_case, manufactured_case, velocity_error
from rothewave.timegrid import build_grid, grid_from_steps

RESIDUAL_TOL = 1e-8
IDENTITY_TOL = 1e-12


def report(num: int, ok: bool, detail: str) -> None:
    line = "criterion %02d: %s  %s" % (num, "PASS" if ok else "FAIL", detail)
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def smooth_bundle():
    case = manufactured_case(200)
    runs = []
    start = time.perf_counter()
    for n in (32, 64, 128, 256):
        grid = build_grid("uniform", n, case.horizon)
        runs.append((n, run(case.suite, grid, case.u0, case.v0, case.load)))
    elapsed = time.perf_counter() - start
    return {"case": case, "runs": runs, "elapsed": elapsed}


@pytest.fixture(scope="module")
def contact_bundle():
    suite, u0, v0, load = contact_case(100)
    runs = []
    start = time.perf_counter()
    for n in (16, 32, 64, 128):
        grid = build_grid("uniform", n, 1.0)
        runs.append((n, run(suite, grid, u0, v0, load)))
    elapsed = time.perf_counter() - start
    mass = suite.space.mass_free
    families = [make_interpolants(traj) for _, traj in runs]
    distances = [bochner_distance(families[i + 1].v, families[i].v, mass)
                 for i in range(len(families) - 1)]
    return {"suite": suite, "runs": runs, "distances": distances,
            "elapsed": elapsed}


def every_trajectory(smooth_bundle, contact_bundle):
    for n, traj in smooth_bundle["runs"]:
        yield "smooth N=%d" % n, traj
    for n, traj in contact_bundle["runs"]:
        yield "contact N=%d" % n, traj


def test_criterion_01_velocity_gap_identity_everywhere(smooth_bundle, contact_bundle):
    worst = 0.0
    count = 0
    bounds_hold = True
    for _, traj in every_trajectory(smooth_bundle, contact_bundle):
        rep = velocity_gap_identity(traj)
        worst = max(worst, rep.rel_diff)
        bounds_hold = bounds_hold and rep.bound_holds
        count += 1
    ok = worst <= IDENTITY_TOL and bounds_hold
    report(1, ok, "interpolant gap identity: max rel diff %.3e over %d "
           "trajectories, bound holds on all" % (worst, count))


def test_criterion_02_grid_parameter_oracle():
    grid = grid_from_steps([0.1, 0.2, 0.3])
    checks = [
        (grid.tau_half(1), 0.15),
        (grid.tau_half(2), 0.25),
        (float(grid.ratios[0]), 2.0),
        (float(grid.ratios[1]), 1.5),
        (float(grid.gamma_n[0]), 1.0 / 6.0),
        (grid.c_gamma, 5.0 / 9.0),
        (grid.sigma, 2.0 / 75.0),
    ]
    worst = max(abs(got - want) for got, want in checks)
    report(2, worst <= 1e-12,
           "grid parameters on steps (0.1, 0.2, 0.3): max abs error %.3e" % worst)


def test_criterion_03_smooth_convergence_order(smooth_bundle):
    case = smooth_bundle["case"]
    sizes = [n for n, _ in smooth_bundle["runs"]]
    errors = [velocity_error(case, traj) for _, traj in smooth_bundle["runs"]]
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    order = math.log(errors[0] / errors[-1]) / math.log(sizes[-1] / sizes[0])
    ok = decreasing and 0.8 <= order <= 2.2 and smooth_bundle["elapsed"] <= 60.0
    report(3, ok, "velocity errors %s strictly decreasing, overall order "
           "%.3f in [0.8, 2.2], %.1f s" % (["%.2e" % e for e in errors],
                                           order, smooth_bundle["elapsed"]))


def test_criterion_04_energy_monitors_bounded(smooth_bundle):
    ratios = []
    accels = []
    for _, traj in smooth_bundle["runs"]:
        rep = energy_report(traj)
        ratios.append(rep.ratio)
        accels.append(rep.accel_dual_sum)
    ratio_spread = max(ratios) / min(ratios)
    accel_spread = max(accels) / min(accels)
    finite = all(map(math.isfinite, ratios + accels))
    ok = finite and ratio_spread <= 10.0 and accel_spread <= 10.0
    report(4, ok, "energy ratio spread %.3f and dual acceleration spread "
           "%.3f across refinement, both within factor 10"
           % (ratio_spread, accel_spread))


def test_criterion_05_independent_step_certificates(smooth_bundle, contact_bundle):
    worst_residual = 0.0
    graph_ok = True
    steps = 0
    for label, traj in every_trajectory(smooth_bundle, contact_bundle):
        grid = traj.grid
        for k in range(1, len(traj.v)):
            diag = traj.diagnostics[k - 1]
            prob = StepProblem(n=k, tau_half=grid.tau_half(k),
                               t=float(grid.nodes[k]), u=traj.u[k],
                               v_prev=traj.v[k - 1], f=traj.loads[k - 1])
            sol = StepSolution(v=traj.v[k], eta=traj.eta[k - 1],
                               iterations=diag.iterations,
                               residual=diag.residual, eps=diag.eps,
                               graph_dist=diag.graph_distance,
                               graph_budget=diag.graph_budget)
            cert = verify_step(traj.suite, prob, sol, RESIDUAL_TOL)
            worst_residual = max(worst_residual, cert.residual)
            graph_ok = graph_ok and cert.graph_ok
            steps += 1
    ok = worst_residual <= RESIDUAL_TOL and graph_ok
    report(5, ok, "re-assembled residual max %.3e <= 1e-8 and selection "
           "within inflated graph budget on all %d steps" % (worst_residual, steps))


def test_criterion_06_scalar_step_oracles():
    # v + subdiff |.|(v) owns 0 only at v = 0 with zero selection
    inclusion = build_suite("domain", 2, 2.0, alpha=1.0, delta=0.0,
                            g_name="zero", j_name="abs")
    rest = FemFunction.zero(inclusion.space)
    sol = solve_step(inclusion, StepProblem(
        n=1, tau_half=1.0, t=0.0, u=rest, v_prev=rest,
        f=np.zeros(inclusion.space.n_free)))
    inclusion_ok = (abs(float(sol.v.coefficients[0])) <= 1e-12
                    and abs(float(np.max(np.abs(np.asarray(sol.eta))))) <= 1e-12)
    # smooth single-node step collapsing to (1/3 + 1/3) v = 2/3
    smooth = build_suite("domain", 2, 2.0, alpha=1.0 / 12.0, delta=0.0,
                         g_name="zero", j_name="zero")
    rest2 = FemFunction.zero(smooth.space)
    sol2 = solve_step(smooth, StepProblem(
        n=1, tau_half=1.0, t=0.0, u=rest2, v_prev=rest2,
        f=np.array([2.0 / 3.0])))
    smooth_err = abs(float(sol2.v.coefficients[0]) - 1.0)
    ok = inclusion_ok and smooth_err <= 1e-10
    report(6, ok, "scalar inclusion pins v = 0 with zero selection; smooth "
           "scalar step hits 1 within %.2e" % smooth_err)


def test_criterion_07_cli_rejects_inadmissible_configs(tmp_path, capsys):
    oversized = tmp_path / "oversized.toml"
    oversized.write_text(
        '[problem]\nkind = "manufactured"\n[mesh]\nM = 20\n'
        '[grid]\nkind = "uniform"\nN = 4\nT = 16.0\n'
        '[output]\ndirectory = "%s"\n' % (tmp_path / "never"))
    code_run = main(["run", str(oversized)])
    err = capsys.readouterr().err
    names_bound = "step bound" in err and "tau_max" in err
    no_outputs = not (tmp_path / "never").exists()

    violated = tmp_path / "violated.toml"
    violated.write_text(
        '[problem]\nkind = "trace"\np = 3.0\n'
        '[laws]\ng = "arctan"\nj = "downstep"\nj_scale = 20.0\n'
        '[mesh]\nM = 20\n[grid]\nkind = "uniform"\nN = 8\n')
    code_check = main(["check", str(violated)])
    capsys.readouterr()
    ok = code_run == 3 and names_bound and no_outputs and code_check == 4
    report(7, ok, "oversized steps exit 3 before any step with the bound "
           "named (got %d); violated coercivity margin exits 4 from check "
           "(got %d)" % (code_run, code_check))


def test_criterion_08_contact_cauchy_distances_shrink(contact_bundle):
    d = contact_bundle["distances"]
    monotone = all(b <= a for a, b in zip(d, d[1:]))
    ok = monotone and len(d) == 3 and contact_bundle["elapsed"] <= 120.0
    report(8, ok, "contact-problem Cauchy distances %s nonincreasing over "
           "three doublings, %.1f s" % (["%.3e" % x for x in d],
                                        contact_bundle["elapsed"]))


def test_criterion_09_poincare_constants():
    domain = build_suite("domain", 100, 2.0, alpha=1.0, delta=0.0,
                         g_name="zero", j_name="zero")
    trace = build_suite("trace", 100, 2.0, alpha=1.0, delta=0.0,
                        g_name="zero", j_name="zero")
    err_domain = abs(domain.ledger.poincare - 1.0 / math.pi ** 2) * math.pi ** 2
    err_trace = abs(trace.ledger.poincare - 4.0 / math.pi ** 2) * math.pi ** 2 / 4.0
    ok = err_domain <= 0.02 and err_trace <= 0.02
    report(9, ok, "discrete embedding constants within %.2f%% and %.2f%% of "
           "the continuum values" % (100 * err_domain, 100 * err_trace))


def test_criterion_10_bitwise_determinism(tmp_path, capsys, monkeypatch):
    config = tmp_path / "det.toml"
    config.write_text(
        '[problem]\nkind = "trace"\np = 3.0\n'
        '[laws]\ng = "arctan"\nj = "downstep"\nj_scale = 0.1\n'
        '[mesh]\nM = 20\n'
        '[grid]\nkind = "random"\nN = 12\nT = 1.0\nseed = 3\nratio_bound = 1.8\n'
        '[initial]\nv0 = "sine_half"\nv0_scale = 0.2\n'
        '[load]\nkind = "separable"\nspatial = "ramp"\nprofile = "sine"\n'
        "amplitude = 10.0\n")
    names = ("trajectory.csv", "interpolants.csv", "grid.csv",
             "identity.txt", "apriori.txt")
    outs = []
    streams = []
    for sub in ("first", "second"):
        target = tmp_path / sub
        monkeypatch.setenv("ROTHEWAVE_OUT", str(target))
        assert main(["run", str(config)]) == 0
        streams.append(capsys.readouterr().out)
        outs.append({name: (target / name).read_bytes() for name in names})
    files_equal = all(outs[0][name] == outs[1][name] for name in names)
    ok = files_equal and streams[0] == streams[1]
    report(10, ok, "repeated seeded runs byte-identical across all %d output "
           "files and the console stream" % len(names))
