"""Norm oracles, assembly cross-checks, and the Poincare ascent."""

import math

import numpy as np
import pytest

from rothewave.errors import ConfigurationError
from rothewave.fem1d import (
    FemFunction,
    FemSpace,
    dual_norm_surrogate,
    nonlinear_form,
    nonlinear_form_tangent,
    norm_H,
    norm_U,
    norm_V,
    norm_W,
    plap_apply,
    plap_tangent,
    poincare_constant,
    poincare_estimate,
    snapshot_csv,
    solve_plaplacian,
)


def hat_space(p):
    return FemSpace.uniform(2, p, "domain")


def hat(p):
    # peak 1 at the midpoint, mesh h = 0.5
    return FemFunction(hat_space(p), np.array([1.0]))


# ---------------------------------------------------------------- oracles

def test_norm_W_hat_oracle():
    # slopes are +-2, so sum h |v'|^p = 0.5*8 + 0.5*8 = 8 and the norm is 2
    assert norm_W(hat(3.0)) == pytest.approx(8.0 ** (1.0 / 3.0), abs=1e-12)
    assert norm_W(hat(2.0)) == pytest.approx(2.0, abs=1e-12)
    assert norm_W(FemFunction.zero(hat_space(2.0))) == 0.0


def test_norm_V_and_H_oracles():
    assert norm_V(hat(2.0)) == pytest.approx(2.0, abs=1e-12)
    assert norm_H(hat(2.0)) == pytest.approx(math.sqrt(1.0 / 3.0), abs=1e-12)
    ramp_space = FemSpace.uniform(4, 2.0, "trace")
    ramp = FemFunction.interpolate(ramp_space, lambda x: x)
    assert norm_V(ramp) == pytest.approx(1.0, abs=1e-12)


def test_norm_U_trace_and_domain():
    sp_t = FemSpace.uniform(4, 2.0, "trace")
    ones = FemFunction(sp_t, np.ones(sp_t.n_free))
    assert norm_U(ones, "trace") == pytest.approx(1.0)
    # int |hat|^3 = 2 * int_0^{1/2} (2x)^3 dx = 1/4, cubic so Gauss-3 is exact
    assert norm_U(hat(3.0), "domain") == pytest.approx(0.25 ** (1.0 / 3.0), abs=1e-12)
    assert norm_U(hat(2.0), "domain") == pytest.approx(norm_H(hat(2.0)), abs=1e-12)
    with pytest.raises(ConfigurationError):
        norm_U(ones, "boundary")


def test_dual_norm_surrogate_oracles():
    space = hat_space(2.0)
    assert dual_norm_surrogate(space, np.zeros(1)) == 0.0
    # single free node, K = [[4]]: z = 0.25, sqrt(z * 1) = 0.5
    assert dual_norm_surrogate(space, np.array([1.0])) == pytest.approx(0.5, abs=1e-12)
    rng = np.random.default_rng(5)
    big = FemSpace.uniform(17, 2.0, "domain")
    for _ in range(5):
        v = FemFunction(big, rng.standard_normal(big.n_free))
        r = big.stiffness_free @ v.coefficients
        assert dual_norm_surrogate(big, r) == pytest.approx(norm_V(v), rel=1e-12)


# ------------------------------------------------------------- validation

def test_space_validation():
    with pytest.raises(ConfigurationError):
        FemSpace.uniform(1, 2.0, "domain")
    with pytest.raises(ConfigurationError):
        FemSpace(np.array([0.0, 0.5, 0.9]), 2.0, "domain")
    with pytest.raises(ConfigurationError):
        FemSpace.uniform(4, 1.5, "domain")
    with pytest.raises(ConfigurationError):
        FemSpace.uniform(4, 2.0, "everywhere")
    with pytest.raises(ConfigurationError):
        FemFunction(FemSpace.uniform(4, 2.0, "domain"), np.zeros(7))


def test_dimensions_and_masks():
    sp_t = FemSpace.uniform(8, 2.0, "trace")
    assert sp_t.n_free == 8 and sp_t.contact_node == 8
    assert sp_t.dirichlet_mask[0] and not sp_t.dirichlet_mask[-1]
    sp_d = FemSpace.uniform(8, 2.0, "domain")
    assert sp_d.n_free == 7 and sp_d.contact_node is None
    assert sp_d.dirichlet_mask[0] and sp_d.dirichlet_mask[-1]
    assert abs(sp_d.element_sizes.sum() - 1.0) < 1e-12


# --------------------------------------------------------------- assembly

def test_matrices_spd():
    for feedback in ("trace", "domain"):
        space = FemSpace.uniform(9, 2.0, feedback)
        for mat in (space.mass_free, space.stiffness_free):
            dense = mat.toarray()
            assert np.allclose(dense, dense.T)
            assert np.min(np.linalg.eigvalsh(dense)) > 0.0


def test_nonlinear_form_identity_matches_mass():
    rng = np.random.default_rng(11)
    space = FemSpace.uniform(13, 2.0, "trace")
    for _ in range(5):
        v = FemFunction(space, rng.standard_normal(space.n_free))
        lhs = nonlinear_form(space, v, lambda s: s)
        rhs = (space.mass_full @ v.full_values())[space.free]
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-14)


def test_plap_apply_p2_is_stiffness():
    rng = np.random.default_rng(2)
    space = FemSpace.uniform(11, 2.0, "domain")
    v = FemFunction(space, rng.standard_normal(space.n_free))
    np.testing.assert_allclose(plap_apply(space, v),
                               space.stiffness_free @ v.coefficients,
                               rtol=1e-12, atol=1e-14)


def test_plap_coercivity_ramp():
    # ramp on the trace space, p = 3: <A_p v, v> = int |1|^3 = 1
    space = FemSpace.uniform(6, 3.0, "trace")
    ramp = FemFunction.interpolate(space, lambda x: x)
    assert plap_apply(space, ramp) @ ramp.coefficients == pytest.approx(1.0, abs=1e-12)


def test_tangents_match_finite_differences():
    rng = np.random.default_rng(19)
    space = FemSpace.uniform(7, 3.0, "domain")
    v = FemFunction(space, rng.standard_normal(space.n_free))
    d = rng.standard_normal(space.n_free)
    eps = 1e-6
    vp = FemFunction(space, v.coefficients + eps * d)
    vm = FemFunction(space, v.coefficients - eps * d)
    fd = (plap_apply(space, vp) - plap_apply(space, vm)) / (2 * eps)
    np.testing.assert_allclose(plap_tangent(space, v) @ d, fd, rtol=1e-5, atol=1e-8)
    fn = lambda s: np.arctan(s)
    dfn = lambda s: 1.0 / (1.0 + s * s)
    fd2 = (nonlinear_form(space, vp, fn) - nonlinear_form(space, vm, fn)) / (2 * eps)
    np.testing.assert_allclose(nonlinear_form_tangent(space, v, dfn) @ d, fd2,
                               rtol=1e-5, atol=1e-8)


def test_solve_plaplacian_recovers_state():
    rng = np.random.default_rng(23)
    for p in (2.0, 3.0, 4.5):
        space = FemSpace.uniform(10, p, "trace")
        w = FemFunction(space, rng.uniform(-1.0, 1.0, space.n_free))
        rhs = plap_apply(space, w)
        got = solve_plaplacian(space, rhs, p)
        np.testing.assert_allclose(got, w.coefficients, rtol=1e-8, atol=1e-10)


# ---------------------------------------------------------------- poincare

def test_poincare_p2_oracles():
    dom = FemSpace.uniform(200, 2.0, "domain")
    assert poincare_constant(dom) == pytest.approx(1.0 / math.pi ** 2, rel=1e-3)
    tr = FemSpace.uniform(200, 2.0, "trace")
    assert poincare_constant(tr) == pytest.approx(4.0 / math.pi ** 2, rel=1e-3)


def test_poincare_p3_oracles():
    # first eigenvalue of the 1-D p-Laplacian: (p-1) * pi_p^p with
    # pi_p = 2 pi / (p sin(pi/p)); mixed ends halve the frequency
    p = 3.0
    pi_p = 2.0 * math.pi / (p * math.sin(math.pi / p))
    dom = FemSpace.uniform(200, p, "domain")
    assert poincare_constant(dom) == pytest.approx(1.0 / ((p - 1) * pi_p ** p), rel=1e-2)
    tr = FemSpace.uniform(200, p, "trace")
    assert poincare_constant(tr) == pytest.approx(
        1.0 / ((p - 1) * (pi_p / 2.0) ** p), rel=1e-2)


def test_poincare_reports_convergence():
    est = poincare_estimate(FemSpace.uniform(50, 2.0, "domain"))
    assert est.converged
    assert est.value == pytest.approx(1.0 / est.quotient, rel=1e-12)


# --------------------------------------------------------------- invariants

def test_norm_homogeneity():
    rng = np.random.default_rng(31)
    space = FemSpace.uniform(9, 3.0, "trace")
    for _ in range(8):
        v = FemFunction(space, rng.standard_normal(space.n_free))
        a = float(rng.uniform(-3.0, 3.0))
        av = a * v
        for nm in (norm_W, norm_V, norm_H):
            assert nm(av) == pytest.approx(abs(a) * nm(v), rel=1e-12, abs=1e-14)
        for which in ("trace", "domain"):
            assert norm_U(av, which) == pytest.approx(abs(a) * norm_U(v, which),
                                                      rel=1e-12, abs=1e-14)


def test_H_bounded_by_poincare_times_V():
    space = FemSpace.uniform(40, 2.0, "domain")
    c = poincare_constant(space)
    rng = np.random.default_rng(37)
    for _ in range(20):
        v = FemFunction(space, rng.standard_normal(space.n_free))
        assert norm_H(v) <= math.sqrt(c) * norm_V(v) * (1.0 + 1e-10)


def test_snapshot_csv():
    space = FemSpace.uniform(2, 2.0, "domain")
    text = snapshot_csv(FemFunction(space, np.array([0.5])))
    lines = text.strip().split("\n")
    assert lines[0] == "x,value"
    assert len(lines) == 4
    xs = [float(l.split(",")[0]) for l in lines[1:]]
    vals = [float(l.split(",")[1]) for l in lines[1:]]
    assert xs == [0.0, 0.5, 1.0]
    assert vals == [0.0, 0.5, 0.0]
