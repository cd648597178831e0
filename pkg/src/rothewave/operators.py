"""Operator suite: damping operator A, elastic operator B, feedback map
gamma with its multivalued law M = generalized derivative of a scalar
potential, and the ledger of hypothesis constants.

Concrete instances on the P1 spaces:

    <A v, w> = alpha int |v'|^{p-2} v' w' dx + int g(v) w dx
    <B u, w> = int u' w' dx + int |u|^delta u w dx        (delta <= 1 - 2/p)

The feedback term pairs a selection eta of the potential's subdifferential
against the trace value at x = 1 ("trace" layout) or against every node
through the mass matrix ("domain" layout).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import AuditFailure, ConfigurationError
from .fem1d import (
    FemFunction,
    FemSpace,
    ascend_quotient,
    dual_norm_surrogate,
    nonlinear_form,
    nonlinear_form_tangent,
    norm_H,
    norm_W,
    plap_apply,
    plap_tangent,
    poincare_constant,
    poincare_estimate,
)

__all__ = [
    "ConstantsLedger",
    "ScalarLaw",
    "PotentialGraph",
    "make_scalar_law",
    "make_potential",
    "OperatorSuite",
    "BParts",
    "subdiff_interval",
    "regularized_selection",
    "regularized_slope",
    "graph_distance",
    "certificate_scale",
    "estimate_gamma_norm",
    "compute_example_constants",
    "build_suite",
    "AuditReport",
    "audit_hypotheses",
]


@dataclass(frozen=True)
class ConstantsLedger:
    """Every constant the hypotheses and monitors consume, in one place.

    gamma_norm is the numerically estimated operator norm of the feedback
    map already inflated by the configured safety factor; gamma_norm_raw
    keeps the uninflated estimate for reporting. The modulus handle is
    only ever sampled, never proven.
    """

    p: float
    q: float
    mu_A: float
    beta_A: float
    beta: float
    lam: float
    mu_B: float
    beta_B: float
    beta_C: float
    c_M: float
    delta: float
    alpha: float
    c_g: float
    c_j: float
    gamma_norm: float
    gamma_norm_raw: float
    embed_norm: float
    ratio_bound: float
    poincare: float
    c_A: float
    c_q: float
    modulus: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.p >= 2.0:
            raise ConfigurationError("p must be >= 2, got %r" % self.p)
        if abs(1.0 / self.p + 1.0 / self.q - 1.0) > 1e-12:
            raise ConfigurationError("q must be the conjugate exponent of p")
        if not (0.0 <= self.delta <= 1.0 - 2.0 / self.p + 1e-12):
            raise ConfigurationError(
                "delta = %r outside [0, 1 - 2/p] for p = %r" % (self.delta, self.p))
        if not (self.mu_A > 0.0 and self.mu_B > 0.0):
            raise ConfigurationError("mu_A and mu_B must be positive")
        for name in ("beta_A", "beta", "lam", "beta_B", "beta_C", "c_M", "c_g",
                     "c_j", "gamma_norm", "gamma_norm_raw", "embed_norm",
                     "poincare", "c_A", "c_q"):
            if getattr(self, name) < 0.0:
                raise ConfigurationError("%s must be nonnegative" % name)
        if self.ratio_bound < 1.0:
            raise ConfigurationError("ratio_bound D must be >= 1")

    @property
    def h0_margin(self) -> float:
        """mu_A - c_M ||gamma||^p; the smallness condition needs this > 0."""
        return self.mu_A - self.c_M * self.gamma_norm ** self.p

    @property
    def h0_holds(self) -> bool:
        return self.h0_margin > 0.0

    def report_text(self) -> str:
        lines = []
        for name in ("p", "q", "mu_A", "beta_A", "beta", "lam", "mu_B", "beta_B",
                     "beta_C", "c_M", "delta", "alpha", "c_g", "c_j",
                     "gamma_norm", "gamma_norm_raw", "embed_norm", "ratio_bound",
                     "poincare", "c_A", "c_q"):
            lines.append("%s=%s" % (name, repr(float(getattr(self, name)))))
        lines.append("h0_margin=%s" % repr(float(self.h0_margin)))
        lines.append("h0_holds=%s" % ("true" if self.h0_holds else "false"))
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ScalarLaw:
    """Single-valued zeroth-order law g with its declared constants."""

    name: str
    p: float
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    c_g: float
    gs_lower: float  # declared lower bound for g(s) s

    def __call__(self, s):
        return self.fn(s)


def make_scalar_law(name: str, p: float) -> ScalarLaw:
    if name == "zero":
        return ScalarLaw(name, p, lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                         lambda s: np.zeros_like(np.asarray(s, dtype=float)),
                         c_g=0.0, gs_lower=0.0)
    if name == "arctan":
        return ScalarLaw(name, p, np.arctan, lambda s: 1.0 / (1.0 + s * s),
                         c_g=0.5 * math.pi, gs_lower=0.0)
    if name == "identity":
        if p != 2.0:
            raise ConfigurationError("the identity law is admissible only for p = 2")
        return ScalarLaw(name, p, lambda s: np.asarray(s, dtype=float),
                         lambda s: np.ones_like(np.asarray(s, dtype=float)),
                         c_g=1.0, gs_lower=0.0)
    if name == "scaled_plaw":
        e = p - 2.0
        return ScalarLaw(name, p,
                         lambda s: 0.1 * np.abs(s) ** e * s,
                         lambda s: 0.1 * (p - 1.0) * np.abs(s) ** e,
                         c_g=0.1, gs_lower=0.0)
    raise ConfigurationError("unknown scalar law %r" % name)


@dataclass(frozen=True)
class PotentialGraph:
    """Piecewise-C1 potential j with density rho = j' a.e.

    potential and density are vectorized callables; density returns the
    midpoint of the one-sided limits at a breakpoint (the mollification
    never evaluates it there). lip_window bounds |rho'| on an interval
    away from breakpoints. min_p is the smallest growth exponent for
    which the declared c_j growth bound holds.
    """

    name: str
    scale: float
    breakpoints: tuple
    potential: Callable[[np.ndarray], np.ndarray]
    density: Callable[[np.ndarray], np.ndarray]
    one_sided: Callable[[float], tuple]
    lip_window: Callable[[float, float], float]
    c_j: float
    min_p: float

    def subdiff(self, s: float) -> tuple:
        for b in self.breakpoints:
            if s == b:
                lo, hi = self.one_sided(b)
                return (min(lo, hi), max(lo, hi))
        d = float(self.density(np.asarray(s, dtype=float)))
        return (d, d)

    def mollified(self, s, eps: float):
        """Average of rho over [s - eps, s + eps], via the potential."""
        s = np.asarray(s, dtype=float)
        return (self.potential(s + eps) - self.potential(s - eps)) / (2.0 * eps)

    def mollified_slope(self, s, eps: float):
        s = np.asarray(s, dtype=float)
        return (self.density(s + eps) - self.density(s - eps)) / (2.0 * eps)


def make_potential(name: str, scale: float = 1.0) -> PotentialGraph:
    """Potential library. scale multiplies the density (and so the potential)."""
    a = float(scale)
    if a <= 0.0:
        raise ConfigurationError("potential scale must be positive")
    if name == "zero":
        z = lambda s: np.zeros_like(np.asarray(s, dtype=float))
        return PotentialGraph(name, a, (), z, z, lambda b: (0.0, 0.0),
                              lambda lo, hi: 0.0, c_j=0.0, min_p=2.0)
    if name == "quadratic":
        return PotentialGraph(name, a, (),
                              lambda s: 0.5 * a * s * s,
                              lambda s: a * s,
                              lambda b: (a * b, a * b),
                              lambda lo, hi: a, c_j=a, min_p=2.0)
    if name == "abs":
        return PotentialGraph(name, a, (0.0,),
                              lambda s: a * np.abs(s),
                              lambda s: a * np.sign(s),
                              lambda b: (-a, a),
                              lambda lo, hi: 0.0, c_j=a, min_p=2.0)
    if name == "downstep":
        # density drops from a*s to a*s/2 at s = 1; the model nonmonotone law
        def j(s):
            s = np.asarray(s, dtype=float)
            return np.where(s < 1.0, 0.5 * a * s * s, 0.25 * a * (s * s + 1.0))

        def rho(s):
            s = np.asarray(s, dtype=float)
            return np.where(s < 1.0, a * s, 0.5 * a * s)

        return PotentialGraph(name, a, (1.0,), j, rho,
                              lambda b: (a, 0.5 * a),
                              lambda lo, hi: a, c_j=a, min_p=2.0)
    if name == "double_well":
        def lip(lo, hi):
            m = max(abs(3.0 * lo * lo - 1.0), abs(3.0 * hi * hi - 1.0))
            if lo < 0.0 < hi:
                m = max(m, 1.0)
            return a * m

        return PotentialGraph(name, a, (),
                              lambda s: a * (0.25 * s ** 4 - 0.5 * s * s),
                              lambda s: a * (s ** 3 - s),
                              lambda b: (0.0, 0.0),
                              lip, c_j=2.0 * a, min_p=4.0)
    raise ConfigurationError("unknown potential %r" % name)


# ------------------------------------------------------- graph operations

def subdiff_interval(graph: PotentialGraph, s: float) -> tuple:
    """[lo, hi] of the generalized derivative at s."""
    return graph.subdiff(float(s))


def regularized_selection(graph: PotentialGraph, s, eps: float):
    if not eps > 0.0:
        raise ConfigurationError("smoothing width must be positive")
    return graph.mollified(s, eps)


def regularized_slope(graph: PotentialGraph, s, eps: float):
    if not eps > 0.0:
        raise ConfigurationError("smoothing width must be positive")
    return graph.mollified_slope(s, eps)


def graph_distance(graph: PotentialGraph, s: float, eta: float) -> float:
    """Upper bound for the Euclidean distance from (s, eta) to the graph
    of the subdifferential: vertical distance at s, improved by the
    distance to the vertical segments at breakpoints."""
    lo, hi = graph.subdiff(s)
    best = max(lo - eta, eta - hi, 0.0)
    for b in graph.breakpoints:
        blo, bhi = graph.subdiff(b)
        vert = max(blo - eta, eta - bhi, 0.0)
        best = min(best, math.hypot(s - b, vert))
    return float(best)


def certificate_scale(graph: PotentialGraph, s: float, eps: float) -> float:
    """Factor c with graph_distance(s, mollified(s)) <= c * eps guaranteed:
    1 covers the horizontal offset to a breakpoint inside the window, twice
    the local slope bound covers the averaging error of the smooth pieces."""
    return 1.0 + 2.0 * graph.lip_window(s - eps, s + eps)


# ------------------------------------------------------------------ suite

@dataclass(frozen=True)
class BParts:
    """Pairings of the elastic operator, split as B0 u + C(t, u)."""

    elastic: np.ndarray
    lower_order: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.elastic + self.lower_order


@dataclass(frozen=True)
class OperatorSuite:
    """A, B, gamma, M realized on one FemSpace, with the constants ledger."""

    space: FemSpace
    g: ScalarLaw
    potential: PotentialGraph
    alpha: float
    delta: float
    ledger: ConstantsLedger

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ConfigurationError("alpha must be positive")
        if self.space.p < self.potential.min_p:
            raise ConfigurationError(
                "potential %r needs p >= %r, space has p = %r"
                % (self.potential.name, self.potential.min_p, self.space.p))
        if self.g.p != self.space.p:
            raise ConfigurationError("scalar law was built for a different p")

    # -- damping operator -------------------------------------------------
    def apply_A(self, t: float, v: FemFunction) -> np.ndarray:
        out = self.alpha * plap_apply(self.space, v)
        if self.g.name != "zero":
            out = out + nonlinear_form(self.space, v, self.g.fn)
        return out

    def tangent_A(self, t: float, v: FemFunction) -> sp.csr_matrix:
        out = self.alpha * plap_tangent(self.space, v)
        if self.g.name != "zero":
            out = out + nonlinear_form_tangent(self.space, v, self.g.deriv)
        return out.tocsr()

    # -- elastic operator --------------------------------------------------
    def apply_B(self, t: float, u: FemFunction) -> BParts:
        elastic = self.space.stiffness_free @ u.coefficients
        d = self.delta
        lower = nonlinear_form(self.space, u, lambda s: np.abs(s) ** d * s)
        return BParts(elastic=elastic, lower_order=lower)

    # -- feedback map ------------------------------------------------------
    def gamma_values(self, v: FemFunction):
        """gamma v: trace value (scalar) or nodal values (full array)."""
        if self.space.boundary_split == "trace":
            return v.trace_value()
        return v.full_values()

    def selection(self, v: FemFunction, eps: float):
        """Mollified selection at gamma v, same shape as gamma_values."""
        gv = self.gamma_values(v)
        return self.potential.mollified(gv, eps)

    def gamma_pairing(self, eta) -> np.ndarray:
        """<gamma* eta, phi_i> over free basis functions."""
        space = self.space
        if space.boundary_split == "trace":
            out = np.zeros(space.n_free)
            out[-1] = float(eta)  # contact node is the last free node
            return out
        eta = np.asarray(eta, dtype=float)
        return (space.mass_full @ eta)[space.free]

    def gamma_tangent(self, v: FemFunction, eps: float) -> sp.csr_matrix:
        """Derivative of gamma_pairing(selection(v, eps)) in v."""
        space = self.space
        if space.boundary_split == "trace":
            slope = float(self.potential.mollified_slope(v.trace_value(), eps))
            k = space.n_free - 1
            return sp.csr_matrix(([slope], ([k], [k])),
                                 shape=(space.n_free, space.n_free))
        slopes = self.potential.mollified_slope(v.coefficients, eps)
        mass_ff = space.mass_full[np.ix_(space.free, space.free)]
        return (mass_ff @ sp.diags(slopes)).tocsr()

    def selection_certificates(self, v: FemFunction, eta, eps: float):
        """Worst graph distance of the selection and its allowed budget
        c * eps over all evaluation points of gamma v."""
        gv = self.gamma_values(v)
        if self.space.boundary_split == "trace":
            points = [(float(gv), float(eta))]
        else:
            points = list(zip(np.asarray(gv, dtype=float),
                              np.asarray(eta, dtype=float)))
        worst = 0.0
        budget = 0.0
        for s, e in points:
            worst = max(worst, graph_distance(self.potential, s, e))
            budget = max(budget, certificate_scale(self.potential, s, eps) * eps)
        return worst, budget


def estimate_gamma_norm(space: FemSpace, *, tol: float = 1e-10,
                        budget: int = 400) -> float:
    """sup ||gamma v||_U / ||v||_W over the FEM space, by the same
    ascent iteration as the Poincare constant."""
    p = space.p
    if space.boundary_split == "trace":
        def num_value(v: FemFunction) -> float:
            return abs(v.trace_value()) ** p

        def num_grad(v: FemFunction) -> np.ndarray:
            out = np.zeros(space.n_free)
            tv = v.trace_value()
            out[-1] = abs(tv) ** (p - 2.0) * tv
            return out

        est = ascend_quotient(space, p, num_value, num_grad,
                              space.mesh_nodes, tol=tol, budget=budget)
        return est.value ** (1.0 / p)
    # domain layout: gamma is the embedding, so the norm is the Poincare
    # constant to the power 1/p
    est = poincare_estimate(space, tol=tol, budget=budget)
    return est.value ** (1.0 / p)


def compute_example_constants(space: FemSpace, g: ScalarLaw,
                              potential: PotentialGraph, alpha: float,
                              delta: float, *, c_q: float = 1.0,
                              ratio_bound: float = 2.0,
                              gamma_inflation: float = 1.05) -> ConstantsLedger:
    """Fill the ledger for the concrete suite on the unit interval.

    |Omega| = |Gamma_2| = 1, so the measure factors drop out:
        c_A = max(c_q * poincare^{1/p}, alpha + c_g * poincare^{1/(pq)})
        c_M = c_j * 2^{1/p}
    The feedback norm is estimated numerically and inflated by
    gamma_inflation before it enters any smallness check.
    """
    p = space.p
    q = p / (p - 1.0)
    ctilde = poincare_constant(space)
    ctilde2 = ctilde if p == 2.0 else poincare_constant(space, 2.0)
    raw = estimate_gamma_norm(space)
    c_A = max(c_q * ctilde ** (1.0 / p), alpha + g.c_g * ctilde ** (1.0 / (p * q)))
    c_M = potential.c_j * 2.0 ** (1.0 / p)
    return ConstantsLedger(
        p=p, q=q,
        mu_A=alpha,
        beta_A=c_A,
        beta=0.0,
        lam=max(0.0, -g.gs_lower),
        mu_B=1.0,
        beta_B=1.0,
        beta_C=math.sqrt(ctilde2),
        c_M=c_M,
        delta=delta,
        alpha=alpha,
        c_g=g.c_g,
        c_j=potential.c_j,
        gamma_norm=raw * gamma_inflation,
        gamma_norm_raw=raw,
        embed_norm=1.0,
        ratio_bound=ratio_bound,
        poincare=ctilde,
        c_A=c_A,
        c_q=c_q,
        modulus=lambda r: (1.0 + delta) * r,
    )


def build_suite(feedback: str, num_elements: int, p: float, *, alpha: float,
                delta: float, g_name: str, j_name: str, j_scale: float = 1.0,
                c_q: float = 1.0, ratio_bound: float = 2.0,
                gamma_inflation: float = 1.05) -> OperatorSuite:
    space = FemSpace.uniform(num_elements, p, feedback)
    g = make_scalar_law(g_name, p)
    potential = make_potential(j_name, j_scale)
    ledger = compute_example_constants(space, g, potential, alpha, delta,
                                       c_q=c_q, ratio_bound=ratio_bound,
                                       gamma_inflation=gamma_inflation)
    return OperatorSuite(space=space, g=g, potential=potential,
                         alpha=alpha, delta=delta, ledger=ledger)


# ------------------------------------------------------------------ audit

@dataclass(frozen=True)
class AuditReport:
    samples: int
    seed: int
    min_slacks: dict
    witnesses: dict
    passed: bool

    def to_text(self) -> str:
        lines = ["samples=%d" % self.samples, "seed=%d" % self.seed,
                 "passed=%s" % ("true" if self.passed else "false")]
        for name in sorted(self.min_slacks):
            lines.append("%s_min_slack=%s" % (name, repr(float(self.min_slacks[name]))))
            lines.append("%s_witness=%s" % (name, self.witnesses[name]))
        return "\n".join(lines) + "\n"


def audit_hypotheses(suite: OperatorSuite, samples: int = 64,
                     seed: int = 0) -> AuditReport:
    """Sample the growth, coercivity, monotonicity and selection-growth
    conditions; raise AuditFailure with the worst witness on violation.

    Sampled states span W-norms 1e-2 .. 1e2. Growth allows the documented
    1.05 inflation on the dual surrogate.
    """
    space, led = suite.space, suite.ledger
    p = led.p
    rng = np.random.default_rng(seed)
    slacks = {"growth": math.inf, "coercivity": math.inf,
              "monotonicity": math.inf, "selection_growth": math.inf}
    wits = {k: "none" for k in slacks}

    def track(name, slack, wit):
        if slack < slacks[name]:
            slacks[name] = slack
            wits[name] = wit

    def sample_state() -> FemFunction:
        d = rng.standard_normal(space.n_free)
        v = FemFunction(space, d)
        target = 10.0 ** rng.uniform(-2.0, 2.0)
        nw = norm_W(v)
        return (target / nw) * v

    for k in range(samples):
        v = sample_state()
        nw = norm_W(v)
        Av = suite.apply_A(0.0, v)
        grow = (1.05 * led.c_A * (1.0 + nw ** (p - 1.0))
                - dual_norm_surrogate(space, Av)) / (1.0 + nw ** (p - 1.0))
        track("growth", grow, "sample %d, ||v||_W=%.3e" % (k, nw))
        coer = (float(Av @ v.coefficients) - led.mu_A * nw ** p
                + led.beta * norm_H(v) ** 2 + led.lam) / (1.0 + nw ** p)
        track("coercivity", coer, "sample %d, ||v||_W=%.3e" % (k, nw))
        u = sample_state()
        diff = u - v
        pair = float((plap_apply(space, u) - plap_apply(space, v)) @ diff.coefficients)
        mono = suite.alpha * pair / (1.0 + norm_W(diff) ** p)
        track("monotonicity", mono, "sample %d" % k)
        s = float(10.0 ** rng.uniform(-2.0, 2.0) * rng.choice([-1.0, 1.0]))
        lo, hi = suite.potential.subdiff(s)
        sel = (led.c_M * (1.0 + abs(s) ** (p - 1.0))
               - max(abs(lo), abs(hi))) / (1.0 + abs(s) ** (p - 1.0))
        track("selection_growth", sel, "s=%.6e" % s)
    for b in suite.potential.breakpoints:
        lo, hi = suite.potential.subdiff(float(b))
        sel = (led.c_M * (1.0 + abs(b) ** (p - 1.0))
               - max(abs(lo), abs(hi))) / (1.0 + abs(b) ** (p - 1.0))
        track("selection_growth", sel, "breakpoint s=%.6e" % b)

    tol = -1e-12
    passed = all(s >= tol for s in slacks.values())
    report = AuditReport(samples=samples, seed=seed, min_slacks=dict(slacks),
                         witnesses=dict(wits), passed=passed)
    if not passed:
        bad = min(slacks, key=slacks.get)
        raise AuditFailure("hypothesis audit failed: %s slack %.3e at %s"
                           % (bad, slacks[bad], wits[bad]),
                           witness={"check": bad, "slack": slacks[bad],
                                    "where": wits[bad], "report": report})
    return report
