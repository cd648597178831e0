"""1-D P1 finite elements on (0, 1): spaces, norms, assembly primitives.

Two boundary layouts cover the model problems:

  "trace"  : clamped at x = 0, feedback acts through the value at x = 1
             (the right endpoint is a free node and the trace target);
  "domain" : clamped at both ends, feedback acts throughout the volume.

Norms follow the gradient-seminorm convention: ||v||_W = ||v'||_{L^p},
||v||_V = ||v'||_{L^2}, |v|_H = ||v||_{L^2} via the consistent mass
matrix. With at least one clamped end these are norms on the constrained
space. The U-norm is |v(1)| in the trace layout and ||v||_{L^p} in the
domain layout.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import factorized

from .errors import ConfigurationError

__all__ = [
    "FemSpace",
    "FemFunction",
    "norm_W",
    "norm_V",
    "norm_H",
    "norm_U",
    "dual_norm_surrogate",
    "poincare_constant",
    "poincare_estimate",
    "ascend_quotient",
    "QuotientAscent",
    "plap_apply",
    "plap_tangent",
    "solve_plaplacian",
    "nonlinear_form",
    "nonlinear_form_tangent",
    "snapshot_csv",
]

# 3-point Gauss on the reference element [0, 1]; exact for degree <= 5
_GAUSS_X = np.array([0.5 - 0.5 * math.sqrt(3.0 / 5.0), 0.5,
                     0.5 + 0.5 * math.sqrt(3.0 / 5.0)])
_GAUSS_W = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

PLAP_TANGENT_FLOOR = 1e-12


class FemSpace:
    """Immutable P1 space on a partition of (0, 1).

    feedback = "trace" clamps the left end only; "domain" clamps both.
    """

    def __init__(self, mesh_nodes, p: float, feedback: str):
        nodes = np.asarray(mesh_nodes, dtype=float)
        if nodes.ndim != 1 or len(nodes) < 3:
            raise ConfigurationError("need at least 2 elements")
        if abs(nodes[0]) > 1e-12 or abs(nodes[-1] - 1.0) > 1e-12:
            raise ConfigurationError("mesh must span [0, 1]")
        sizes = np.diff(nodes)
        if not np.all(sizes > 0.0):
            raise ConfigurationError("mesh nodes must be strictly increasing")
        if not p >= 2.0:
            raise ConfigurationError("growth exponent p must be >= 2, got %r" % p)
        if feedback not in ("trace", "domain"):
            raise ConfigurationError("feedback must be 'trace' or 'domain', got %r" % feedback)
        self.mesh_nodes = nodes
        self.element_sizes = sizes
        self.p = float(p)
        self.boundary_split = feedback
        n = len(nodes)
        mask = np.zeros(n, dtype=bool)
        mask[0] = True
        if feedback == "domain":
            mask[-1] = True
        self.dirichlet_mask = mask
        self.free = np.flatnonzero(~mask)
        self.contact_node = n - 1 if feedback == "trace" else None
        for arr in (self.mesh_nodes, self.element_sizes, self.dirichlet_mask, self.free):
            arr.setflags(write=False)

    @classmethod
    def uniform(cls, num_elements: int, p: float, feedback: str) -> "FemSpace":
        return cls(np.linspace(0.0, 1.0, num_elements + 1), p, feedback)

    @property
    def n_nodes(self) -> int:
        return len(self.mesh_nodes)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @cached_property
    def mass_full(self) -> sp.csr_matrix:
        h = self.element_sizes
        n = self.n_nodes
        main = np.zeros(n)
        main[:-1] += h / 3.0
        main[1:] += h / 3.0
        off = h / 6.0
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")

    @cached_property
    def mass_free(self) -> sp.csr_matrix:
        return self.mass_full[np.ix_(self.free, self.free)].tocsr()

    @cached_property
    def stiffness_full(self) -> sp.csr_matrix:
        h = self.element_sizes
        n = self.n_nodes
        main = np.zeros(n)
        main[:-1] += 1.0 / h
        main[1:] += 1.0 / h
        off = -1.0 / h
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")

    @cached_property
    def stiffness_free(self) -> sp.csr_matrix:
        return self.stiffness_full[np.ix_(self.free, self.free)].tocsr()

    @cached_property
    def _stiffness_solve(self):
        return factorized(self.stiffness_free.tocsc())

    def solve_stiffness(self, rhs: np.ndarray) -> np.ndarray:
        """Riesz lift: z with K z = rhs on the constrained space."""
        return self._stiffness_solve(np.asarray(rhs, dtype=float))


@dataclass(frozen=True)
class FemFunction:
    """P1 function given by its free-node coefficients (clamped nodes are 0)."""

    space: FemSpace
    coefficients: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.coefficients, dtype=float)
        if vals.shape != (self.space.n_free,):
            raise ConfigurationError(
                "coefficient length %d does not match free dimension %d"
                % (vals.size, self.space.n_free))
        object.__setattr__(self, "coefficients", vals)

    @classmethod
    def zero(cls, space: FemSpace) -> "FemFunction":
        return cls(space, np.zeros(space.n_free))

    @classmethod
    def from_full(cls, space: FemSpace, full_vals) -> "FemFunction":
        return cls(space, np.asarray(full_vals, dtype=float)[space.free])

    @classmethod
    def interpolate(cls, space: FemSpace, fn) -> "FemFunction":
        return cls.from_full(space, fn(space.mesh_nodes))

    def full_values(self) -> np.ndarray:
        full = np.zeros(self.space.n_nodes)
        full[self.space.free] = self.coefficients
        return full

    def slopes(self) -> np.ndarray:
        full = self.full_values()
        return np.diff(full) / self.space.element_sizes

    def trace_value(self) -> float:
        """Value at the contact endpoint (0 for the domain layout)."""
        if self.space.contact_node is None:
            return 0.0
        return float(self.full_values()[self.space.contact_node])

    def __add__(self, other: "FemFunction") -> "FemFunction":
        return FemFunction(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: "FemFunction") -> "FemFunction":
        return FemFunction(self.space, self.coefficients - other.coefficients)

    def __rmul__(self, scalar: float) -> "FemFunction":
        return FemFunction(self.space, float(scalar) * self.coefficients)


# -------------------------------------------------------------------- norms

def norm_W(v: FemFunction) -> float:
    """(sum_e h_e |v'_e|^p)^{1/p}, exact for P1."""
    s = v.slopes()
    p = v.space.p
    return float(np.sum(v.space.element_sizes * np.abs(s) ** p) ** (1.0 / p))


def norm_V(v: FemFunction) -> float:
    s = v.slopes()
    return float(math.sqrt(np.sum(v.space.element_sizes * s * s)))


def norm_H(v: FemFunction) -> float:
    c = v.coefficients
    return float(math.sqrt(max(c @ (v.space.mass_free @ c), 0.0)))


def norm_U(v: FemFunction, which: str) -> float:
    """Feedback-target norm: |v(1)| for "trace", ||v||_{L^p} for "domain"."""
    if which == "trace":
        return abs(v.trace_value())
    if which == "domain":
        p = v.space.p
        vals = _element_gauss_values(v.space, v.full_values())
        integral = np.sum(v.space.element_sizes[:, None] * _GAUSS_W * np.abs(vals) ** p)
        return float(integral ** (1.0 / p))
    raise ConfigurationError("which must be 'trace' or 'domain', got %r" % which)


def dual_norm_surrogate(space: FemSpace, residual) -> float:
    """H^1-Riesz dual norm: solve K z = R, return sqrt(z . R).

    A surrogate for the W*-norm, exact only for p = 2; monotone-equivalent
    on a fixed mesh, which is what the diagnostics need.
    """
    r = np.asarray(residual, dtype=float)
    if r.shape != (space.n_free,):
        raise ConfigurationError("residual length %d, expected %d" % (r.size, space.n_free))
    z = space.solve_stiffness(r)
    return float(math.sqrt(max(z @ r, 0.0)))


# ---------------------------------------------------------------- assembly

def _element_gauss_values(space: FemSpace, full_vals: np.ndarray) -> np.ndarray:
    """Values of the P1 function at the 3 Gauss points of every element,
    shape (n_elements, 3)."""
    a = full_vals[:-1][:, None]
    b = full_vals[1:][:, None]
    return a * (1.0 - _GAUSS_X) + b * _GAUSS_X


def _scatter_to_free(space: FemSpace, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Accumulate per-element (left-node, right-node) contributions into
    the free-node vector."""
    full = np.zeros(space.n_nodes)
    np.add.at(full, np.arange(space.n_nodes - 1), left)
    np.add.at(full, np.arange(1, space.n_nodes), right)
    return full[space.free]


def plap_apply(space: FemSpace, v: FemFunction, p: float | None = None) -> np.ndarray:
    """Pairings int |v'|^{p-2} v' phi_i' dx over free basis functions."""
    p = space.p if p is None else p
    s = v.slopes()
    flux = np.abs(s) ** (p - 2.0) * s
    return _scatter_to_free(space, -flux, flux)


def plap_tangent(space: FemSpace, v: FemFunction, p: float | None = None,
                 floor: float = PLAP_TANGENT_FLOOR) -> sp.csr_matrix:
    """Newton tangent of plap_apply: elementwise weight (p-1)|v'|^{p-2},
    floored to keep the matrix definite at flat states."""
    p = space.p if p is None else p
    s = v.slopes()
    w = (p - 1.0) * np.maximum(np.abs(s) ** (p - 2.0), floor)
    c = w / space.element_sizes
    n = space.n_nodes
    main = np.zeros(n)
    main[:-1] += c
    main[1:] += c
    mat = sp.diags([-c, main, -c], [-1, 0, 1], format="csr")
    return mat[np.ix_(space.free, space.free)].tocsr()


def nonlinear_form(space: FemSpace, v: FemFunction, fn) -> np.ndarray:
    """Pairings int fn(v(x)) phi_i(x) dx by 3-point Gauss per element."""
    vals = fn(_element_gauss_values(space, v.full_values()))
    h = space.element_sizes[:, None]
    left = np.sum(h * _GAUSS_W * vals * (1.0 - _GAUSS_X), axis=1)
    right = np.sum(h * _GAUSS_W * vals * _GAUSS_X, axis=1)
    return _scatter_to_free(space, left, right)


def nonlinear_form_tangent(space: FemSpace, v: FemFunction, dfn) -> sp.csr_matrix:
    """Tangent of nonlinear_form: int dfn(v) phi_i phi_j dx per element."""
    dvals = dfn(_element_gauss_values(space, v.full_values()))
    h = space.element_sizes[:, None]
    wa = _GAUSS_W * (1.0 - _GAUSS_X)
    wb = _GAUSS_W * _GAUSS_X
    aa = np.sum(h * dvals * wa * (1.0 - _GAUSS_X), axis=1)
    ab = np.sum(h * dvals * wa * _GAUSS_X, axis=1)
    bb = np.sum(h * dvals * wb * _GAUSS_X, axis=1)
    n = space.n_nodes
    main = np.zeros(n)
    main[:-1] += aa
    main[1:] += bb
    mat = sp.diags([ab, main, ab], [-1, 0, 1], format="csr")
    return mat[np.ix_(space.free, space.free)].tocsr()


# ------------------------------------------------------- nonlinear solves

def solve_plaplacian(space: FemSpace, rhs: np.ndarray, p: float, *,
                     tol: float = 1e-12, max_iter: int = 80) -> np.ndarray:
    """Solve sum_e h_e |w'|^{p-2} w' phi_i' = rhs_i on the constrained
    space by damped Newton, warm-started from the p = 2 solve."""
    rhs = np.asarray(rhs, dtype=float)
    w = space.solve_stiffness(rhs)
    if p == 2.0:
        return w
    scale = max(1.0, float(np.linalg.norm(rhs)))
    v = FemFunction(space, w)
    res = plap_apply(space, v, p) - rhs
    rn = float(np.linalg.norm(res))
    for _ in range(max_iter):
        if rn <= tol * scale:
            return v.coefficients
        J = plap_tangent(space, v, p)
        step = sp.linalg.spsolve(J.tocsc(), -res)
        lam = 1.0
        for _bt in range(40):
            cand = FemFunction(space, v.coefficients + lam * step)
            cres = plap_apply(space, cand, p) - rhs
            crn = float(np.linalg.norm(cres))
            if crn <= (1.0 - 1e-4 * lam) * rn:
                break
            lam *= 0.5
        v, res, rn = cand, cres, crn
    if rn > tol * scale:
        warnings.warn("p-Laplacian solve stopped at residual %.3e" % rn)
    return v.coefficients


@dataclass(frozen=True)
class QuotientAscent:
    """Result of maximizing numerator(v) / int |v'|^p over the space."""

    value: float
    quotient: float
    converged: bool
    iterations: int
    maximizer: "FemFunction"


def ascend_quotient(space: FemSpace, p: float, num_value, num_grad, start_full,
                    *, tol: float = 1e-10, budget: int = 400) -> QuotientAscent:
    """Inverse power iteration for sup num_value(v) / int |v'|^p.

    num_value maps a FemFunction to a positive real, p-homogeneous;
    num_grad returns the free-node gradient vector of num_value (any
    positive scaling, normalization absorbs it). Each sweep solves one
    p-Laplacian system; for p = 2 that is a single linear solve.
    """

    def grad_norm_p(fn: FemFunction) -> float:
        s = fn.slopes()
        return float(np.sum(space.element_sizes * np.abs(s) ** p))

    v = FemFunction.from_full(space, np.asarray(start_full, dtype=float))
    nv = num_value(v)
    if not nv > 0.0:
        raise ConfigurationError("ascent start vector has zero numerator")
    v = (1.0 / nv ** (1.0 / p)) * v
    quotient = grad_norm_p(v)
    converged = False
    it = 0
    for it in range(1, budget + 1):
        w = solve_plaplacian(space, np.asarray(num_grad(v), dtype=float), p)
        v = FemFunction(space, w)
        v = (1.0 / num_value(v) ** (1.0 / p)) * v
        new_q = grad_norm_p(v)
        if abs(new_q - quotient) <= tol * max(1.0, abs(new_q)):
            quotient = new_q
            converged = True
            break
        quotient = new_q
    return QuotientAscent(value=1.0 / quotient, quotient=quotient,
                          converged=converged, iterations=it, maximizer=v)


def poincare_estimate(space: FemSpace, p: float | None = None, *,
                      tol: float = 1e-10, budget: int = 400) -> QuotientAscent:
    """Best constant in int |v|^p <= c int |v'|^p over the FEM space.

    The returned value is 1/Q at the fixed point of the Rayleigh-type
    quotient Q(v) = int |v'|^p / int |v|^p.
    """
    p = space.p if p is None else float(p)
    if space.boundary_split == "domain":
        start = np.sin(math.pi * space.mesh_nodes)
    else:
        start = np.sin(0.5 * math.pi * space.mesh_nodes)

    def lp_norm_p(fn: FemFunction) -> float:
        vals = _element_gauss_values(space, fn.full_values())
        return float(np.sum(space.element_sizes[:, None] * _GAUSS_W * np.abs(vals) ** p))

    def lp_grad(fn: FemFunction) -> np.ndarray:
        return nonlinear_form(space, fn, lambda s: np.abs(s) ** (p - 2.0) * s)

    return ascend_quotient(space, p, lp_norm_p, lp_grad, start,
                           tol=tol, budget=budget)


def poincare_constant(space: FemSpace, p: float | None = None, *,
                      tol: float = 1e-10, budget: int = 400) -> float:
    est = poincare_estimate(space, p, tol=tol, budget=budget)
    if not est.converged:
        warnings.warn("Poincare ascent unconverged after %d sweeps; estimate "
                      "unverified" % est.iterations)
    return est.value


def snapshot_csv(v: FemFunction) -> str:
    """Nodal snapshot as two-column CSV (x, value)."""
    full = v.full_values()
    lines = ["x,value"]
    for x, val in zip(v.space.mesh_nodes, full):
        lines.append("%s,%s" % (repr(float(x)), repr(float(val))))
    return "\n".join(lines) + "\n"
