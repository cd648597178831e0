"""Time partitions and their derived step-structure parameters.

A grid 0 = t_0 < t_1 < ... < t_N = T with steps tau_n = t_n - t_{n-1}
carries half-steps, half-nodes, step ratios and the irregularity
quantities used by the stability monitors:

    tau_{n+1/2} = (tau_n + tau_{n+1})/2          n = 1..N-1
    t_{n+1/2}   = t_n + tau_{n+1}/2              n = 0..N-1
    r_n         = tau_n / tau_{n-1}              n = 2..N
    gamma_n     = max(0, 1/r_n - 1/r_{n-1})      n = 3..N
    c_gamma     = max_n gamma_n / tau_n
    sigma       = 1/2 sum_j (tau_{j+1}-tau_j)^2 / (tau_{j+1}+tau_j)

t_{1/2} = tau_1/2 extends the half-node pattern to n = 0 so that the
half-intervals tile [0, T]. The scheme needs interior steps n = 1..N-1,
so grids with N < 3 are rejected outright.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, HypothesisViolated

__all__ = [
    "TimeGrid",
    "grid_from_steps",
    "build_grid",
    "check_step_constraint",
    "StepConstraintReport",
    "nodes_csv",
]


@dataclass(frozen=True)
class TimeGrid:
    """Immutable time partition with all derived parameters.

    Arrays use 0-based storage for 1-based quantities:
    steps[n-1] = tau_n, half_steps[n-1] = tau_{n+1/2} (n = 1..N-1),
    half_nodes[n] = t_{n+1/2} (n = 0..N-1), ratios[n-2] = r_n,
    gamma_n[n-3] = gamma_n (n = 3..N).
    """

    nodes: np.ndarray
    steps: np.ndarray
    half_steps: np.ndarray
    half_nodes: np.ndarray
    ratios: np.ndarray
    gamma_n: np.ndarray
    tau_max: float
    tau_min: float
    r_max: float
    r_min: float
    c_gamma: float
    sigma: float

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def tau(self, n: int) -> float:
        """tau_n for n = 1..N."""
        return float(self.steps[n - 1])

    def tau_half(self, n: int) -> float:
        """tau_{n+1/2} for n = 1..N-1."""
        return float(self.half_steps[n - 1])

    def t_half(self, n: int) -> float:
        """t_{n+1/2} for n = 0..N-1."""
        return float(self.half_nodes[n])


def grid_from_steps(steps) -> TimeGrid:
    """Build a TimeGrid from explicit positive steps (tau_1, ..., tau_N)."""
    steps = np.asarray(steps, dtype=float)
    if steps.ndim != 1 or len(steps) < 3:
        raise ConfigurationError(
            "need at least 3 steps, got %d (interior loop is n = 1..N-1)" % len(steps)
        )
    if not np.all(steps > 0.0):
        raise ConfigurationError("all steps must be positive")
    nodes = np.concatenate(([0.0], np.cumsum(steps)))
    half_steps = 0.5 * (steps[:-1] + steps[1:])
    half_nodes = nodes[:-1] + 0.5 * steps
    ratios = steps[1:] / steps[:-1]
    inv = 1.0 / ratios
    gamma_n = np.maximum(0.0, inv[1:] - inv[:-1])
    tau_max = float(steps.max())
    tau_min = float(steps.min())
    sigma = float(0.5 * np.sum((steps[1:] - steps[:-1]) ** 2 / (steps[1:] + steps[:-1])))
    c_gamma = float(np.max(gamma_n / steps[2:]))
    grid = TimeGrid(
        nodes=nodes,
        steps=steps,
        half_steps=half_steps,
        half_nodes=half_nodes,
        ratios=ratios,
        gamma_n=gamma_n,
        tau_max=tau_max,
        tau_min=tau_min,
        r_max=float(ratios.max()),
        r_min=float(ratios.min()),
        c_gamma=c_gamma,
        sigma=sigma,
    )
    for arr in (grid.nodes, grid.steps, grid.half_steps, grid.half_nodes, grid.ratios, grid.gamma_n):
        arr.setflags(write=False)
    return grid


def build_grid(kind: str, N: int, T: float, *, ratio: float | None = None,
               seed: int | None = None, ratio_bound: float | None = None) -> TimeGrid:
    """Construct a grid of one of the supported families.

    kind: "uniform" | "geometric" (needs ratio > 0) |
          "random" (needs seed and ratio_bound D >= 1).
    Random grids draw step weights uniformly from [1, D], so
    tau_max/tau_min <= D holds exactly and the same seed reproduces the
    same grid.
    """
    if N < 3:
        raise ConfigurationError("N must be >= 3, got %d" % N)
    if not T > 0.0:
        raise ConfigurationError("horizon T must be positive, got %r" % T)
    if kind == "uniform":
        steps = np.full(N, T / N)
    elif kind == "geometric":
        if ratio is None or ratio <= 0.0:
            raise ConfigurationError("geometric grid needs a positive ratio")
        if ratio == 1.0:
            steps = np.full(N, T / N)
        else:
            tau1 = T * (ratio - 1.0) / (ratio ** N - 1.0)
            steps = tau1 * ratio ** np.arange(N)
    elif kind == "random":
        if seed is None:
            raise ConfigurationError("random grid needs a seed")
        if ratio_bound is None or ratio_bound < 1.0:
            raise ConfigurationError("random grid needs ratio_bound D >= 1")
        rng = np.random.default_rng(seed)
        weights = rng.uniform(1.0, ratio_bound, N)
        steps = weights * (T / weights.sum())
    else:
        raise ConfigurationError("unknown grid kind %r" % kind)
    return grid_from_steps(steps)


@dataclass(frozen=True)
class StepConstraintReport:
    """Admissibility of tau_max against the step-size constraint.

    bound = min(2(mu_A - c_M ||gamma||^p) / (beta_B ||i_WV||), 1/(2 beta)),
    with 1/(2 beta) = +inf for beta = 0. coarse_bound = 1/beta is the
    weaker existence-level condition, reported alongside.
    """

    bound: float
    energy_bound: float
    beta_bound: float
    coarse_bound: float
    tau_max: float
    admissible: bool
    slack: float
    coarse_admissible: bool


def check_step_constraint(grid: TimeGrid, ledger) -> StepConstraintReport:
    """Check tau_max against the structural step-size bound.

    ledger must carry mu_A, c_M, gamma_norm, beta_B, embed_norm, beta, p.
    Raises HypothesisViolated when mu_A <= c_M gamma_norm^p (the bound is
    nonpositive, no step size can satisfy it).
    """
    margin = ledger.mu_A - ledger.c_M * ledger.gamma_norm ** ledger.p
    if margin <= 0.0:
        raise HypothesisViolated(
            "hypothesis violated: mu_A = %r <= c_M ||gamma||^p = %r"
            % (ledger.mu_A, ledger.c_M * ledger.gamma_norm ** ledger.p)
        )
    energy_bound = 2.0 * margin / (ledger.beta_B * ledger.embed_norm)
    beta_bound = math.inf if ledger.beta == 0.0 else 1.0 / (2.0 * ledger.beta)
    coarse_bound = math.inf if ledger.beta == 0.0 else 1.0 / ledger.beta
    bound = min(energy_bound, beta_bound)
    return StepConstraintReport(
        bound=bound,
        energy_bound=energy_bound,
        beta_bound=beta_bound,
        coarse_bound=coarse_bound,
        tau_max=grid.tau_max,
        admissible=grid.tau_max < bound,
        slack=bound - grid.tau_max,
        coarse_admissible=grid.tau_max < coarse_bound,
    )


def nodes_csv(grid: TimeGrid) -> str:
    """Two-column CSV (index, t_n) with shortest round-trip floats."""
    lines = ["n,t_n"]
    for n, t in enumerate(grid.nodes):
        lines.append("%d,%s" % (n, repr(float(t))))
    return "\n".join(lines) + "\n"
