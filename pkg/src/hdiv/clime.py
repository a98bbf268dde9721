"""Row-wise l1-minimal precision estimation under an l-infinity constraint.

For each row j: minimize ||theta||_1 subject to ||Sigma theta - e_j||_inf
<= mu_j, where mu_j is kappa times the minimal feasible tolerance computed by
a Chebyshev linear program. Rows are kept raw (no symmetrization). Every
returned row carries a feasibility certificate checked in plain float
arithmetic, which is the contract; the LP backend is scipy's HiGHS dual
simplex run at 1e-10 feasibility tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .matcore import as_matrix, as_vector
from .twostage import GramMatrix

__all__ = [
    "ClimeRow",
    "FEAS_TOL",
    "Infeasible",
    "LpProblem",
    "MU_FLOOR",
    "NumericalFailure",
    "PrecisionEstimate",
    "Unbounded",
    "build_precision",
    "min_inf_residual",
    "solve_clime_row",
    "solve_lp",
]

MU_FLOOR = 1e-10
FEAS_TOL = 1e-8


class Infeasible(ValueError):
    """The linear program has no feasible point."""


class Unbounded(ValueError):
    """The linear program is unbounded below."""


class NumericalFailure(RuntimeError):
    """The solver failed to certify an optimum."""


@dataclass
class LpProblem:
    """min c @ x subject to A_ub @ x <= b_ub, x_i >= 0 where nonneg[i]."""

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    nonneg: np.ndarray

    def __post_init__(self) -> None:
        self.c = as_vector(self.c, "c")
        self.A_ub = as_matrix(self.A_ub, "A_ub")
        self.b_ub = as_vector(self.b_ub, "b_ub")
        self.nonneg = np.asarray(self.nonneg, dtype=bool)
        nvar = self.c.shape[0]
        if self.A_ub.shape != (self.b_ub.shape[0], nvar):
            raise ValueError(
                f"LpProblem: A_ub shape {self.A_ub.shape} inconsistent with "
                f"{self.b_ub.shape[0]} bounds and {nvar} variables"
            )
        if self.nonneg.shape != (nvar,):
            raise ValueError("LpProblem: nonneg flags must match variable count")


def solve_lp(problem: LpProblem) -> tuple[np.ndarray, float]:
    """Solve the LP; returns (optimal point, optimal value)."""
    bounds = [(0.0, None) if nn else (None, None) for nn in problem.nonneg]
    res = linprog(
        problem.c,
        A_ub=problem.A_ub,
        b_ub=problem.b_ub,
        bounds=bounds,
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0 or res.x is None:
        raise NumericalFailure(res.message)
    return np.asarray(res.x, dtype=np.float64), float(res.fun)


@dataclass
class ClimeRow:
    """One precision row with its feasibility certificate inputs."""

    j: int
    theta: np.ndarray
    mu: float
    residual_inf: float
    objective: float

    @property
    def certified(self) -> bool:
        return self.residual_inf <= self.mu + FEAS_TOL


@dataclass
class PrecisionEstimate:
    """Assembled Theta-hat whose row j is the raw row solution theta_j.

    No symmetrization or averaging is applied at assembly.
    """

    rows: list[ClimeRow]
    kappa: float
    matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.matrix = np.vstack([r.theta for r in self.rows])

    @property
    def dim(self) -> int:
        return len(self.rows)

    def worst_slack(self) -> float:
        """Max over rows of residual_inf - mu; certified iff <= FEAS_TOL."""
        return max(r.residual_inf - r.mu for r in self.rows)


def _sigma_array(sigma) -> np.ndarray:
    if isinstance(sigma, GramMatrix):
        s = sigma.sigma
    else:
        s = as_matrix(sigma, "sigma")
    if s.shape[0] != s.shape[1]:
        raise ValueError("sigma must be square")
    return s


def min_inf_residual(sigma, j: int) -> float:
    """Optimal value of the Chebyshev program min_theta ||sigma theta - e_j||_inf.

    Zero (up to solver accuracy) exactly when e_j lies in the range of sigma,
    in particular whenever sigma is invertible.
    """
    S = _sigma_array(sigma)
    p = S.shape[0]
    if not 0 <= j < p:
        raise IndexError(f"row index {j} out of range for dimension {p}")
    ej = np.zeros(p)
    ej[j] = 1.0
    ones = np.ones((p, 1))
    c = np.zeros(p + 1)
    c[p] = 1.0
    A = np.vstack([np.hstack([S, -ones]), np.hstack([-S, -ones])])
    b = np.concatenate([ej, -ej])
    nonneg = np.zeros(p + 1, dtype=bool)
    nonneg[p] = True
    _, val = solve_lp(LpProblem(c, A, b, nonneg))
    return max(float(val), 0.0)


def solve_clime_row(sigma, j: int, mu: float) -> ClimeRow:
    """l1-minimal theta with ||sigma theta - e_j||_inf <= mu.

    Solved as an LP in the split variables theta = theta_plus - theta_minus,
    both nonnegative. Raises Infeasible when mu is below the minimal feasible
    tolerance for this row.
    """
    S = _sigma_array(sigma)
    p = S.shape[0]
    if not 0 <= j < p:
        raise IndexError(f"row index {j} out of range for dimension {p}")
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    ej = np.zeros(p)
    ej[j] = 1.0
    c = np.ones(2 * p)
    A = np.vstack([np.hstack([S, -S]), np.hstack([-S, S])])
    b = np.concatenate([ej + mu, mu - ej])
    x, _ = solve_lp(LpProblem(c, A, b, np.ones(2 * p, dtype=bool)))
    theta = x[:p] - x[p:]
    resid = float(np.abs(S @ theta - ej).max())
    row = ClimeRow(
        j=int(j),
        theta=theta,
        mu=float(mu),
        residual_inf=resid,
        objective=float(np.abs(theta).sum()),
    )
    if not row.certified:
        raise NumericalFailure(
            f"row {j}: residual {resid:.3e} exceeds mu {mu:.3e} + {FEAS_TOL}"
        )
    return row


def build_precision(sigma, kappa: float = 1.2, mu: float | None = None) -> PrecisionEstimate:
    """Solve all rows with per-row tolerances mu_j = kappa * minimal residual.

    Exactly solvable rows (minimal residual 0) are floored at MU_FLOOR to keep
    the program well posed. Passing ``mu`` overrides the per-row rule with one
    uniform tolerance. Row failures are aggregated and reported together.
    """
    S = _sigma_array(sigma)
    if mu is None and kappa <= 1:
        raise ValueError(f"kappa must exceed 1, got {kappa}")
    rows: list[ClimeRow] = []
    failures: list[tuple[int, str]] = []
    for j in range(S.shape[0]):
        try:
            mu_j = float(mu) if mu is not None else max(
                kappa * min_inf_residual(S, j), MU_FLOOR
            )
            rows.append(solve_clime_row(S, j, mu_j))
        except (Infeasible, Unbounded, NumericalFailure, ValueError) as exc:
            failures.append((j, str(exc)))
    if failures:
        idx = [j for j, _ in failures]
        raise NumericalFailure(
            f"precision rows failed at indices {idx}: {failures[0][1]}"
        )
    return PrecisionEstimate(rows=rows, kappa=float(kappa))
