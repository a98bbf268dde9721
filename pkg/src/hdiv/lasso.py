"""L1-penalized least squares: coordinate descent, warm-started paths, K-fold CV.

The objective throughout is ||g - W b||^2 / (2n) + lam * ||b||_1 with no
intercept and no column standardization (the model is mean zero by
construction; an optional ``standardize`` flag is exposed but off by default).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._cd import cd_path, cd_solve
from .matcore import DimensionMismatch, RngState, as_matrix, as_vector

__all__ = [
    "CvReport",
    "InvalidGridSpec",
    "LambdaGrid",
    "LassoFit",
    "TooFewObservations",
    "cv_lasso",
    "fit_lasso",
    "kkt_check",
    "kkt_residual",
    "lambda_grid",
    "lambda_max",
    "objective_value",
    "soft_threshold",
]

DEFAULT_TOL = 1e-7
DEFAULT_KKT_TOL = 1e-6
DEFAULT_MAX_ITER = 100_000


class InvalidGridSpec(ValueError):
    """Malformed lambda grid request."""


class TooFewObservations(ValueError):
    """Not enough rows for the requested fold count."""


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0). Requires gamma >= 0."""
    if gamma < 0:
        raise ValueError("soft_threshold: gamma must be nonnegative")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def objective_value(W, g, b, lam: float) -> float:
    """Penalized least-squares objective at b."""
    W = as_matrix(W, "W")
    g = as_vector(g, "g")
    b = as_vector(b, "b")
    r = g - W @ b
    return float(r @ r / (2.0 * W.shape[0]) + lam * np.abs(b).sum())


@dataclass
class LassoFit:
    """Solution record for one penalty level.

    ``objective_path`` holds the objective value after each coordinate sweep;
    it is weakly decreasing. ``converged`` means the final sweep moved every
    coordinate by less than tol and the global KKT residual was at most
    kkt_tol.
    """

    coefficients: np.ndarray
    lam: float
    iterations: int
    converged: bool
    objective: float
    objective_path: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


@dataclass
class LambdaGrid:
    """Strictly decreasing penalty grid."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = as_vector(self.values, "LambdaGrid")
        if v.size == 0:
            raise InvalidGridSpec("LambdaGrid: empty grid")
        if np.any(v < 0):
            raise InvalidGridSpec("LambdaGrid: negative penalty")
        if v.size > 1 and not np.all(np.diff(v) < 0):
            raise InvalidGridSpec("LambdaGrid: values must be strictly decreasing")
        self.values = v

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class CvReport:
    """Cross-validation trace: grid, pooled prediction error curve, choice."""

    grid: LambdaGrid
    cv_errors: np.ndarray
    chosen_index: int
    fold_ids: np.ndarray

    @property
    def chosen_lambda(self) -> float:
        return float(self.grid.values[self.chosen_index])


def _check_problem(W, g):
    W = as_matrix(W, "W")
    g = as_vector(g, "g")
    if W.shape[0] != g.shape[0]:
        raise DimensionMismatch(
            f"W has {W.shape[0]} rows but g has {g.shape[0]} entries"
        )
    if W.shape[0] < 1:
        raise TooFewObservations("need at least one observation")
    return W, g


def lambda_max(W, g) -> float:
    """Smallest penalty at which the lasso solution is identically zero."""
    W, g = _check_problem(W, g)
    if W.shape[1] == 0:
        return 0.0
    return float(np.abs(W.T @ g).max() / W.shape[0])


def lambda_grid(lmax: float, size: int = 100, ratio: float = 0.01) -> LambdaGrid:
    """Log-equispaced decreasing grid from lmax down to ratio * lmax."""
    if not lmax > 0:
        raise InvalidGridSpec(f"lambda_grid: lmax must be positive, got {lmax}")
    if size < 2:
        raise InvalidGridSpec(f"lambda_grid: size must be >= 2, got {size}")
    if not 0 < ratio < 1:
        raise InvalidGridSpec(f"lambda_grid: ratio must be in (0, 1), got {ratio}")
    t = np.arange(size) / (size - 1)
    return LambdaGrid(lmax * np.power(ratio, t))


def _standardized(W):
    scale = np.sqrt((W * W).mean(axis=0))
    scale[scale == 0] = 1.0
    return W / scale, scale


def fit_lasso(
    W,
    g,
    lam: float,
    init=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    kkt_tol: float = DEFAULT_KKT_TOL,
    standardize: bool = False,
) -> LassoFit:
    """Coordinate-descent lasso at one penalty level.

    Parameters
    ----------
    W, g : design matrix (n x p) and response (n).
    lam : nonnegative penalty.
    init : optional warm start, length p.
    tol : per-sweep max coordinate update threshold.
    max_iter : sweep budget; on exhaustion the best iterate is returned with
        ``converged=False`` rather than raising.
    kkt_tol : stationarity certificate tolerance.
    standardize : rescale columns to unit mean square before fitting and map
        coefficients back. Off by default.
    """
    W, g = _check_problem(W, g)
    if lam < 0:
        raise ValueError("fit_lasso: lambda must be nonnegative")
    n, p = W.shape
    scale = None
    if standardize:
        W, scale = _standardized(W)
    if init is None:
        b0 = np.zeros(p)
    else:
        b0 = np.array(as_vector(init, "init"), dtype=np.float64)
        if b0.shape[0] != p:
            raise DimensionMismatch("init length does not match column count")
        if scale is not None:
            b0 = b0 * scale
    Wf = np.asfortranarray(W)
    b, sweeps, converged, obj_path = cd_solve(
        Wf, g, float(lam), b0, float(tol), int(max_iter), float(kkt_tol)
    )
    if scale is not None:
        b = b / scale
        W = W * scale
    return LassoFit(
        coefficients=b,
        lam=float(lam),
        iterations=int(sweeps),
        converged=bool(converged),
        objective=objective_value(W, g, b, float(lam)),
        objective_path=obj_path,
    )


def kkt_residual(W, g, b, lam: float) -> float:
    """Worst violation of the lasso stationarity conditions at b.

    With c = W^T (g - W b) / n this is max over j of |c_j| - lam (clipped at
    0) for inactive coordinates and |c_j - lam * sign(b_j)| for active ones.
    """
    W, g = _check_problem(W, g)
    b = as_vector(b, "b")
    c = W.T @ (g - W @ b) / W.shape[0]
    active = b != 0
    viol = np.maximum(np.abs(c) - lam, 0.0)
    viol[active] = np.abs(c[active] - lam * np.sign(b[active]))
    return float(viol.max()) if viol.size else 0.0


def kkt_check(W, g, b, lam: float, tol: float = DEFAULT_KKT_TOL) -> bool:
    """Optimality certificate: stationarity within tol at every coordinate."""
    return kkt_residual(W, g, b, lam) <= tol


def cv_lasso(
    W,
    g,
    folds: int = 10,
    rng: RngState | None = None,
    grid_size: int = 100,
    grid_ratio: float = 0.01,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    kkt_tol: float = DEFAULT_KKT_TOL,
) -> tuple[CvReport, LassoFit]:
    """K-fold cross-validated lasso.

    Folds are contiguous blocks of a seeded shuffle of the rows. The grid is
    log-spaced from the full-data lambda_max down to grid_ratio times it, and
    per-fold paths are computed with warm starts down the grid. The chosen
    index minimizes the pooled squared prediction error; ties resolve to the
    smallest index, i.e. the largest penalty and hence the sparser model.
    Returns the report and the full-data refit at the chosen penalty.

    The degenerate case lambda_max = 0 (g exactly orthogonal to every column)
    is handled with a single-point grid [0.0].
    """
    W, g = _check_problem(W, g)
    n = W.shape[0]
    if folds < 2 or folds > n:
        raise TooFewObservations(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    if rng is None:
        rng = RngState(0)
    perm = rng.generator().permutation(n)
    fold_ids = np.empty(n, dtype=np.int64)
    for f, block in enumerate(np.array_split(perm, folds)):
        fold_ids[block] = f
    lmax = lambda_max(W, g)
    if lmax > 0:
        grid = lambda_grid(lmax, grid_size, grid_ratio)
    else:
        grid = LambdaGrid(np.array([0.0]))
    lams = grid.values
    sse = np.zeros(lams.size)
    for f in range(folds):
        test = fold_ids == f
        train = ~test
        Wtr = np.asfortranarray(W[train])
        B, _, _ = cd_path(
            Wtr, g[train], lams, float(tol), int(max_iter), float(kkt_tol)
        )
        resid = W[test] @ B.T - g[test][:, None]
        sse += (resid * resid).sum(axis=0)
    cv_errors = sse / n
    chosen = int(np.argmin(cv_errors))
    Wf = np.asfortranarray(W)
    Bfull, _, _ = cd_path(
        Wf, g, lams[: chosen + 1], float(tol), int(max_iter), float(kkt_tol)
    )
    fit = fit_lasso(
        W,
        g,
        float(lams[chosen]),
        init=Bfull[chosen],
        tol=tol,
        max_iter=max_iter,
        kkt_tol=kkt_tol,
    )
    return CvReport(grid, cv_errors, chosen, fold_ids), fit
