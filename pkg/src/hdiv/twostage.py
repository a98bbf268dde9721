"""Two-stage pipeline: per-column first-stage lasso, predicted means, second stage.

Stage one regresses each endogenous column x^j on the instrument matrix Z by
cross-validated lasso, giving Ahat and the predicted conditional means
Dhat = Z @ Ahat. Stage two is a cross-validated lasso of y on Dhat. The
entry requirement p_x <= p_z is enforced on Dataset construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lasso import CvReport, LassoFit, cv_lasso
from .matcore import DimensionMismatch, RngState, as_matrix, as_vector

__all__ = [
    "Dataset",
    "FirstStageFit",
    "GramMatrix",
    "TwoStageFit",
    "fit_first_stage",
    "fit_second_stage",
    "fit_two_stage",
    "gram",
]


@dataclass
class Dataset:
    """Observed (y, X, Z) with row-aligned dimensions and p_x <= p_z."""

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self) -> None:
        self.y = as_vector(self.y, "y")
        self.X = as_matrix(self.X, "X")
        self.Z = as_matrix(self.Z, "Z")
        n = self.y.shape[0]
        if self.X.shape[0] != n or self.Z.shape[0] != n:
            raise DimensionMismatch(
                f"row mismatch: y has {n}, X has {self.X.shape[0]}, "
                f"Z has {self.Z.shape[0]}"
            )
        if self.X.shape[1] > self.Z.shape[1]:
            raise DimensionMismatch(
                f"need p_x <= p_z, got p_x={self.X.shape[1]}, p_z={self.Z.shape[1]}"
            )

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def p_x(self) -> int:
        return int(self.X.shape[1])

    @property
    def p_z(self) -> int:
        return int(self.Z.shape[1])


@dataclass
class FirstStageFit:
    """Per-column lasso fits of X on Z and the predicted mean matrix."""

    Ahat: np.ndarray
    Dhat: np.ndarray
    fits: list[LassoFit]
    reports: list[CvReport] = field(repr=False, default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([f.lam for f in self.fits])


@dataclass
class GramMatrix:
    """Dhat^T Dhat / n. Exactly symmetric; may be singular when p_x > n."""

    sigma: np.ndarray
    source: str = "dhat"


@dataclass
class TwoStageFit:
    first: FirstStageFit
    second: LassoFit
    gram: GramMatrix


def fit_first_stage(
    Z,
    X,
    rng: RngState,
    folds: int = 10,
    grid_size: int = 100,
    grid_ratio: float = 0.01,
    **lasso_kw,
) -> FirstStageFit:
    """Cross-validated lasso of each column of X on Z.

    Fold assignments are drawn independently per column from child streams of
    ``rng``, so column fits are exchangeable under column permutation.
    """
    Z = as_matrix(Z, "Z")
    X = as_matrix(X, "X")
    if Z.shape[0] != X.shape[0]:
        raise DimensionMismatch("Z and X must have the same number of rows")
    if Z.shape[0] < 2:
        raise ValueError("fit_first_stage: need n >= 2")
    if X.shape[1] > Z.shape[1]:
        raise DimensionMismatch("need p_x <= p_z")
    if np.any((Z * Z).sum(axis=0) == 0):
        raise ValueError("fit_first_stage: Z contains an all-zero column")
    fits: list[LassoFit] = []
    reports: list[CvReport] = []
    for j in range(X.shape[1]):
        try:
            report, fit = cv_lasso(
                Z,
                X[:, j],
                folds=folds,
                rng=rng.child(j),
                grid_size=grid_size,
                grid_ratio=grid_ratio,
                **lasso_kw,
            )
        except Exception as exc:
            raise type(exc)(f"first-stage column {j}: {exc}") from exc
        fits.append(fit)
        reports.append(report)
    Ahat = np.column_stack([f.coefficients for f in fits])
    return FirstStageFit(Ahat=Ahat, Dhat=Z @ Ahat, fits=fits, reports=reports)


def gram(Dhat) -> GramMatrix:
    """Scaled cross-product Dhat^T Dhat / n, symmetrized exactly."""
    D = as_matrix(Dhat, "Dhat")
    if D.shape[0] < 1:
        raise ValueError("gram: need n >= 1")
    m = D.T @ D / D.shape[0]
    upper = np.triu(m)
    return GramMatrix(sigma=upper + np.triu(m, 1).T)


def fit_second_stage(
    Dhat,
    y,
    rng: RngState,
    folds: int = 10,
    grid_size: int = 100,
    grid_ratio: float = 0.01,
    **lasso_kw,
) -> LassoFit:
    """Cross-validated lasso of y on the predicted means."""
    _, fit = cv_lasso(
        Dhat,
        y,
        folds=folds,
        rng=rng,
        grid_size=grid_size,
        grid_ratio=grid_ratio,
        **lasso_kw,
    )
    return fit


def fit_two_stage(
    data: Dataset,
    rng: RngState,
    folds: int = 10,
    grid_size: int = 100,
    grid_ratio: float = 0.01,
    **lasso_kw,
) -> TwoStageFit:
    """Run both stages and assemble the Gram matrix of the predicted means."""
    first = fit_first_stage(
        data.Z,
        data.X,
        rng.child(0),
        folds=folds,
        grid_size=grid_size,
        grid_ratio=grid_ratio,
        **lasso_kw,
    )
    second = fit_second_stage(
        first.Dhat,
        data.y,
        rng.child(1),
        folds=folds,
        grid_size=grid_size,
        grid_ratio=grid_ratio,
        **lasso_kw,
    )
    return TwoStageFit(first=first, second=second, gram=gram(first.Dhat))
