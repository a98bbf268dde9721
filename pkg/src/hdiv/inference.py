"""One-step debiasing, standard errors, and confidence intervals.

The debiased coefficient is beta_hat plus a single Newton-type correction
Theta Dhat' (y - X beta_hat) / n. Note the residual is taken against X, the
observed regressors, not against the fitted first stage. Reported standard
errors are on the per-observation scale, so intervals read
beta_db +- z * se with z the two-sided normal quantile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .matcore import DimensionMismatch, as_matrix, as_vector
from .twostage import TwoStageFit

__all__ = [
    "InferenceResult",
    "InvalidAlpha",
    "NonpositiveDiagonal",
    "RemainderDiagnostics",
    "SingularPopulationGram",
    "build_inference",
    "confidence_interval",
    "one_step_update",
    "remainder_decomposition",
    "se_homoscedastic",
    "se_robust",
    "sigma_u_hat",
    "z_quantile",
]

SE_MODES = ("homoscedastic", "robust")


class InvalidAlpha(ValueError):
    """Confidence level outside (0, 1)."""


class NonpositiveDiagonal(ValueError):
    """A precision diagonal entry is not strictly positive."""


class SingularPopulationGram(ValueError):
    """The population second-stage Gram matrix is not invertible."""


def _theta_matrix(Theta) -> np.ndarray:
    """Accept a PrecisionEstimate or a plain square array."""
    mat = getattr(Theta, "matrix", Theta)
    mat = as_matrix(mat, "Theta")
    if mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch("Theta must be square")
    return mat


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie strictly in (0, 1), got {alpha}")


def z_quantile(alpha: float) -> float:
    """Two-sided standard normal critical value, Phi^{-1}(1 - alpha/2)."""
    _check_alpha(alpha)
    return float(norm.ppf(1.0 - alpha / 2.0))


def one_step_update(beta_hat, Theta, Dhat, X, y) -> np.ndarray:
    """beta_hat + Theta Dhat' (y - X beta_hat) / n.

    Only matrix-vector products are formed; no p x p intermediate beyond
    Theta itself.
    """
    beta_hat = as_vector(beta_hat, "beta_hat")
    Dhat = as_matrix(Dhat, "Dhat")
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    Th = _theta_matrix(Theta)
    n, p = X.shape
    if Dhat.shape != (n, p) or y.shape[0] != n or beta_hat.shape[0] != p:
        raise DimensionMismatch(
            f"one_step_update: X {X.shape}, Dhat {Dhat.shape}, "
            f"y {y.shape}, beta_hat {beta_hat.shape}"
        )
    if Th.shape[0] != p:
        raise DimensionMismatch(f"Theta has dimension {Th.shape[0]}, expected {p}")
    resid = y - X @ beta_hat
    return beta_hat + Th @ (Dhat.T @ resid) / n


def sigma_u_hat(y, X, beta_hat) -> float:
    """Root mean squared second-stage residual, ||y - X beta_hat|| / sqrt(n)."""
    y = as_vector(y, "y")
    X = as_matrix(X, "X")
    beta_hat = as_vector(beta_hat, "beta_hat")
    if X.shape != (y.shape[0], beta_hat.shape[0]):
        raise DimensionMismatch(
            f"sigma_u_hat: X {X.shape} vs y {y.shape}, beta_hat {beta_hat.shape}"
        )
    resid = y - X @ beta_hat
    return float(np.sqrt(resid @ resid / y.shape[0]))


def se_homoscedastic(sigma_u: float, Theta, j: int) -> float:
    """sqrt(sigma_u^2 * Theta_jj); Theta_jj must be strictly positive."""
    Th = _theta_matrix(Theta)
    if not 0 <= j < Th.shape[0]:
        raise IndexError(f"coordinate {j} out of range")
    djj = Th[j, j]
    if djj <= 0:
        raise NonpositiveDiagonal(
            f"Theta[{j},{j}] = {djj}; precision row is degenerate"
        )
    return float(math.sqrt(sigma_u * sigma_u * djj))


def se_robust(y, X, beta_hat, Theta, Dhat, j: int) -> float:
    """sqrt( mean_i (y_i - x_i'beta_hat)^2 <theta_j, dhat_i>^2 )."""
    y = as_vector(y, "y")
    X = as_matrix(X, "X")
    beta_hat = as_vector(beta_hat, "beta_hat")
    Dhat = as_matrix(Dhat, "Dhat")
    Th = _theta_matrix(Theta)
    if not 0 <= j < Th.shape[0]:
        raise IndexError(f"coordinate {j} out of range")
    resid = y - X @ beta_hat
    proj = Dhat @ Th[j]
    return float(np.sqrt(np.mean((resid * proj) ** 2)))


def confidence_interval(
    beta_db_j: float, se_j: float, alpha: float, n: int
) -> tuple[float, float]:
    """Symmetric normal interval with half-width z_alpha * se_j / sqrt(n).

    ``se_j`` here is on the sqrt(n)-inflated scale; dividing by sqrt(n)
    yields the reported per-observation standard error.
    """
    _check_alpha(alpha)
    if se_j < 0:
        raise ValueError(f"standard error must be nonnegative, got {se_j}")
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    half = z_quantile(alpha) * (se_j / math.sqrt(n))
    return (float(beta_db_j - half), float(beta_db_j + half))


@dataclass
class InferenceResult:
    """Debiased coefficients with componentwise intervals.

    ``se`` is the reported per-observation standard error, so the interval
    width is exactly 2 * z_alpha * se.
    """

    beta_db: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    alpha: float
    se_mode: str

    def __post_init__(self) -> None:
        p = self.beta_db.shape[0]
        for name in ("se", "ci_lower", "ci_upper"):
            if getattr(self, name).shape != (p,):
                raise DimensionMismatch(f"InferenceResult: {name} length != {p}")


def build_inference(
    fit: TwoStageFit,
    Theta,
    X,
    y,
    alpha: float = 0.05,
    se_mode: str = "robust",
) -> InferenceResult:
    """Debias a two-stage fit and attach componentwise confidence intervals."""
    _check_alpha(alpha)
    if se_mode not in SE_MODES:
        raise ValueError(f"se_mode must be one of {SE_MODES}, got {se_mode!r}")
    X = as_matrix(X, "X")
    y = as_vector(y, "y")
    beta_hat = fit.second.coefficients
    Dhat = fit.first.Dhat
    Th = _theta_matrix(Theta)
    n = X.shape[0]
    beta_db = one_step_update(beta_hat, Th, Dhat, X, y)
    resid = y - X @ beta_hat
    if se_mode == "homoscedastic":
        diag = np.diag(Th)
        bad = np.flatnonzero(diag <= 0)
        if bad.size:
            raise NonpositiveDiagonal(
                f"Theta diagonal nonpositive at coordinates {bad.tolist()}"
            )
        sigma_u = float(np.sqrt(resid @ resid / n))
        w = np.sqrt(sigma_u * sigma_u * diag)
    else:
        # <theta_j, dhat_i> for all (i, j) in one product.
        proj = Dhat @ Th.T
        w = np.sqrt(np.mean((resid[:, None] * proj) ** 2, axis=0))
    se = w / math.sqrt(n)
    half = z_quantile(alpha) * se
    return InferenceResult(
        beta_db=beta_db,
        se=se,
        ci_lower=beta_db - half,
        ci_upper=beta_db + half,
        alpha=float(alpha),
        se_mode=se_mode,
    )


@dataclass
class RemainderDiagnostics:
    """Exact finite-sample split of sqrt(n) (beta_db - beta).

    main_term is the oracle score Theta D'u / sqrt(n) built from population
    quantities; the four remainders absorb, in order, the precision
    estimation error, the first-stage fit error hitting the noise, the
    regressor-minus-fit cross term, and the inexact-inverse term. Their sum
    reproduces the estimator error to floating-point accuracy.
    """

    main_term: np.ndarray
    rem1: np.ndarray
    rem2: np.ndarray
    rem3: np.ndarray
    rem4: np.ndarray
    reconstruction_gap: float


def remainder_decomposition(
    model, fit: TwoStageFit, Theta, u, D, X
) -> RemainderDiagnostics:
    """Decompose the debiased error for a simulated fit with known truth.

    ``model`` supplies the true coefficients and the population precision of
    the projected design; ``u``, ``D`` and ``X`` are the realized noise, true
    projected design, and observed regressors from the same draw. The
    response is reconstructed as X beta + u, so the identity is exact.
    """
    u = as_vector(u, "u")
    D = as_matrix(D, "D")
    X = as_matrix(X, "X")
    beta = as_vector(model.beta, "beta")
    Theta_pop = as_matrix(model.population_precision, "population precision")
    Th = _theta_matrix(Theta)
    n, p = X.shape
    if D.shape != (n, p) or u.shape[0] != n:
        raise DimensionMismatch(
            f"remainder_decomposition: X {X.shape}, D {D.shape}, u {u.shape}"
        )
    rn = math.sqrt(n)
    y = X @ beta + u
    beta_hat = fit.second.coefficients
    Dhat = fit.first.Dhat
    Sigma_hat = fit.gram.sigma
    beta_db = one_step_update(beta_hat, Th, Dhat, X, y)

    score = D.T @ u
    delta = beta - beta_hat
    main = Theta_pop @ score / rn
    rem1 = (Th - Theta_pop) @ score / rn
    rem2 = Th @ ((Dhat - D).T @ u) / rn
    rem3 = Th @ (Dhat.T @ ((X - Dhat) @ delta)) / rn
    rem4 = rn * (Th @ (Sigma_hat @ delta) - delta)
    total = rn * (beta_db - beta)
    gap = float(
        np.abs(total - main - rem1 - rem2 - rem3 - rem4).max()
    )
    return RemainderDiagnostics(
        main_term=main,
        rem1=rem1,
        rem2=rem2,
        rem3=rem3,
        rem4=rem4,
        reconstruction_gap=gap,
    )
