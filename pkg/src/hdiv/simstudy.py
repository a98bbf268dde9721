"""Synthetic data generation and the Monte Carlo study runner.

A study draws one model (supports, coefficient signs, covariances) per seed,
then runs independent trials. Each trial owns an RNG stream split from the
study seed by trial index, so trial results do not depend on execution order
or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve

from .clime import FEAS_TOL, PrecisionEstimate, build_precision
from .inference import (
    InferenceResult,
    RemainderDiagnostics,
    SE_MODES,
    SingularPopulationGram,
    build_inference,
    remainder_decomposition,
)
from .lasso import DEFAULT_KKT_TOL, cv_lasso, kkt_residual
from .matcore import (
    NotPositiveDefinite,
    RngState,
    SpdMatrix,
    circulant_sigma,
    cholesky,
    mvnormal_sample,
    toeplitz_sigma,
)
from .twostage import Dataset, TwoStageFit, fit_two_stage

__all__ = [
    "IvModel",
    "StudyConfig",
    "StudyError",
    "StudyMetrics",
    "SupportTooLarge",
    "TrialRecord",
    "build_model",
    "build_sigma_uv",
    "endogeneity_comparison",
    "gen_supports",
    "run_study",
    "run_trial",
]

SIGMA_STRUCTURES = ("TZ", "CS")


class SupportTooLarge(ValueError):
    """Requested support size exceeds the index range."""


class StudyError(RuntimeError):
    """Too many trials failed for the aggregate metrics to be meaningful."""


def gen_supports(rng: RngState, p: int, s: int) -> np.ndarray:
    """Sorted uniformly random s-subset of {0, ..., p-1}, without replacement."""
    if not 0 <= s <= p:
        raise SupportTooLarge(f"support size {s} invalid for range of size {p}")
    g = rng.generator() if isinstance(rng, RngState) else rng
    return np.sort(g.choice(p, size=s, replace=False).astype(np.int64))


def build_sigma_uv(
    rng: RngState,
    p_x: int,
    sigma_u2: float = 0.7,
    sigma_v2: float = 0.7,
    max_coupling: float = 0.95,
) -> SpdMatrix:
    """Joint noise covariance [[sigma_u2, s'], [s, sigma_v2 I]].

    The coupling vector s holds, in random positions, one 0.5, then
    min(9, p_x - 1) entries of 0.25, and 0.05 elsewhere. Positive
    definiteness requires ||s||^2 < sigma_u2 * sigma_v2, which this pattern
    violates once p_x >= 5; in that case s is shrunk proportionally so its
    norm sits at ``max_coupling`` times the boundary, preserving the graded
    pattern and every ratio between entries.
    """
    if p_x < 1:
        raise ValueError(f"p_x must be >= 1, got {p_x}")
    if sigma_u2 <= 0 or sigma_v2 <= 0:
        raise ValueError("noise variances must be positive")
    if not 0 < max_coupling < 1:
        raise ValueError(f"max_coupling must lie in (0, 1), got {max_coupling}")
    g = rng.generator() if isinstance(rng, RngState) else rng
    s = np.full(p_x, 0.05)
    pos = g.permutation(p_x)
    s[pos[0]] = 0.5
    s[pos[1 : 1 + min(9, p_x - 1)]] = 0.25
    bound2 = sigma_u2 * sigma_v2
    norm2 = float(s @ s)
    if norm2 >= bound2:
        s *= max_coupling * math.sqrt(bound2 / norm2)
    m = np.empty((1 + p_x, 1 + p_x))
    m[0, 0] = sigma_u2
    m[0, 1:] = s
    m[1:, 0] = s
    m[1:, 1:] = sigma_v2 * np.eye(p_x)
    return SpdMatrix(m)


@dataclass(frozen=True)
class StudyConfig:
    """One simulation configuration; hashable so it can ship to workers."""

    n: int
    p_x: int
    p_z: int
    s_b: int
    s_a: int
    sigma_structure: str = "CS"
    n_trials: int = 100
    alpha: float = 0.05
    kappa: float = 1.2
    folds: int = 10
    grid_size: int = 100
    grid_ratio: float = 0.01
    seed: int = 0
    se_mode: str = "robust"
    diagnostics: bool = True

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"n must be >= 2, got {self.n}")
        if self.p_x < 1 or self.p_z < self.p_x:
            raise ValueError(
                f"need 1 <= p_x <= p_z, got p_x={self.p_x}, p_z={self.p_z}"
            )
        if not 0 <= self.s_b <= self.p_x:
            raise ValueError(f"s_b={self.s_b} invalid for p_x={self.p_x}")
        if not 0 <= self.s_a <= self.p_z:
            raise ValueError(f"s_a={self.s_a} invalid for p_z={self.p_z}")
        if self.sigma_structure not in SIGMA_STRUCTURES:
            raise ValueError(
                f"sigma_structure must be one of {SIGMA_STRUCTURES}, "
                f"got {self.sigma_structure!r}"
            )
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kappa <= 1.0:
            raise ValueError(f"kappa must exceed 1, got {self.kappa}")
        if self.se_mode not in SE_MODES:
            raise ValueError(f"se_mode must be one of {SE_MODES}")


@dataclass
class IvModel:
    """Population truth for one study: supports, coefficients, covariances."""

    A: np.ndarray
    beta: np.ndarray
    S_beta: np.ndarray
    S_a: list
    Sigma_z: SpdMatrix
    Sigma_uv: SpdMatrix

    @property
    def sigma_u(self) -> float:
        return float(math.sqrt(self.Sigma_uv.mat[0, 0]))

    @property
    def sigma_v(self) -> float:
        return float(math.sqrt(self.Sigma_uv.mat[1, 1]))

    @cached_property
    def population_gram(self) -> np.ndarray:
        """A' Sigma_z A, the covariance of the projected design."""
        return self.A.T @ self.Sigma_z.mat @ self.A

    @cached_property
    def population_precision(self) -> np.ndarray:
        gram = self.population_gram
        # Cholesky alone can slip past an exactly singular gram (0/1 support
        # columns can be linearly dependent), so gate on the spectrum first.
        w = np.linalg.eigvalsh(gram)
        if w[-1] <= 0 or w[0] <= w[-1] * 1e-12:
            raise SingularPopulationGram(
                "population gram is singular; instrument supports give a "
                "rank-deficient projected design"
            )
        try:
            L = cholesky(gram)
        except NotPositiveDefinite as exc:
            raise SingularPopulationGram(
                "population gram is singular; instrument supports give a "
                "rank-deficient projected design"
            ) from exc
        return cho_solve((L, True), np.eye(gram.shape[0]))


def build_model(cfg: StudyConfig, rng: RngState) -> IvModel:
    """Draw supports and assemble the population objects for one study."""
    S_beta = gen_supports(rng.child(0), cfg.p_x, cfg.s_b)
    beta = np.zeros(cfg.p_x)
    beta[S_beta] = 1.0
    A = np.zeros((cfg.p_z, cfg.p_x))
    S_a = []
    for j in range(cfg.p_x):
        sj = gen_supports(rng.child(1 + j), cfg.p_z, cfg.s_a)
        S_a.append(sj)
        A[sj, j] = 1.0
    Sigma_uv = build_sigma_uv(rng.child(1 + cfg.p_x), cfg.p_x)
    if cfg.sigma_structure == "TZ":
        Sigma_z = toeplitz_sigma(cfg.p_z, 0.8)
    else:
        Sigma_z = circulant_sigma(cfg.p_z)
    return IvModel(
        A=A, beta=beta, S_beta=S_beta, S_a=S_a, Sigma_z=Sigma_z, Sigma_uv=Sigma_uv
    )


@dataclass
class TrialRecord:
    """Everything one trial produced, including its certificates."""

    fit: TwoStageFit
    inference: InferenceResult
    hits: np.ndarray
    diagnostics: RemainderDiagnostics | None
    kkt_worst: float
    kkt_ok: bool
    clime_worst_slack: float
    clime_ok: bool

    @property
    def lengths(self) -> np.ndarray:
        return self.inference.ci_upper - self.inference.ci_lower


def _draw(model: IvModel, cfg: StudyConfig, rng: RngState):
    """One data draw: returns (Z, D, V, u, X, y)."""
    Z = mvnormal_sample(rng.child(0), model.Sigma_z.chol, cfg.n)
    E = mvnormal_sample(rng.child(1), model.Sigma_uv.chol, cfg.n)
    u = E[:, 0].copy()
    V = E[:, 1:].copy()
    D = Z @ model.A
    X = D + V
    y = X @ model.beta + u
    return Z, D, V, u, X, y


def run_trial(model: IvModel, cfg: StudyConfig, rng: RngState) -> TrialRecord:
    """Generate one dataset and push it through the full pipeline."""
    Z, D, _, u, X, y = _draw(model, cfg, rng)
    data = Dataset(y=y, X=X, Z=Z)
    fit = fit_two_stage(
        data,
        rng.child(2),
        folds=cfg.folds,
        grid_size=cfg.grid_size,
        grid_ratio=cfg.grid_ratio,
    )
    Theta = build_precision(fit.gram, kappa=cfg.kappa)
    inf = build_inference(fit, Theta, X, y, alpha=cfg.alpha, se_mode=cfg.se_mode)
    hits = (inf.ci_lower <= model.beta) & (model.beta <= inf.ci_upper)
    diag = (
        remainder_decomposition(model, fit, Theta, u, D, X)
        if cfg.diagnostics
        else None
    )
    resid_worst = kkt_residual(
        fit.first.Dhat, y, fit.second.coefficients, fit.second.lam
    )
    for j, lfit in enumerate(fit.first.fits):
        rj = kkt_residual(Z, X[:, j], lfit.coefficients, lfit.lam)
        resid_worst = max(resid_worst, rj)
    slack = Theta.worst_slack()
    return TrialRecord(
        fit=fit,
        inference=inf,
        hits=hits,
        diagnostics=diag,
        kkt_worst=float(resid_worst),
        kkt_ok=bool(resid_worst <= DEFAULT_KKT_TOL),
        clime_worst_slack=float(slack),
        clime_ok=bool(slack <= FEAS_TOL),
    )


@dataclass
class StudyMetrics:
    """Aggregated study outcome plus the per-trial records behind it."""

    coverage: float
    avg_length: float
    mse: float
    trials: list
    n_failed: int
    failed_indices: list

    def __post_init__(self) -> None:
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError(f"coverage {self.coverage} outside [0, 1]")


def _pool_trial(args):
    """Worker: rebuilds the (deterministic) model, runs one trial."""
    cfg, t = args
    root = RngState(cfg.seed)
    model = build_model(cfg, root.child(0))
    try:
        return t, run_trial(model, cfg, root.child(1, t)), None
    except Exception as exc:  # noqa: BLE001 - failures aggregated by policy
        return t, None, f"{type(exc).__name__}: {exc}"


def run_study(cfg: StudyConfig, threads: int = 1) -> StudyMetrics:
    """Run all trials and aggregate coverage, interval length, and MSE.

    MSE is computed from the second-stage shrinkage coefficients, not the
    debiased ones. Aborts when more than 5% of trials fail.
    """
    root = RngState(cfg.seed)
    model = build_model(cfg, root.child(0))
    results: list[tuple[int, TrialRecord | None, str | None]] = []
    if threads <= 1:
        for t in range(cfg.n_trials):
            try:
                results.append((t, run_trial(model, cfg, root.child(1, t)), None))
            except Exception as exc:  # noqa: BLE001 - failures aggregated by policy
                results.append((t, None, f"{type(exc).__name__}: {exc}"))
    else:
        jobs = [(cfg, t) for t in range(cfg.n_trials)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_pool_trial, jobs))
    results.sort(key=lambda r: r[0])
    records = [r for _, r, err in results if err is None]
    failed = [(t, err) for t, _, err in results if err is not None]
    if len(failed) > 0.05 * cfg.n_trials:
        detail = "; ".join(f"trial {t}: {err}" for t, err in failed[:5])
        raise StudyError(
            f"{len(failed)} of {cfg.n_trials} trials failed: {detail}"
        )
    hits = np.vstack([r.hits for r in records])
    lengths = np.vstack([r.lengths for r in records])
    sqerr = np.vstack(
        [(r.fit.second.coefficients - model.beta) ** 2 for r in records]
    )
    return StudyMetrics(
        coverage=float(hits.mean()),
        avg_length=float(lengths.mean()),
        mse=float(sqerr.mean(axis=1).mean()),
        trials=records,
        n_failed=len(failed),
        failed_indices=[t for t, _ in failed],
    )


def endogeneity_comparison(
    model: IvModel, cfg: StudyConfig, rng: RngState
) -> tuple[float, float]:
    """Active-coordinate squared error: two-stage fit vs single-stage on X.

    The single-stage lasso regresses y directly on X and therefore absorbs
    the correlated noise; returns (two_stage_mse, naive_mse) averaged over
    the true support. Diagnostic only, no inference is run.
    """
    Z, _, _, _, X, y = _draw(model, cfg, rng)
    data = Dataset(y=y, X=X, Z=Z)
    fit = fit_two_stage(
        data,
        rng.child(2),
        folds=cfg.folds,
        grid_size=cfg.grid_size,
        grid_ratio=cfg.grid_ratio,
    )
    _, naive = cv_lasso(
        X,
        y,
        folds=cfg.folds,
        rng=rng.child(3),
        grid_size=cfg.grid_size,
        grid_ratio=cfg.grid_ratio,
    )
    S = model.S_beta
    truth = model.beta[S]
    two = float(np.mean((fit.second.coefficients[S] - truth) ** 2))
    one = float(np.mean((naive.coefficients[S] - truth) ** 2))
    return two, one
