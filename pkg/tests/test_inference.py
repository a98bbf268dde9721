import math

import numpy as np
import pytest

from hdiv.inference import (
    InferenceResult,
    InvalidAlpha,
    NonpositiveDiagonal,
    SingularPopulationGram,
    build_inference,
    confidence_interval,
    one_step_update,
    remainder_decomposition,
    se_homoscedastic,
    se_robust,
    sigma_u_hat,
    z_quantile,
)
from hdiv.lasso import LassoFit
from hdiv.matcore import DimensionMismatch, RngState, SpdMatrix
from hdiv.simstudy import IvModel, StudyConfig, _draw, build_model, run_trial
from hdiv.twostage import Dataset, FirstStageFit, TwoStageFit, fit_two_stage, gram


def small_model(seed=20260816):
    cfg = StudyConfig(n=40, p_x=8, p_z=12, s_b=2, s_a=3, sigma_structure="CS",
                      n_trials=1, seed=seed)
    root = RngState(seed)
    return cfg, build_model(cfg, root.child(0)), root


def lasso_stub(coefficients):
    return LassoFit(coefficients=np.asarray(coefficients, dtype=float), lam=0.0,
                    iterations=0, converged=True, objective=0.0)


def truth_fit(model, D):
    """TwoStageFit with every estimated object forced to the truth."""
    first = FirstStageFit(Ahat=model.A.copy(), Dhat=D.copy(), fits=[], reports=[])
    return TwoStageFit(first=first, second=lasso_stub(model.beta), gram=gram(D))


# ---------------------------------------------------------------- quantiles

def test_z_quantile_values():
    assert z_quantile(0.05) == pytest.approx(1.959964, abs=1e-5)
    assert z_quantile(0.3173) == pytest.approx(1.0, abs=1e-3)
    assert z_quantile(0.01) > z_quantile(0.05) > z_quantile(0.10)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.7])
def test_invalid_alpha_rejected(alpha):
    with pytest.raises(InvalidAlpha):
        z_quantile(alpha)
    with pytest.raises(InvalidAlpha):
        confidence_interval(0.0, 1.0, alpha, 10)


# ---------------------------------------------------------------- one step

def test_one_step_zero_precision_is_identity(rng):
    X = rng.standard_normal((20, 3))
    y = rng.standard_normal(20)
    beta_hat = rng.standard_normal(3)
    out = one_step_update(beta_hat, np.zeros((3, 3)), X, X, y)
    np.testing.assert_array_equal(out, beta_hat)


def test_one_step_zero_start_plug_in(rng):
    X = rng.standard_normal((25, 3))
    Dhat = rng.standard_normal((25, 3))
    y = rng.standard_normal(25)
    Th = rng.standard_normal((3, 3))
    out = one_step_update(np.zeros(3), Th, Dhat, X, y)
    np.testing.assert_allclose(out, Th @ (Dhat.T @ y) / 25, atol=1e-12)


def test_one_step_exogenous_equals_ols():
    # with Dhat = X and Theta the exact inverse gram, the update lands on the
    # least squares solution no matter where it starts
    for seed in range(10):
        gen = np.random.default_rng(seed)
        n, p = 40, 4
        X = gen.standard_normal((n, p))
        y = gen.standard_normal(n)
        Theta = np.linalg.inv(X.T @ X / n)
        ols = np.linalg.lstsq(X, y, rcond=None)[0]
        start = gen.standard_normal(p)
        out = one_step_update(start, Theta, X, X, y)
        assert np.abs(out - ols).max() <= 1e-6


def test_one_step_dimension_checks(rng):
    X = rng.standard_normal((10, 3))
    y = rng.standard_normal(10)
    with pytest.raises(DimensionMismatch):
        one_step_update(np.zeros(2), np.zeros((3, 3)), X, X, y)
    with pytest.raises(DimensionMismatch):
        one_step_update(np.zeros(3), np.zeros((3, 3)), X[:5], X, y)


# ---------------------------------------------------------------- sigma_u

def test_sigma_u_exact_fit_is_zero(rng):
    X = rng.standard_normal((15, 2))
    b = np.array([1.0, -2.0])
    assert sigma_u_hat(X @ b, X, b) == 0.0


def test_sigma_u_zero_coefficients(rng):
    y = rng.standard_normal(30)
    X = rng.standard_normal((30, 2))
    want = float(np.linalg.norm(y)) / math.sqrt(30)
    assert sigma_u_hat(y, X, np.zeros(2)) == pytest.approx(want, abs=1e-12)


def test_sigma_u_estimates_noise_level():
    gen = np.random.default_rng(500)
    n = 500
    X = gen.standard_normal((n, 3))
    beta = np.array([1.0, 0.0, 1.0])
    u = math.sqrt(0.7) * gen.standard_normal(n)
    sig = sigma_u_hat(X @ beta + u, X, beta)
    assert 0.75 <= sig <= 0.93


# ---------------------------------------------------------------- std errors

def test_se_homoscedastic_values():
    assert se_homoscedastic(1.0, np.eye(2), 0) == 1.0
    assert se_homoscedastic(2.0, np.diag([0.25, 1.0]), 0) == pytest.approx(1.0)
    with pytest.raises(NonpositiveDiagonal):
        se_homoscedastic(1.0, np.diag([0.0, 1.0]), 0)


def test_se_robust_zero_residuals(rng):
    X = rng.standard_normal((10, 2))
    b = np.array([0.5, 0.5])
    Th = np.eye(2)
    assert se_robust(X @ b, X, b, Th, X, 0) == 0.0


def test_se_robust_constant_factors():
    n, p = 12, 2
    c, g = 0.7, -1.3
    X = np.zeros((n, p))
    y = c * np.ones(n)  # residuals constant c with beta_hat = 0
    d = np.array([g, 0.0])
    Dhat = np.tile(d, (n, 1))  # inner product with theta row constant g
    Th = np.eye(p)
    assert se_robust(y, X, np.zeros(p), Th, Dhat, 0) == pytest.approx(c * abs(g), abs=1e-12)


def test_se_robust_matches_double_loop(rng):
    n, p = 17, 3
    X = rng.standard_normal((n, p))
    Dhat = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    beta_hat = rng.standard_normal(p)
    Th = rng.standard_normal((p, p))
    for j in range(p):
        acc = 0.0
        for i in range(n):
            resid = y[i] - float(X[i] @ beta_hat)
            inner = float(Th[j] @ Dhat[i])
            acc += (resid ** 2) * (inner ** 2)
        want = math.sqrt(acc / n)
        assert se_robust(y, X, beta_hat, Th, Dhat, j) == pytest.approx(want, abs=1e-12)


def test_se_robust_constant_magnitude_quadratic_form(rng):
    # with |residual_i| = c for all i, se^2 = c^2 theta' Sigma theta exactly
    n, p = 20, 3
    X = rng.standard_normal((n, p))
    Dhat = rng.standard_normal((n, p))
    beta_hat = rng.standard_normal(p)
    c = 0.9
    signs = rng.choice([-1.0, 1.0], n)
    y = X @ beta_hat + c * signs
    Th = rng.standard_normal((p, p))
    S = Dhat.T @ Dhat / n
    for j in range(p):
        got = se_robust(y, X, beta_hat, Th, Dhat, j) ** 2
        want = c * c * float(Th[j] @ S @ Th[j])
        assert got == pytest.approx(want, abs=1e-10)


# ---------------------------------------------------------------- intervals

def test_confidence_interval_width_and_nesting():
    lo, hi = confidence_interval(1.0, 0.5, 0.05, 25)
    half = z_quantile(0.05) * 0.5 / 5.0
    assert (lo, hi) == pytest.approx((1.0 - half, 1.0 + half), abs=1e-12)
    lo01, hi01 = confidence_interval(1.0, 0.5, 0.01, 25)
    lo10, hi10 = confidence_interval(1.0, 0.5, 0.10, 25)
    assert lo01 < lo10 and hi10 < hi01  # strict nesting


def test_confidence_interval_degenerate_se():
    assert confidence_interval(2.0, 0.0, 0.05, 10) == (2.0, 2.0)


def test_inference_result_validation():
    with pytest.raises(DimensionMismatch):
        InferenceResult(beta_db=np.zeros(3), se=np.zeros(2), ci_lower=np.zeros(3),
                        ci_upper=np.zeros(3), alpha=0.05, se_mode="robust")


# ---------------------------------------------------------------- assembled

def fitted_small_instance(seed=20260816):
    cfg, model, root = small_model(seed)
    Z, D, V, u, X, y = _draw(model, cfg, root.child(1, 0))
    fit = fit_two_stage(Dataset(y=y, X=X, Z=Z), root.child(1, 0, 2))
    return model, fit, u, D, X, y


def test_build_inference_consistency():
    from hdiv.clime import build_precision

    model, fit, u, D, X, y = fitted_small_instance()
    Theta = build_precision(fit.gram, kappa=1.2)
    n = y.shape[0]
    for mode in ("robust", "homoscedastic"):
        res = build_inference(fit, Theta, X, y, alpha=0.05, se_mode=mode)
        assert res.se_mode == mode
        assert np.all(res.ci_lower <= res.beta_db) and np.all(res.beta_db <= res.ci_upper)
        width = res.ci_upper - res.ci_lower
        np.testing.assert_allclose(width, 2 * z_quantile(0.05) * res.se, atol=1e-12)
        np.testing.assert_allclose(
            res.beta_db,
            one_step_update(fit.second.coefficients, Theta, fit.first.Dhat, X, y),
            atol=1e-14,
        )
    robust = build_inference(fit, Theta, X, y, se_mode="robust")
    homo = build_inference(fit, Theta, X, y, se_mode="homoscedastic")
    sig = sigma_u_hat(y, X, fit.second.coefficients)
    for j in range(model.beta.shape[0]):
        want = se_robust(y, X, fit.second.coefficients, Theta, fit.first.Dhat, j)
        assert robust.se[j] == pytest.approx(want / math.sqrt(n), abs=1e-12)
        assert homo.se[j] == pytest.approx(
            se_homoscedastic(sig, Theta, j) / math.sqrt(n), abs=1e-12
        )
    with pytest.raises(ValueError):
        build_inference(fit, Theta, X, y, se_mode="sandwich")


# ---------------------------------------------------------------- remainders

def test_remainders_vanish_at_truth():
    cfg, model, root = small_model()
    Z, D, V, u, X, y = _draw(model, cfg, root.child(1, 0))
    fit = truth_fit(model, D)
    Theta = np.asarray(model.population_precision)
    diag = remainder_decomposition(model, fit, Theta, u, D, X)
    for term in (diag.rem1, diag.rem2, diag.rem3, diag.rem4):
        assert np.abs(term).max() <= 1e-9
    n = X.shape[0]
    want_main = Theta @ (D.T @ u) / math.sqrt(n)
    np.testing.assert_allclose(diag.main_term, want_main, atol=1e-12)
    assert diag.reconstruction_gap <= 1e-8


def test_remainders_partial_truth_cancellation():
    # true precision and first stage, off beta: rem1 and rem2 vanish exactly
    cfg, model, root = small_model()
    Z, D, V, u, X, y = _draw(model, cfg, root.child(1, 0))
    first = FirstStageFit(Ahat=model.A.copy(), Dhat=D.copy(), fits=[], reports=[])
    off_beta = model.beta + 0.3
    fit = TwoStageFit(first=first, second=lasso_stub(off_beta), gram=gram(D))
    Theta = np.asarray(model.population_precision)
    diag = remainder_decomposition(model, fit, Theta, u, D, X)
    assert np.abs(diag.rem1).max() <= 1e-12
    assert np.abs(diag.rem2).max() <= 1e-12
    assert diag.reconstruction_gap <= 1e-8


def test_remainder_identity_on_fitted_pipeline():
    from hdiv.clime import build_precision

    model, fit, u, D, X, y = fitted_small_instance()
    Theta = build_precision(fit.gram, kappa=1.2)
    diag = remainder_decomposition(model, fit, Theta, u, D, X)
    assert diag.reconstruction_gap <= 1e-8
    assert np.all(np.isfinite(diag.main_term))


def test_singular_population_gram_raises():
    A = np.zeros((4, 3))
    A[0, 0] = 1.0
    A[0, 1] = 1.0  # duplicate columns make the projected gram singular
    A[1, 2] = 1.0
    model = IvModel(
        A=A,
        beta=np.array([1.0, 0.0, 0.0]),
        S_beta=np.array([0]),
        S_a=[np.array([0]), np.array([0]), np.array([1])],
        Sigma_z=SpdMatrix(np.eye(4)),
        Sigma_uv=SpdMatrix(np.eye(4)),
    )
    with pytest.raises(SingularPopulationGram):
        model.population_precision
