import dataclasses

import numpy as np
import pytest
import scipy.optimize
import scipy.stats

from riskpremia._linalg import gen_eigvals, vec
from riskpremia.moments import (
    MomentSystem,
    _decompose,
    build_moment_system,
    far,
    jklm,
    klm,
    moment_vector,
    orthogonalized_jacobian,
    robust_tests,
    vff_estimator,
    vqf_estimator,
)
from riskpremia.panels import FactorPanel, ReturnPanel
from riskpremia.pipeline import fit_model
from riskpremia.subset import build_stacked, far_trace
from riskpremia.varstage import fit_var1

from test_subset import fitted_system, synthetic_system
from test_threestep import default_params, make_dataset


# -- moment vector ----------------------------------------------------------------


def test_moment_vector_matches_double_loop_oracle():
    sys, lam1 = fitted_system(k=2, n=3, t=8, seed=40)
    lam0 = lam1 + 0.1
    f = moment_vector(sys, lam0)
    k, n, t = 2, 3, 8
    oracle = np.zeros(n * k)
    u = sys.rbar - sys.beta_hat @ sys.vhat
    for s in range(t):
        oracle += np.kron(sys.xbar_lagged[:, s], u[:, s]) / t
    oracle -= np.kron(sys.q_xx, sys.beta_hat) @ lam0.reshape(-1, order="F")
    assert np.allclose(f, oracle, rtol=1e-12)


def test_moment_vector_zero_on_noiseless_fit():
    rng = np.random.default_rng(41)
    beta, lam0, lam1, mu, phi, sigma_v = default_params(k=2, n=5)
    _, factors = make_dataset(rng, beta, lam0, lam1, mu, phi, sigma_v, 0.0, 60)
    var = fit_var1(factors)
    r = beta @ (lam1 @ factors.factors[:, :-1] + var.residuals)
    returns = ReturnPanel(tuple(range(5)), r, tuple(f"t{i}" for i in range(60)))
    sys = build_stacked(returns, factors, var)
    f = moment_vector(sys, lam1)
    assert np.abs(f).max() < 1e-12 * max(1.0, np.abs(sys.rbar).max())


def test_moment_vector_regression_identity():
    sys, lam1 = fitted_system(k=2, n=5, t=90, seed=42)
    f = moment_vector(sys, lam1)
    ident = np.kron(sys.q_xx, np.eye(5)) @ vec(sys.d_hat - sys.beta_hat @ lam1)
    assert np.allclose(f, ident, rtol=1e-10, atol=1e-14)


def test_moment_vector_least_squares_geometry():
    sys, _ = fitted_system(k=2, n=4, t=70, seed=43)
    u = sys.rbar - sys.beta_hat @ sys.vhat
    raw = vec(u @ sys.xbar_lagged.T / sys.n_periods)
    design = np.kron(sys.q_xx, sys.beta_hat)
    lam_ols = np.linalg.pinv(design) @ raw
    f = moment_vector(sys, lam_ols.reshape(2, 2, order="F"))
    assert np.abs(design.T @ f).max() < 1e-10 * np.abs(raw).max()


# -- variance estimators ------------------------------------------------------------


def test_vff_kps_identity_case():
    rng = np.random.default_rng(44)
    sys = synthetic_system(rng, k=2, n=3)
    sys = dataclasses.replace(sys, psi_hat=np.eye(4), sigma_hat=np.eye(3), q_xx=np.eye(2))
    v = vff_estimator(sys, np.zeros((2, 2)), mode="kps")
    assert np.allclose(v, np.eye(6))


def test_vff_hc0_matches_explicit_loop():
    sys, lam1 = fitted_system(k=1, n=2, t=25, seed=45)
    v = vff_estimator(sys, lam1, mode="hc0")
    k, t = 1, 25
    sig_v = sys.w_hat[k:, k:]
    oracle = np.zeros((2, 2))
    for s in range(t):
        m_t = np.kron(
            sys.xbar_lagged[:, s],
            sys.residuals[:, s] + sys.beta_hat @ sys.vhat[:, s],
        ) - np.kron(
            sys.q_xx @ lam1.T @ np.linalg.solve(sig_v, sys.vhat[:, s]),
            sys.residuals[:, s],
        )
        oracle += np.outer(m_t, m_t) / t
    assert np.allclose(v, oracle, rtol=1e-10)


def test_vff_modes_agree_on_near_kps_dgp():
    # low signal-to-noise keeps the population score covariance near Kronecker
    rng = np.random.default_rng(46)
    beta = 0.05 * rng.uniform(0.5, 1.5, (4, 1))
    lam1 = np.array([[0.3]])
    returns, factors = make_dataset(
        rng, beta, np.array([0.1]), lam1, np.array([0.05]), np.array([[0.4]]),
        np.array([[1.0]]), 1.0, 10_000,
    )
    var = fit_var1(factors)
    sys = build_stacked(returns, factors, var)
    v_kps = vff_estimator(sys, lam1, mode="kps")
    v_hc0 = vff_estimator(sys, lam1, mode="hc0")
    rel = np.linalg.norm(v_kps - v_hc0) / np.linalg.norm(v_hc0)
    assert rel < 0.10


def test_vqf_kps_close_to_hc0_reference_on_near_kps_dgp():
    rng = np.random.default_rng(47)
    beta = 0.05 * rng.uniform(0.5, 1.5, (3, 1))
    lam1 = np.array([[0.2]])
    returns, factors = make_dataset(
        rng, beta, np.array([0.0]), lam1, np.array([0.0]), np.array([[0.5]]),
        np.array([[1.0]]), 1.0, 10_000,
    )
    var = fit_var1(factors)
    sys = build_stacked(returns, factors, var)
    v_kps = vqf_estimator(sys, lam1, mode="kps")
    v_hc0 = vqf_estimator(sys, lam1, mode="hc0")
    denom = np.linalg.norm(v_hc0)
    assert np.linalg.norm(v_kps - v_hc0) / denom < 0.15
    from riskpremia.moments import vqf_discrepancy

    assert vqf_discrepancy(sys, lam1) == pytest.approx(
        np.linalg.norm(v_kps - v_hc0) / denom
    )


# -- orthogonalized Jacobian ---------------------------------------------------------


def test_jacobian_reduces_to_q_when_decoupled():
    sys, lam1 = fitted_system(k=2, n=4, t=60, seed=48)
    vff = vff_estimator(sys, lam1, "kps")
    q = -np.kron(sys.q_xx, sys.beta_hat)
    d = orthogonalized_jacobian(sys, lam1, vff, np.zeros((4 * 2 * 4, 4 * 2)))
    assert np.allclose(d, q)


def test_jacobian_matches_dense_oracle():
    sys, lam1 = fitted_system(k=2, n=4, t=60, seed=49)
    ms = build_moment_system(sys, lam1, "hc0")
    oracle = vec(ms.q) - ms.vqf @ np.linalg.inv(ms.vff) @ ms.f
    assert np.allclose(vec(ms.d_ortho), oracle, rtol=1e-8)


# -- statistics ----------------------------------------------------------------------


def test_far_zero_when_moment_vanishes():
    rng = np.random.default_rng(50)
    beta, lam0, lam1, mu, phi, sigma_v = default_params(k=2, n=5)
    _, factors = make_dataset(rng, beta, lam0, lam1, mu, phi, sigma_v, 0.0, 60)
    var = fit_var1(factors)
    r = beta @ (lam1 @ factors.factors[:, :-1] + var.residuals)
    returns = ReturnPanel(tuple(range(5)), r, tuple(f"t{i}" for i in range(60)))
    sys = build_stacked(returns, factors, var)
    res = far(sys, lam1, mode="kps")
    assert res.statistic == pytest.approx(0.0, abs=1e-9)
    assert res.pvalue == pytest.approx(1.0)
    assert res.dof == 10
    assert jklm(sys, lam1, mode="kps").statistic == pytest.approx(0.0, abs=1e-9)


def test_far_equals_klm_plus_jklm():
    for seed in range(51, 56):
        sys, lam1 = fitted_system(k=2, n=5, t=80, seed=seed)
        h0 = lam1 + 0.05 * np.random.default_rng(seed).standard_normal((2, 2))
        for mode in ("kps", "hc0"):
            out = robust_tests(sys, h0, mode=mode)
            total = out["klm"].statistic + out["jklm"].statistic
            assert total == pytest.approx(out["far"].statistic, rel=1e-8)
            assert out["far"].dof == 10
            assert out["klm"].dof == 4
            assert out["jklm"].dof == 6


def test_far_scalar_quadratic_oracle():
    sys, lam1 = fitted_system(k=1, n=2, t=40, seed=57)
    res = far(sys, lam1, mode="hc0")
    f = moment_vector(sys, lam1)
    v = vff_estimator(sys, lam1, "hc0")
    oracle = sys.n_periods * f @ np.linalg.solve(v, f)
    assert res.statistic == pytest.approx(oracle, rel=1e-10)


def test_klm_matches_projector_oracle():
    sys, lam1 = fitted_system(k=2, n=5, t=80, seed=58)
    ms = build_moment_system(sys, lam1, "kps")
    low = np.linalg.cholesky(ms.vff)
    fw = np.linalg.solve(low, ms.f)
    dw = np.linalg.solve(low, ms.d_ortho)
    p = dw @ np.linalg.pinv(dw)
    oracle = ms.n_periods * fw @ p @ fw
    assert klm(sys, lam1, mode="kps").statistic == pytest.approx(oracle, rel=1e-8)


def synthetic_moment_system(f, d, vff, t=100):
    nk, kk = d.shape
    return MomentSystem(
        f=f, q=d, vff=vff, vqf=np.zeros((nk * kk, nk)), d_ortho=d,
        h0=np.zeros((int(np.sqrt(kk)),) * 2), mode="kps", n_periods=t,
        n_assets=nk // int(np.sqrt(kk)), n_factors=int(np.sqrt(kk)),
    )


def test_klm_projection_identities():
    rng = np.random.default_rng(59)
    nk, kk = 8, 4
    d = rng.standard_normal((nk, kk))
    alpha = rng.standard_normal(kk)
    ms = synthetic_moment_system(d @ alpha, d, np.eye(nk))
    far_stat, klm_stat = _decompose(ms)
    assert klm_stat == pytest.approx(far_stat, rel=1e-10)

    # orthogonal moment: KLM = 0
    z = rng.standard_normal(nk)
    z -= d @ np.linalg.pinv(d) @ z
    ms0 = synthetic_moment_system(z, d, np.eye(nk))
    far0, klm0 = _decompose(ms0)
    assert klm0 == pytest.approx(0.0, abs=1e-10 * far0)


def test_statistics_invariant_under_joint_rotation():
    rng = np.random.default_rng(60)
    nk, kk = 10, 4
    d = rng.standard_normal((nk, kk))
    f = rng.standard_normal(nk)
    rot = np.linalg.qr(rng.standard_normal((nk, nk)))[0]
    base = _decompose(synthetic_moment_system(f, d, np.eye(nk)))
    rotated = _decompose(synthetic_moment_system(rot @ f, rot @ d, np.eye(nk)))
    assert rotated[0] == pytest.approx(base[0], rel=1e-8)
    assert rotated[1] == pytest.approx(base[1], rel=1e-8)


def test_far_minimum_over_lambda_equals_pencil_value():
    # the Kronecker-weighted FAR attains its global minimum at the eigenvalue
    # bound of the full pencil (not exactly at the OLS-implied Lambda1)
    sys, _ = fitted_system(k=2, n=5, t=100, seed=30)
    hm = sys.phi_hat.T @ np.linalg.inv(sys.sigma_hat) @ sys.phi_hat
    pencil = sys.n_periods * gen_eigvals(hm, sys.psi_hat)[:2].sum()
    beta, d = sys.beta_hat, sys.d_hat
    ols = np.linalg.solve(beta.T @ beta, beta.T @ d)
    res = scipy.optimize.minimize(
        lambda x: far_trace(sys, x.reshape(2, 2)), ols.ravel(), method="Nelder-Mead",
        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000},
    )
    assert res.fun == pytest.approx(pencil, rel=1e-8)
    assert far_trace(sys, ols) >= pencil - 1e-10


def test_far_kps_equals_trace_form():
    sys, lam1 = fitted_system(k=2, n=5, t=90, seed=61)
    h0 = lam1 + 0.1
    assert far(sys, h0, mode="kps").statistic == pytest.approx(far_trace(sys, h0), rel=1e-9)


def test_far_null_distribution_ks_strong_dgp():
    # strong but moderate signal keeps the score covariance near Kronecker;
    # FAR should track chi^2(KN) under the null
    beta0 = np.array([[0.25], [0.32], [-0.28], [0.35]])
    lam1 = np.array([[0.3]])
    stats = []
    for rep in range(1500):
        rng = np.random.default_rng(10_000 + rep)
        returns, factors = make_dataset(
            rng, beta0, np.array([0.1]), lam1, np.array([0.05]),
            np.array([[0.4]]), np.array([[1.0]]), 1.0, 250,
        )
        fit = fit_model(returns, factors)
        stats.append(far(fit, lam1).statistic)
    ks = scipy.stats.kstest(stats, scipy.stats.chi2(4).cdf)
    assert ks.pvalue > 0.01


def test_jklm_accepts_distant_values_weak_dgp():
    # JKLM mostly measures misspecification, so distant premia stay accepted
    beta0 = 0.02 * np.array([[0.5], [0.8], [-0.6], [0.9]])
    lam1 = np.array([[0.3]])
    accept = 0
    reps = 120
    for rep in range(reps):
        rng = np.random.default_rng(20_000 + rep)
        returns, factors = make_dataset(
            rng, beta0, np.array([0.0]), lam1, np.array([0.0]),
            np.array([[0.5]]), np.array([[1.0]]), 1.0, 250,
        )
        fit = fit_model(returns, factors)
        res = jklm(fit, np.array([[25.0]]))
        accept += res.pvalue >= 0.05
    assert accept / reps > 0.05
