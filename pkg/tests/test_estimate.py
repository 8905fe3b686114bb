import numpy as np
import pytest
from scipy.integrate import quad

from smallnoise.contrasts import ObservedPath
from smallnoise.errors import ConfigError
from smallnoise.estimate import (
    EstimationResult,
    EstimatorOptions,
    confidence_intervals,
    fine_grid,
    info_I_b,
    info_I_delta,
    info_I_sigma,
    info_J_delta,
    minimize,
)
from smallnoise.flow import SamplingGrid, d_matrices, solve_flow
from smallnoise.models import LinkSpec, ParamBox, make_model
from smallnoise.oracle import cir_i_b, cir_i_delta, cir_j_delta, cir_ratio_estimator, ou_i_b
from smallnoise.simulate import make_rng, simulate_sde

ALPHA_BOX = ParamBox.from_pairs([[0.1, 3.0]])


def _noise_free(model, alpha, x0, grid, eps=0.01):
    flow = solve_flow(model, alpha, None, x0, grid)
    return ObservedPath(grid, flow.x.copy(), eps)


# --- estimators --------------------------------------------------------------

def test_cir_noise_free_cls(cir):
    path = _noise_free(cir, [1.0], [1.0], SamplingGrid(1.0, 20))
    res = minimize("cls", cir, None, path, ALPHA_BOX, EstimatorOptions(compute_info=False))
    assert res.alpha_hat[0] == pytest.approx(1.0, abs=1e-6)
    assert res.optimizer["converged"]


def test_cir_cls_matches_closed_form(cir):
    g = SamplingGrid(1.0, 50)
    path = simulate_sde(cir, [1.0], [1.0], 0.05, [1.0], g, rng=make_rng(21))
    res = minimize("cls", cir, None, path, ALPHA_BOX, EstimatorOptions(compute_info=False))
    assert res.alpha_hat[0] == pytest.approx(cir_ratio_estimator(path.obs, g.delta), abs=1e-5)


def test_ou_known_alpha_loglik_beta(ou):
    alpha0, eps = 0.7, 0.1
    g = SamplingGrid(1.0, 20)
    path = simulate_sde(ou, [alpha0], [1.0], eps, [1.0], g, rng=make_rng(22))
    opts = EstimatorOptions(fix_alpha=np.array([alpha0]), compute_info=False)
    res = minimize("gaussian_loglik", ou, None, path, ParamBox.from_pairs([[0.1, 5.0]]), opts)
    X = path.obs[:, 0]
    closed = (2 * alpha0 / (g.n * eps ** 2 * np.expm1(2 * alpha0 * g.delta))
              * np.sum((X[1:] - np.exp(alpha0 * g.delta) * X[:-1]) ** 2))
    assert res.beta_hat[0] ** 2 == pytest.approx(closed, rel=1e-6)
    np.testing.assert_array_equal(res.alpha_hat, [alpha0])


@pytest.mark.parametrize("kind", ["cls", "weighted_link", "weighted_multiplicative", "small_delta", "gaussian_loglik"])
def test_noise_free_recovery(kind, cir, two_factor):
    g = SamplingGrid(1.0, 20)
    opts = EstimatorOptions(compute_info=False)
    # the Gaussian likelihood carries log det S_k(alpha), which moves its minimizer by O(eps^2)
    path = _noise_free(cir, [1.0], [1.0], g, eps=1e-3 if kind == "gaussian_loglik" else 0.01)
    link = LinkSpec.identity() if kind == "weighted_link" else None
    box = ALPHA_BOX
    if kind in ("small_delta", "gaussian_loglik"):
        box = ALPHA_BOX.concat(ParamBox.from_pairs([[0.2, 3.0]]))
    res = minimize(kind, cir, link, path, box, opts)
    assert res.alpha_hat[0] == pytest.approx(1.0, abs=1e-5)
    if kind == "cls":
        tf_path = _noise_free(two_factor, [1.0, 1.0, 1.0], [0.0, 1.5], g)
        tf = minimize("cls", two_factor, None, tf_path, ParamBox.from_pairs([[0, 2], [0.01, 5], [0, 2]]), opts)
        np.testing.assert_allclose(tf.alpha_hat, [1.0, 1.0, 1.0], atol=1e-5)


def test_loglik_noise_free_shift_is_order_eps_squared(cir):
    g = SamplingGrid(1.0, 20)
    box = ALPHA_BOX.concat(ParamBox.from_pairs([[0.2, 3.0]]))
    shifts = []
    for eps in (1e-2, 1e-3):
        res = minimize("gaussian_loglik", cir, None, _noise_free(cir, [1.0], [1.0], g, eps), box,
                       EstimatorOptions(compute_info=False))
        shifts.append(abs(res.alpha_hat[0] - 1.0))
    assert shifts[0] / shifts[1] == pytest.approx(100.0, rel=0.1)


def test_determinism(cir):
    g = SamplingGrid(1.0, 20)
    path = simulate_sde(cir, [1.0], [1.0], 0.05, [1.0], g, rng=make_rng(23))
    box = ALPHA_BOX.concat(ParamBox.from_pairs([[0.2, 3.0]]))
    a = minimize("small_delta", cir, None, path, box, EstimatorOptions(seed=5))
    b = minimize("small_delta", cir, None, path, box, EstimatorOptions(seed=5))
    assert a.to_dict() == b.to_dict()
    assert a.alpha_hat.tobytes() == b.alpha_hat.tobytes()


def test_input_checks(cir, two_factor):
    g = SamplingGrid(1.0, 10)
    path = _noise_free(cir, [1.0], [1.0], g)
    with pytest.raises(ConfigError):
        minimize("nope", cir, None, path, ALPHA_BOX)
    with pytest.raises(ConfigError):
        minimize("small_delta", cir, None, path, ALPHA_BOX)
    with pytest.raises(ConfigError):
        minimize("weighted_link", cir, LinkSpec.free(), path, ALPHA_BOX)
    with pytest.raises(ConfigError):
        minimize("cls", two_factor, None, path, ParamBox.from_pairs([[0, 2]] * 3))
    with pytest.raises(ConfigError):
        minimize("cls", cir, None, ObservedPath(g, path.obs, 0.0), ALPHA_BOX)


def test_cls_interval_uses_j_and_is_wider(cir):
    g = SamplingGrid(1.0, 20)
    path = simulate_sde(cir, [1.0], [1.0], 0.05, [1.0], g, rng=make_rng(24))
    beta_box = ParamBox.from_pairs([[0.2, 3.0]])
    cls = minimize("cls", cir, None, path, ALPHA_BOX, beta_box=beta_box)
    assert cls.info_kind == "J_delta"
    w = minimize("weighted_link", cir, LinkSpec.fixed([1.0]), path, ALPHA_BOX,
                 EstimatorOptions(compute_info=False))
    flow = solve_flow(cir, cls.alpha_hat, [1.0], [1.0], g)
    i_res = EstimationResult("weighted_link", cls.alpha_hat, None, 0.0, info_matrix=info_I_delta(flow))
    j_res = EstimationResult("cls", cls.alpha_hat, None, 0.0, info_matrix=info_J_delta(flow))
    (ilo, ihi), = confidence_intervals(i_res, path.epsilon, g)
    (jlo, jhi), = confidence_intervals(j_res, path.epsilon, g)
    assert jhi - jlo >= ihi - ilo
    assert w.alpha_hat[0] == pytest.approx(cls.alpha_hat[0], abs=0.1)
    lo, hi = cls.ci_95[0]
    assert lo < cls.alpha_hat[0] < hi


def test_interval_scaling():
    info = np.array([[2.0, 0.0], [0.0, 0.5]])
    res = EstimationResult("small_delta", np.array([1.0]), np.array([0.8]), 0.0, info_matrix=info)
    g, g4 = SamplingGrid(1.0, 25), SamplingGrid(1.0, 100)
    (alo, ahi), (blo, bhi) = confidence_intervals(res, 0.1, g)
    (alo10, ahi10), _ = confidence_intervals(res, 0.01, g)
    _, (blo4, bhi4) = confidence_intervals(res, 0.1, g4)
    assert (ahi - alo) / (ahi10 - alo10) == pytest.approx(10.0, rel=1e-12)
    assert (bhi - blo) / (bhi4 - blo4) == pytest.approx(2.0, rel=1e-12)
    assert ahi - 1.0 == pytest.approx(1.96 * 0.1 * np.sqrt(0.5), rel=1e-12)
    assert bhi - 0.8 == pytest.approx(1.96 * np.sqrt(2.0 / 25), rel=1e-12)
    singular = EstimationResult("cls", np.array([1.0]), None, 0.0, info_matrix=np.zeros((1, 1)))
    assert confidence_intervals(singular, 0.1, g) == [None]


def test_small_delta_result_fields(two_factor):
    g = SamplingGrid(1.0, 50)
    path = simulate_sde(two_factor, [1, 1, 1], [1, 1, 0.3], 0.01, [0, 1.5], g, rng=make_rng(25))
    box = ParamBox.from_pairs([[0, 2], [0.01, 5], [0, 2], [0.05, 3], [0.05, 3], [-0.95, 0.95]])
    res = minimize("small_delta", two_factor, None, path, box, EstimatorOptions(substeps=8, max_starts=1))
    assert res.param_names == ("mu1", "mu2", "m", "kappa1_sq", "kappa2_sq", "rho")
    assert box.contains(res.estimates)
    assert res.info_kind == "I_b+I_sigma"
    np.testing.assert_allclose(res.info_matrix, res.info_matrix.T, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(res.cov_matrix) >= -1e-15)
    assert all(ci is not None for ci in res.ci_95)
    np.testing.assert_allclose(res.alpha_hat, [1, 1, 1], atol=0.1)


# --- information matrices ----------------------------------------------------

def test_cir_i_b(cir):
    fine = fine_grid(1.0)
    ib = info_I_b(cir, [1.0], [1.0], [1.0], fine)[0, 0]
    assert ib == pytest.approx(np.e - 1, abs=1e-6)
    assert ib == pytest.approx(1.718282, abs=1e-6)
    assert info_I_b(cir, [1.0], [2.0], [1.0], fine)[0, 0] == pytest.approx(ib / 4, rel=1e-12)


def test_ou_i_b_against_quadrature(ou):
    alpha, beta, x0, T = 0.7, 1.3, 1.5, 2.0
    ib = info_I_b(ou, [alpha], [beta], [x0], fine_grid(T))[0, 0]
    # integrand (db/dalpha)^2 / Sigma along the flow, with db/dalpha = x(t) = x0 e^{alpha t}
    oracle, _ = quad(lambda t: (x0 * np.exp(alpha * t)) ** 2 / beta ** 2, 0.0, T, epsabs=0, epsrel=1e-13)
    assert ib == pytest.approx(oracle, rel=1e-6)
    assert ib == pytest.approx(ou_i_b(alpha, beta, x0, T), rel=1e-6)


def test_cir_i_delta_factor(cir):
    g = SamplingGrid(1.0, 10)
    flow = solve_flow(cir, [1.0], [1.0], [1.0], g)
    a = np.exp(0.1)
    factor = (0.1 / (a - 1)) ** 2 * a
    assert factor == pytest.approx(0.999168, abs=1e-6)
    assert info_I_delta(flow)[0, 0] == pytest.approx((np.e - 1) * factor, rel=1e-6)


def test_i_delta_limit_monotone(cir):
    ib = cir_i_b(1.0, 1.0, 1.0, 1.0)
    ratios = []
    for n in (5, 10, 20, 100):
        flow = solve_flow(cir, [1.0], [1.0], [1.0], SamplingGrid(1.0, n))
        val = info_I_delta(flow)[0, 0]
        assert val == pytest.approx(cir_i_delta(1.0, 1.0, 1.0, 1.0, 1.0 / n), rel=1e-6)
        ratios.append(val / ib)
    assert all(abs(1 - r2) < abs(1 - r1) for r1, r2 in zip(ratios, ratios[1:]))
    assert ratios[-1] == pytest.approx(1.0, abs=1e-4)


def test_i_delta_zero_without_drift():
    model = make_model("still", 1, 1, 1, lambda alpha, x: np.zeros(1), big_sigma=lambda beta, x: np.array([[beta[0] ** 2]]))
    flow = solve_flow(model, [0.5], [1.0], [1.0], SamplingGrid(1.0, 10))
    np.testing.assert_allclose(info_I_delta(flow), 0.0, atol=1e-14)


@pytest.mark.parametrize("n", [2, 5, 10, 50])
def test_cir_j_delta(cir, n):
    flow = solve_flow(cir, [1.0], [1.0], [1.0], SamplingGrid(1.0, n))
    j = info_J_delta(flow)[0, 0]
    assert j == pytest.approx(cir_j_delta(1.0, 1.0, 1.0, 1.0, 1.0 / n), rel=1e-6)
    assert j <= info_I_delta(flow)[0, 0]


def test_j_equals_i_for_constant_s(ou):
    g = SamplingGrid(1.0, 10)
    flow = solve_flow(ou, [0.7], [1.3], [1.0], g)
    s = flow.s_mats[0, 0, 0]
    D = d_matrices(flow, g)[:, 0, 0]
    brute = g.delta * np.sum(D ** 2) / s
    assert info_J_delta(flow)[0, 0] == pytest.approx(brute, rel=1e-12)
    assert info_I_delta(flow)[0, 0] == pytest.approx(brute, rel=1e-12)


def test_i_sigma_ou(ou):
    assert info_I_sigma(ou, [0.7], [1.0], [1.0], fine_grid(1.0))[0, 0] == pytest.approx(2.0, rel=1e-12)
    assert info_I_sigma(ou, [0.7], [2.0], [1.0], fine_grid(1.0))[0, 0] == pytest.approx(0.5, rel=1e-12)


def test_i_sigma_multiplicative(cir):
    # Sigma = f(beta) x with f = beta^2: (p/2)(f'/f)^2 = 2/beta^2 whatever the path
    for beta in (0.5, 1.0, 1.7):
        val = info_I_sigma(cir, [1.0], [beta], [1.0], fine_grid(2.0))[0, 0]
        assert val == pytest.approx(0.5 * (2 / beta) ** 2, rel=1e-9)


def test_i_sigma_zero_row():
    def big_sigma(beta, x):
        return np.diag([beta[0] ** 2 * (1 + x[0] ** 2), 1.0 + x[1] ** 2])

    model = make_model("half", 2, 1, 2, lambda alpha, x: alpha[0] * x, big_sigma=big_sigma)
    info = info_I_sigma(model, [0.5], [1.2, 0.7], [1.0, 0.5], fine_grid(1.0))
    np.testing.assert_allclose(info[1], 0.0, atol=1e-12)
    np.testing.assert_allclose(info[:, 1], 0.0, atol=1e-12)
    assert info[0, 0] == pytest.approx(0.5 * (2 / 1.2) ** 2, rel=1e-6)


def test_two_factor_information_symmetric_and_oracle(two_factor):
    alpha, beta, x0 = np.array([1.0, 1.0, 1.0]), np.array([1.0, 1.0, 0.3]), np.array([0.0, 1.5])
    fine = fine_grid(1.0)
    ib = info_I_b(two_factor, alpha, beta, x0, fine)
    isig = info_I_sigma(two_factor, alpha, beta, x0, fine)
    flow = solve_flow(two_factor, alpha, beta, x0, SamplingGrid(1.0, 20))
    for mat in (ib, isig, info_I_delta(flow), info_J_delta(flow)):
        np.testing.assert_allclose(mat, mat.T, atol=1e-12, rtol=0)

    # independent oracle: trapezoid rule on a much finer flow, with hand-coded integrands
    fine_flow = solve_flow(two_factor, alpha, None, x0, SamplingGrid(1.0, 20_000), substeps=1, sensitivities=False)
    xs, t = fine_flow.x, np.linspace(0.0, 1.0, 20_001)
    ib_vals = np.empty((len(xs), 3, 3))
    is_vals = np.empty((len(xs), 3, 3))
    k1s, k2s, rho = beta
    c = np.sqrt(k1s * k2s)
    for k, (_, r) in enumerate(xs):
        sr = np.sqrt(r)
        S = np.array([[k1s, rho * c * sr], [rho * c * sr, k2s * r]])
        G = np.array([[1.0, 0.0, 0.0], [0.0, alpha[2] - r, alpha[1]]])
        Si = np.linalg.inv(S)
        ib_vals[k] = G.T @ Si @ G
        dS = np.array([
            [[1.0, 0.5 * rho * np.sqrt(k2s / k1s) * sr], [0.5 * rho * np.sqrt(k2s / k1s) * sr, 0.0]],
            [[0.0, 0.5 * rho * np.sqrt(k1s / k2s) * sr], [0.5 * rho * np.sqrt(k1s / k2s) * sr, r]],
            [[0.0, c * sr], [c * sr, 0.0]],
        ])
        A = [d @ Si for d in dS]
        is_vals[k] = [[np.trace(A[i] @ A[j]) for j in range(3)] for i in range(3)]
    ib_oracle = np.sum((ib_vals[1:] + ib_vals[:-1]) / 2 * np.diff(t)[:, None, None], axis=0)
    is_oracle = np.sum((is_vals[1:] + is_vals[:-1]) / 2 * np.diff(t)[:, None, None], axis=0) / 2.0
    np.testing.assert_allclose(ib, ib_oracle, rtol=1e-5)
    np.testing.assert_allclose(isig, is_oracle, rtol=1e-5, atol=1e-12)
