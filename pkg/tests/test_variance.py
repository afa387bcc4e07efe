import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_dataset
from sqri.gmm import FIVE, MomentSystem
from sqri.imputation import FractionalImputation, augmented_moment, sqri_impute
from sqri.methods import sqri_point
from sqri.quantile_fit import FitConfig
from sqri.variance import (KernelConfig, SQRIVarianceContext, VarianceEstimate, gamma_hat,
                           kernel_conditional_density, normal_ci, percentile_ci,
                           sandwich_unweighted, sandwich_weighted, silverman_bandwidth,
                           silverman_config, v_g_hat, xi_hat)

CFG = FitConfig()
EMPTY = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)))


@pytest.fixture(scope="module")
def fitted(linear_obs):
    est, imp = sqri_point(linear_obs, 10, 17, CFG)
    ctx = SQRIVarianceContext(linear_obs, imp, CFG)
    return linear_obs, imp, est.theta_hat, ctx


def test_kernel_density_single_point():
    cfg = KernelConfig(0.3, (0.2,))
    f = kernel_conditional_density(0.4, 1.0, [0.7], [1.0], cfg)
    assert f == pytest.approx(1.0 / (0.3 * np.sqrt(2 * np.pi)), rel=1e-14)
    assert kernel_conditional_density(0.4, 1.0 + 20 * 0.3, [0.7], [1.0], cfg) < 1e-8


def _normal_sample(seed, n=2000):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, n)
    return x, x + 0.1 * rng.standard_normal(n)


def test_kernel_density_recovers_normal_peak():
    # default bandwidths; the oversmoothing bias of the Silverman rule is the limiting factor
    x, y = _normal_sample(0)
    f = kernel_conditional_density(0.5, 0.5, x, y, silverman_config(make_dataset(x, y)))
    assert abs(f - 3.989) <= 0.15 * 3.989


def test_kernel_density_matches_smoothed_target():
    # with a linear mean and interior x the estimator targets N(x, 0.1^2 + a^2 + b^2)
    for seed in range(3):
        x, y = _normal_sample(seed)
        cfg = silverman_config(make_dataset(x, y))
        sd = np.sqrt(0.01 + cfg.bandwidth_a ** 2 + cfg.bandwidth_b[0] ** 2)
        f = kernel_conditional_density(0.5, 0.5, x, y, cfg)
        assert abs(f - 1 / (sd * np.sqrt(2 * np.pi))) <= 0.05 / (sd * np.sqrt(2 * np.pi))


def test_kernel_density_integrates_to_one():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, 300)
    y = np.sin(3 * x) + 0.3 * rng.standard_normal(300)
    cfg = KernelConfig(0.1, (0.08,))
    grid = np.linspace(y.min() - 1.0, y.max() + 1.0, 4001)
    for x0 in np.linspace(0, 1, 20):
        f = kernel_conditional_density(np.full(grid.size, x0), grid, x, y, cfg)
        assert 0.9 <= np.trapezoid(f, grid) <= 1.1


def test_kernel_density_validation():
    with pytest.raises(ValueError):
        KernelConfig(0.0, (1.0,))
    with pytest.raises(ValueError):
        KernelConfig(1.0, (-1.0,))
    with pytest.raises(ValueError):
        kernel_conditional_density(0.1, 0.1, [], [], KernelConfig(1.0, (1.0,)))


def test_silverman_rule():
    v = np.random.default_rng(2).standard_normal(500)
    q75, q25 = np.percentile(v, [75, 25])
    want = 0.9 * min(v.std(ddof=1), (q75 - q25) / 1.34) * 500 ** -0.2
    assert silverman_bandwidth(v) == pytest.approx(want)
    assert silverman_bandwidth(np.ones(10)) > 0


def test_phi_symmetric_psd(fitted):
    _, _, _, ctx = fitted
    for j in range(ctx.phi.shape[0]):
        P = ctx.phi[j]
        np.testing.assert_allclose(P, P.T, atol=1e-15)
        assert np.linalg.eigvalsh(P).min() >= -1e-12


def test_phi_single_respondent_trace():
    data = make_dataset(np.linspace(0.05, 0.95, 40), np.linspace(0, 1, 40))
    imp = sqri_impute(make_dataset(data.x[:, 0], data.y, np.arange(40) < 39), CFG, 2, 0)
    one = make_dataset(data.x[:, 0], data.y, np.arange(40) == 0)
    imp1 = FractionalImputation(np.arange(1, 40), np.zeros((39, 2)), imp.taus, imp.fits)
    cfg = KernelConfig(0.2, (0.1,))
    ctx = SQRIVarianceContext(one, imp1, CFG, cfg)
    from sqri.spline_basis import eval_basis
    b = eval_basis(one.x[0, 0], CFG.grid)
    for j in range(2):
        f = kernel_conditional_density(one.x[0], ctx.q[j, 0], one.x[:1], one.y[:1], cfg)
        assert np.trace(ctx.phi[j]) == pytest.approx(f * b @ b / 40, rel=1e-12)


def test_h_hat_vanishes_without_y_dependence(fitted):
    data, imp, theta, _ = fitted
    flat = MomentSystem("x-only", 1, 1, lambda y, x, t: (x[..., 0] - t[0])[..., None] + 0 * y[..., None],
                        lambda y, x, t: -np.ones(np.shape(y) + (1, 1)),
                        lambda y, x, t: np.zeros(np.broadcast_shapes(np.shape(y), np.shape(x)[:-1]) + (1,)),
                        np.array([-np.inf]), np.array([np.inf]), ("m",), (0,))
    ctx = SQRIVarianceContext(data, imp, CFG)
    i = int(data.respondents[3])
    np.testing.assert_array_equal(ctx.h_hat(i, [0.5], flat), 0.0)


def test_h_hat_direct_loop(fitted):
    data, imp, theta, ctx = fitted
    n, J = data.n, len(imp.fits)
    resp = data.respondents
    for pos in (0, 7, resp.size - 1):
        i = int(resp[pos])
        want = np.zeros((FIVE.r, ctx.basis.shape[1]))
        for j in range(J):
            U = np.zeros((ctx.basis.shape[1], FIVE.r))
            for k in range(n):
                U += np.outer(ctx.basis[k], FIVE.dg_dy(ctx.q[j, k], data.x[k], theta))
            resid = data.y[i] - ctx.q[j, i]
            psi = imp.fits[j].tau - (resid < 0)
            want += psi * (ctx.h_inv[j] @ U).T
        want /= n * J
        np.testing.assert_allclose(ctx.h_hat(i, theta, FIVE), want, rtol=1e-10, atol=1e-14)
        row = ctx.h_times_basis(theta, FIVE)[pos]
        np.testing.assert_allclose(row, want @ ctx.basis[i], rtol=1e-10, atol=1e-14)
    with pytest.raises(ValueError):
        ctx.h_hat(int(data.missing[0]), theta, FIVE)


def test_psi_is_centred_at_large_n():
    from sqri.simulation import simulate
    _, obs = simulate("linear", 500, 3)
    imp = sqri_impute(obs, CFG, 10, 4)
    ctx = SQRIVarianceContext(obs, imp, CFG)
    assert np.all(np.abs(ctx.psi.mean(axis=1)) <= 0.05)


def test_xi_without_missing_is_g(linear_complete):
    theta = np.array([0.5, 1.0, 0.3, 0.5, 0.5])
    xi = xi_hat(theta, linear_complete, EMPTY)
    np.testing.assert_array_equal(xi, FIVE.g(linear_complete.y, linear_complete.x, theta))


def test_xi_missing_units_and_correction(fitted):
    data, imp, theta, ctx = fitted
    xi0 = xi_hat(theta, data, imp)
    xi = xi_hat(theta, data, imp, ctx)
    for k, i in enumerate(imp.missing[:5]):
        want = FIVE.g(imp.values[k], np.broadcast_to(data.x[i], (imp.J, 1)), theta).mean(axis=0)
        np.testing.assert_allclose(xi[i], want, rtol=1e-13)
    np.testing.assert_array_equal(xi[imp.missing], xi0[imp.missing])
    assert np.linalg.norm(xi - xi0) > 0
    np.testing.assert_allclose(xi0.mean(axis=0), augmented_moment(FIVE, data, imp, theta),
                               atol=1e-14)


def test_v_g_identical_units_is_zero():
    data = make_dataset(np.full(10, 0.3), np.full(10, 2.0))
    V = v_g_hat(np.array([0.3, 2.0, 1.0, 1.0, 0.0]), data, EMPTY)
    np.testing.assert_array_equal(V, 0.0)


def test_v_g_psd_and_plain_covariance(fitted, linear_complete):
    data, imp, theta, ctx = fitted
    V = v_g_hat(theta, data, imp, ctx)
    np.testing.assert_allclose(V, V.T)
    assert np.linalg.eigvalsh(V).min() >= -1e-12
    g = FIVE.g(linear_complete.y, linear_complete.x, theta)
    np.testing.assert_allclose(v_g_hat(theta, linear_complete, EMPTY),
                               np.cov(g, rowvar=False), rtol=1e-12)


def test_gamma_entries_and_finite_differences(fitted):
    data, imp, theta, _ = fitted
    G = gamma_hat(theta, data, imp)
    assert G[0, 0] == pytest.approx(-1.0, abs=1e-14)
    h = 1e-6
    for k in range(5):
        e = np.zeros(5)
        e[k] = h
        fd = (augmented_moment(FIVE, data, imp, theta + e)
              - augmented_moment(FIVE, data, imp, theta - e)) / (2 * h)
        np.testing.assert_allclose(G[:, k], fd, rtol=1e-4, atol=1e-7)


def test_sandwich_simple_cases():
    v = VarianceEstimate(np.eye(5), -np.eye(5), 100, 0.2)
    np.testing.assert_allclose(sandwich_unweighted(v), np.eye(5) / 100)
    np.testing.assert_allclose(sandwich_weighted(v), np.eye(5) / 100)
    zero = VarianceEstimate(np.zeros((5, 5)), -np.eye(5), 100, 0.2)
    np.testing.assert_array_equal(sandwich_weighted(zero), 0.0)
    np.testing.assert_array_equal(sandwich_unweighted(zero), 0.0)


def test_sandwich_forms_agree_when_exactly_identified(fitted):
    data, imp, theta, ctx = fitted
    v = VarianceEstimate(v_g_hat(theta, data, imp, ctx), gamma_hat(theta, data, imp), data.n,
                         0.2)
    np.testing.assert_allclose(sandwich_weighted(v), sandwich_unweighted(v), rtol=1e-8,
                               atol=1e-14)


def test_singular_gamma_rejected():
    v = VarianceEstimate(np.eye(2), np.array([[1.0, 1.0], [1.0, 1.0]]), 10, 0.0)
    with pytest.raises(np.linalg.LinAlgError):
        sandwich_weighted(v)
    with pytest.raises(np.linalg.LinAlgError):
        sandwich_unweighted(v)


def test_normal_ci():
    ci = normal_ci([1.0, 2.0], np.diag([1.0, 0.0]))
    assert ci[0].upper - 1.0 == pytest.approx(1.959964, abs=1e-6)
    assert ci[0].lower == pytest.approx(1.0 - 1.959964, abs=1e-6)
    assert ci[1].lower == ci[1].upper == 2.0
    assert ci[1].contains(2.0)
    with pytest.raises(ValueError):
        normal_ci([1.0], [[-1.0]])
    with pytest.raises(ValueError):
        normal_ci([1.0], [[1.0]], level=1.0)


def test_percentile_ci_identical_samples():
    ci = percentile_ci(np.tile([1.0, -2.0], (50, 1)))
    assert all(c.width == 0 for c in ci)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 0.99))
def test_percentile_ci_ordered(seed, level):
    s = np.random.default_rng(seed).standard_normal((40, 3))
    for c in percentile_ci(s, level):
        assert c.lower <= c.upper


def test_silverman_config_needs_respondents():
    data = make_dataset([0.1, 0.2], [np.nan, np.nan], [False, False])
    with pytest.raises(ValueError):
        silverman_config(data)


@pytest.mark.parametrize("model", ["linear", "bump", "cycle", "bivariate"])
def test_variance_matrices_symmetric_psd(model):
    from sqri.simulation import simulate
    _, obs = simulate(model, 200, 4)
    est, imp = sqri_point(obs, 10, 5, CFG)
    var = SQRIVarianceContext(obs, imp, CFG)
    V = v_g_hat(est.theta_hat, obs, imp, var)
    v = VarianceEstimate(V, gamma_hat(est.theta_hat, obs, imp), obs.n, 0.0)
    for M in (V, sandwich_unweighted(v), sandwich_weighted(v)):
        np.testing.assert_allclose(M, M.T, rtol=0, atol=1e-12)
        assert np.linalg.eigvalsh(M).min() >= -1e-10 * np.trace(M)
