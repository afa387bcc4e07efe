import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqri.estimation import FractionalMoments, fractional_gmm
from sqri.gmm import (BIVARIATE, FIVE, MomentSystem, complete_closed_form, gmm_unweighted,
                      gmm_weighted, moments_bivariate, moments_five, system_for,
                      to_moment_convention)
from sqri.imputation import FractionalImputation, sqri_impute
from sqri.quantile_fit import FitConfig

EMPTY = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)))


def test_five_examples():
    np.testing.assert_array_equal(moments_five(0.3, 1.2, [0.3, 1.2, 2.0, 3.0, 0.0]),
                                  [0, 0, -4, -9, 0])
    np.testing.assert_array_equal(moments_five(1.0, 2.0, [0, 0, 1, 1, 0]), [1, 2, 0, 3, 2])
    with pytest.raises(ValueError):
        moments_five(0.0, 0.0, [0, 0, 0.0, 1, 0])


def test_bivariate_examples():
    th = [0.2, 0.7, 1.5, 1.0, 2.0, 3.0, 0.4, 0.6]
    g = moments_bivariate(0.2, 0.7, 1.5, th)
    np.testing.assert_array_equal(g[:3], 0)
    # x2 fixed at its mean: the second correlation slot is -rho_2 s_x2 s_y
    g = moments_bivariate(0.9, 0.7, 2.5, th)
    assert g[7] == pytest.approx(-0.6 * 2.0 * 3.0)
    with pytest.raises(ValueError):
        moments_bivariate(0, 0, 0, [0, 0, 0, 1, -1, 1, 0, 0])


def test_system_lookup():
    assert system_for(1) is FIVE and system_for(2) is BIVARIATE
    with pytest.raises(ValueError):
        system_for(3)
    with pytest.raises(ValueError):
        MomentSystem("bad", 1, 2, None, None, None, np.zeros(2), np.ones(2), ("a", "b"), (0,))


def _fd_check(system, rng, points=100):
    h = 1e-6
    for _ in range(points):
        x = rng.uniform(0, 1, system.d_x)
        y = rng.normal(1, 1)
        theta = np.concatenate([rng.normal(0.5, 0.5, system.d_x + 1),
                                rng.uniform(0.2, 2.0, system.d_x + 1),
                                rng.uniform(-0.9, 0.9, system.d_x)])
        D = system.dg_dtheta(y, x, theta)
        for k in range(system.d_theta):
            e = np.zeros_like(theta)
            e[k] = h
            fd = (system.g(y, x, theta + e) - system.g(y, x, theta - e)) / (2 * h)
            np.testing.assert_allclose(D[:, k], fd, rtol=1e-4, atol=1e-7)
        fdy = (system.g(y + h, x, theta) - system.g(y - h, x, theta)) / (2 * h)
        np.testing.assert_allclose(system.dg_dy(y, x, theta), fdy, rtol=1e-4, atol=1e-7)


@pytest.mark.parametrize("system", [FIVE, BIVARIATE], ids=["five", "bivariate"])
def test_derivatives_match_finite_differences(system):
    _fd_check(system, np.random.default_rng(system.r))


def test_closed_form_two_points():
    th = complete_closed_form([0.0, 1.0], [0.0, 2.0])
    mx, my, sx, sy, rho = th
    assert (mx, my) == (0.5, 1.0)
    assert sx ** 2 == pytest.approx(0.5) and sy ** 2 == pytest.approx(2.0)
    assert rho == pytest.approx(1.0)
    with pytest.raises(ValueError, match="zero variance"):
        complete_closed_form([0.1, 0.4, 0.9], [1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        complete_closed_form([0.1], [1.0])


def test_closed_form_matches_numpy(linear_complete):
    x, y = linear_complete.x[:, 0], linear_complete.y
    th = complete_closed_form(x, y)
    np.testing.assert_allclose(th, [x.mean(), y.mean(), x.std(ddof=1), y.std(ddof=1),
                                    np.corrcoef(x, y)[0, 1]], rtol=1e-13)


def test_identity_builder_recovers_constant():
    c = np.array([0.3, -1.0, 2.0, 0.5, 0.1])
    est = gmm_unweighted(lambda t: t - c, FIVE, np.array([0.0, 0.0, 1.0, 1.0, 0.0]))
    np.testing.assert_allclose(est.theta_hat, c, atol=1e-10)
    assert est.converged and est.objective >= 0


def test_complete_data_reduction(linear_complete):
    data = linear_complete
    n = data.n
    closed = complete_closed_form(data.x, data.y)
    est = fractional_gmm(data, EMPTY, weighted=False)
    th = est.theta_hat
    assert est.objective < 1e-16
    np.testing.assert_allclose(th[:2], closed[:2], rtol=0, atol=1e-10)
    np.testing.assert_allclose(th[2:4] ** 2, closed[2:4] ** 2 * (n - 1) / n, atol=1e-10)
    assert abs(th[4] - closed[4]) < 1e-10
    np.testing.assert_allclose(th, to_moment_convention(closed, n), atol=1e-10)


def test_exactly_identified_weighted_equals_unweighted(linear_obs):
    imp = sqri_impute(linear_obs, FitConfig(), 10, 3)
    un = fractional_gmm(linear_obs, imp, weighted=False)
    for mode in ("cu", "two-step"):
        w = fractional_gmm(linear_obs, imp, weighted=True, mode=mode)
        np.testing.assert_allclose(w.theta_hat, un.theta_hat, atol=1e-5)
    assert un.objective < 1e-14


def test_exactly_identified_nonzero_weight_path():
    # a weight that differs from the identity still lands on the same exact root
    c = np.array([0.3, -1.0, 2.0, 0.5, 0.1])
    A = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    builder = lambda t: A @ (t - c)  # noqa: E731
    start = np.array([0.0, 0.0, 1.0, 1.0, 0.0])
    un = gmm_unweighted(builder, FIVE, start)
    w = gmm_weighted(builder, FIVE, start, lambda t: np.diag([5.0, 1, 2, 0.5, 3]))
    np.testing.assert_allclose(w.theta_hat, un.theta_hat, atol=1e-5)


def _overidentified():
    # two noisy readings of one location: r = 2 moments, d_theta = 1
    return MomentSystem("pair", 2, 1, None, None, None, np.array([-np.inf]),
                        np.array([np.inf]), ("m",), (0,))


def test_identity_weight_reduces_to_unweighted():
    sysm = _overidentified()
    builder = lambda t: np.array([t[0] - 1.0, 2.0 * (t[0] - 3.0)])  # noqa: E731
    un = gmm_unweighted(builder, sysm, np.array([0.0]))
    w = gmm_weighted(builder, sysm, np.array([0.0]), lambda t: np.eye(2))
    np.testing.assert_allclose(un.theta_hat, [13.0 / 5.0], atol=1e-8)
    np.testing.assert_allclose(w.theta_hat, un.theta_hat, atol=1e-8)
    # a non-identity weight moves the over-identified estimate
    w2 = gmm_weighted(builder, sysm, np.array([0.0]), lambda t: np.diag([1.0, 100.0]),
                      mode="two-step")
    want = (1.0 + 4.0 * 3.0 / 100.0) / (1.0 + 4.0 / 100.0)
    np.testing.assert_allclose(w2.theta_hat, [want], atol=1e-8)


def test_degenerate_weight_rejected():
    sysm = _overidentified()
    builder = lambda t: np.array([t[0] - 1.0, t[0] - 3.0])  # noqa: E731
    with pytest.raises(np.linalg.LinAlgError, match="degenerate"):
        gmm_weighted(builder, sysm, np.array([0.0]), lambda t: np.zeros((2, 2)))


def test_rejects_start_outside_bounds():
    with pytest.raises(ValueError):
        gmm_unweighted(lambda t: t, FIVE, np.array([0, 0, -1.0, 1, 0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iterates_respect_bounds(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, 30)
    y = rng.normal(0, 1, 30) + x
    seen = []
    data_theta = to_moment_convention(complete_closed_form(x, y), 30)

    def builder(t):
        seen.append(np.array(t))
        return FIVE.g(y, x[:, None], t).mean(axis=0)

    start = data_theta * np.array([1.2, 0.8, 1.5, 0.6, 0.5])
    est = gmm_unweighted(builder, FIVE, start)
    assert est.objective >= 0
    assert all(t[2] > 0 and t[3] > 0 for t in seen)
    np.testing.assert_allclose(est.theta_hat, data_theta, atol=1e-6)


def test_objective_descends_every_iteration(linear_obs):
    # the optimizer is deterministic, so capping the iteration count replays its path
    imp = sqri_impute(linear_obs, FitConfig(), 10, 3)
    start = np.array([0.2, 0.4, 0.6, 1.5, -0.3])
    fm = FractionalMoments(FIVE, linear_obs, imp)
    path = [gmm_unweighted(fm, FIVE, start, fm.jacobian, max_iterations=k).objective
            for k in range(0, 8)]
    assert path[0] > path[-1]
    assert all(b <= a for a, b in zip(path, path[1:]))
    assert all(v >= 0 for v in path)
