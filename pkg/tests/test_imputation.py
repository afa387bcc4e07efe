import numpy as np
import pytest

from sqri.data import Dataset
from sqri.gmm import FIVE, MomentSystem, complete_closed_form, to_moment_convention
from sqri.imputation import (FractionalImputation, augmented_moment, draw_taus, sqri_impute,
                             unit_moments)
from sqri.methods import point_estimate
from sqri.quantile_fit import FitConfig, fit_quantile, predict_quantile
from sqri.seeds import child_seed
from sqri.simulation import simulate

CFG = FitConfig()


def test_draw_taus_reproducible_and_supported():
    a, b = draw_taus(10, 99), draw_taus(10, 99)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (10,)
    big = draw_taus(10**4, 7)
    assert np.all((big > 0) & (big < 1))
    assert abs(big.mean() - 0.5) < 3 * 0.5 / np.sqrt(10**4 * 12)


@pytest.mark.parametrize("J", [0, -1, 2.5])
def test_draw_taus_rejects(J):
    with pytest.raises(ValueError):
        draw_taus(J, 0)


def test_no_missing_units_gives_empty_map(linear_complete):
    imp = sqri_impute(linear_complete, CFG, 10, 1)
    assert imp.imputed == {}
    assert imp.values.shape == (0, 10)
    assert len(imp.fits) == 10


def test_noiseless_linear_truth():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, 120)
    delta = rng.random(120) < 0.7
    data = Dataset(x, x.copy(), delta)
    imp = sqri_impute(data, CFG, 5, 3)
    xm = x[~delta]
    assert np.max(np.abs(imp.values - xm[:, None])) < 0.02


def test_single_median_draw_matches_median_fit(linear_obs):
    imp = sqri_impute(linear_obs, CFG, taus=[0.5])
    resp = linear_obs.respondents
    fit = fit_quantile(linear_obs.x[resp, 0], linear_obs.y[resp], 0.5, imp.lam)
    want = predict_quantile(fit, linear_obs.x[linear_obs.missing, 0])
    np.testing.assert_array_equal(imp.values[:, 0], want)


def test_shared_fits_and_exact_predictions(linear_obs):
    imp = sqri_impute(linear_obs, CFG, 10, 5)
    assert imp.values.shape == (linear_obs.missing.size, 10)
    np.testing.assert_array_equal(imp.missing, linear_obs.missing)
    for j, fit in enumerate(imp.fits):
        assert fit.tau == imp.taus[j]
        want = predict_quantile(fit, linear_obs.x[imp.missing, 0])
        np.testing.assert_array_equal(imp.values[:, j], want)
    # one lambda, chosen once at the median, shared by every draw
    assert len({f.lam for f in imp.fits}) == 1


def test_imputation_is_deterministic(linear_obs):
    a = sqri_impute(linear_obs, CFG, 10, child_seed(4, 1))
    b = sqri_impute(linear_obs, CFG, 10, child_seed(4, 1))
    assert a.values.tobytes() == b.values.tobytes()
    assert a.taus.tobytes() == b.taus.tobytes()
    for fa, fb in zip(a.fits, b.fits):
        assert fa.coefficients.tobytes() == fb.coefficients.tobytes()


def test_respondents_untouched(linear_obs):
    before = linear_obs.y.copy()
    sqri_impute(linear_obs, CFG, 4, 0)
    np.testing.assert_array_equal(linear_obs.y, before)


def test_insufficient_respondents():
    x = np.linspace(0, 1, 30)
    delta = np.zeros(30, dtype=bool)
    delta[:10] = True
    with pytest.raises(ValueError, match="insufficient respondents"):
        sqri_impute(Dataset(x, x, delta), CFG, 3, 0)


def test_explicit_taus_validated(linear_obs):
    with pytest.raises(ValueError):
        sqri_impute(linear_obs, CFG, taus=[0.2, 1.0])


def test_bivariate_imputation_shapes(bivariate_obs):
    imp = sqri_impute(bivariate_obs, CFG, 4, 0)
    assert imp.values.shape == (bivariate_obs.missing.size, 4)
    assert imp.fits[0].coefficients.shape == (16,)


def test_moment_without_missing_is_plain_mean(linear_complete):
    theta = np.array([0.4, 1.1, 0.3, 0.6, 0.5])
    empty = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 3)))
    G = augmented_moment(FIVE, linear_complete, empty, theta)
    direct = FIVE.g(linear_complete.y, linear_complete.x, theta).mean(axis=0)
    np.testing.assert_array_equal(G, direct)


def test_fractional_average_arithmetic():
    lin = MomentSystem("shift", 1, 1, lambda y, x, t: (y - t[0])[..., None],
                       lambda y, x, t: -np.ones(np.shape(y) + (1, 1)),
                       lambda y, x, t: np.ones(np.shape(y) + (1,)),
                       np.array([-np.inf]), np.array([np.inf]), ("m",), (0,))
    data = Dataset(np.array([0.5]), np.array([np.nan]), np.array([False]))
    imp = FractionalImputation(np.array([0]), np.array([[1.0, 3.0]]))
    for theta in (0.0, 0.7, -4.0):
        np.testing.assert_allclose(augmented_moment(lin, data, imp, [theta]), [2.0 - theta])


def test_moments_vanish_at_completed_sample_moments(linear_obs):
    imp = sqri_impute(linear_obs, CFG, 10, 9)
    y = linear_obs.y.copy()
    y[imp.missing] = imp.mean_values()
    # g is linear in y except through (y - mu_y)^2, so use the fractional second moments
    x = linear_obs.x[:, 0]
    n = linear_obs.n
    resp, miss = linear_obs.respondents, imp.missing
    mu_y = y.mean()
    sq = np.empty(n)
    sq[resp] = (linear_obs.y[resp] - mu_y) ** 2
    sq[miss] = ((imp.values - mu_y) ** 2).mean(axis=1)
    mx = x.mean()
    sx = np.sqrt(((x - mx) ** 2).mean())
    sy = np.sqrt(sq.mean())
    rho = ((x - mx) * (y - mu_y)).mean() / (sx * sy)
    G = augmented_moment(FIVE, linear_obs, imp, [mx, mu_y, sx, sy, rho])
    np.testing.assert_allclose(G, 0.0, atol=1e-10)


def test_complete_data_oracle_roots(linear_complete):
    theta = to_moment_convention(complete_closed_form(linear_complete.x, linear_complete.y),
                                 linear_complete.n)
    empty = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)))
    np.testing.assert_allclose(augmented_moment(FIVE, linear_complete, empty, theta), 0.0,
                               atol=1e-12)


def test_moment_overflow_reports_unit():
    data = Dataset(np.array([0.1, 0.2]), np.array([1.0, 1e200]), np.array([True, True]))
    empty = FractionalImputation(np.empty(0, dtype=int), np.empty((0, 1)))
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="unit 1"):
        unit_moments(FIVE, data, empty, [0.0, 0.0, 1.0, 1.0, 0.0])


@pytest.mark.slow
def test_j100_agrees_with_j10():
    R = 200
    a, b = np.empty(R), np.empty(R)
    for r in range(R):
        _, obs = simulate("linear", 200, child_seed(31, r))
        a[r] = point_estimate("sqri", obs, 10, child_seed(31, r, 1))[1]
        b[r] = point_estimate("sqri", obs, 100, child_seed(31, r, 1))[1]
    se = a.std(ddof=1) / np.sqrt(R)
    assert abs(a.mean() - b.mean()) < 2 * se
