import numpy as np
import pytest

from fxstack import arima
from fxstack.errors import DegenerateFitError, InsufficientDataError


def ar2_series(n, phi1=0.6, phi2=-0.3, seed=0, burn=200):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + burn)
    x = np.zeros(n + burn)
    for t in range(2, n + burn):
        x[t] = phi1 * x[t - 1] + phi2 * x[t - 2] + e[t]
    return x[burn:]


def ma1_series(n, theta=0.5, seed=0):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=n + 1)
    return e[1:] + theta * e[:-1]


def test_ar_fit_recovers_coefficients():
    x = ar2_series(5000, seed=11)
    model = arima.fit_arma(x, 2, 0, 0)
    np.testing.assert_allclose(model.ar_coeffs, [0.6, -0.3], atol=0.05)
    assert abs(model.intercept) < 0.05
    assert model.residual_variance == pytest.approx(1.0, abs=0.1)


def test_ma_fit_recovers_coefficient():
    x = ma1_series(5000, theta=0.5, seed=7)
    model = arima.fit_arma(x, 0, 0, 1)
    assert model.ma_coeffs[0] == pytest.approx(0.5, abs=0.08)


def test_differencing_removes_unit_root():
    rng = np.random.default_rng(3)
    walk = np.cumsum(rng.normal(size=3000))
    model = arima.fit_arma(walk, 1, 1, 0)
    # differenced walk is white noise: AR coefficient near zero
    assert abs(model.ar_coeffs[0]) < 0.1


def test_log_likelihood_formula():
    x = ar2_series(1000, seed=5)
    model = arima.fit_arma(x, 2, 0, 0)
    expected = -0.5 * model.n_fit * (
        np.log(2 * np.pi * model.residual_variance) + 1.0)
    assert model.log_likelihood == pytest.approx(expected, rel=1e-12)


def test_aic_formula_and_penalty_monotone():
    x = ar2_series(1000, seed=5)
    m = arima.fit_arma(x, 2, 0, 0)
    assert arima.aic(m) == pytest.approx(-2 * m.log_likelihood + 2 * (2 + 0 + 1))
    # identical logL, larger order => strictly larger AIC
    import dataclasses
    bigger = dataclasses.replace(m, p=4)
    assert arima.aic(bigger) > arima.aic(m)


def test_insufficient_data_rejected():
    with pytest.raises(InsufficientDataError):
        arima.fit_arma(np.ones(25), 2, 0, 0)


def test_constant_series_is_degenerate():
    with pytest.raises(DegenerateFitError):
        arima.fit_arma(np.full(500, 3.0), 2, 0, 0)


def test_select_order_finds_ar2():
    x = ar2_series(2000, seed=100)
    result = arima.select_order(x, d_set=(0,))
    p, d, q = result.selected
    assert p in (2, 3)
    assert q == 0
    assert len(result.grid) > 10
    best = min(cell[3] for cell in result.grid)
    selected_aic = [c[3] for c in result.grid if c[:3] == result.selected][0]
    assert selected_aic == best


def test_select_order_tie_break_prefers_smaller_order():
    # force a tie by construction: duplicate grid handling is internal, so
    # check the documented key ordering on equal-AIC cells directly
    cells = [(2, 0, 1, 10.0), (3, 0, 0, 10.0), (1, 0, 2, 10.0)]
    best = min(cells, key=lambda c: (c[3], c[0] + c[2], c[0]))
    assert best[:3] == (1, 0, 2) or best[3] == 10.0
    # smallest p+q wins, then smallest p: orders sum to 3 for all three,
    # so the p=1 cell is chosen
    assert best[:3] == (1, 0, 2)


def test_rolling_forecast_is_causal():
    x = ar2_series(900, seed=21)
    base = arima.rolling_forecast_feature(x, (2, 0, 0), fit_len=300,
                                          refit_every=200)
    bumped = x.copy()
    bumped[600:] += 50.0
    alt = arima.rolling_forecast_feature(bumped, (2, 0, 0), fit_len=300,
                                         refit_every=200)
    np.testing.assert_array_equal(base[:601], alt[:601])
    assert np.isnan(base[:300]).all()
    assert np.isfinite(base[300:]).all()


def test_rolling_forecast_beats_naive_on_ar2():
    x = ar2_series(1500, seed=33)
    forecast = arima.rolling_forecast_feature(x, (2, 0, 0), fit_len=500,
                                              refit_every=250)
    actual = x[500:]
    pred = forecast[500:]
    naive = x[499:-1]
    rmse_model = np.sqrt(np.mean((pred - actual) ** 2))
    rmse_naive = np.sqrt(np.mean((naive - actual) ** 2))
    assert rmse_model < rmse_naive


def test_rolling_forecast_with_differencing_tracks_level():
    rng = np.random.default_rng(8)
    walk = 100.0 + np.cumsum(rng.normal(size=800))
    forecast = arima.rolling_forecast_feature(walk, (0, 1, 0), fit_len=300,
                                              refit_every=200)
    # one-step forecast of a near-driftless walk stays close to the last value
    err = forecast[300:] - walk[299:-1]
    assert np.max(np.abs(err)) < 1.0
