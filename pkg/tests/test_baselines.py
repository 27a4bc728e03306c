import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onenas.baselines import (
    BaselineConfig,
    ExpSmoothing,
    OnlineArima,
    arima_step,
    exp_smoothing_predict,
    moving_average_predict,
    naive_predict,
    run_baseline,
)
from onenas.data_io import ar2
from onenas.errors import ContractError

SERIES = [3.0, 5.0, 4.0, 6.0, 8.0, 7.0, 9.0, 12.0, 10.0, 11.0]


def test_naive_example():
    assert naive_predict([3.0, 5.0, 4.0]) == 4.0


def test_moving_average_example():
    assert moving_average_predict([3.0, 5.0, 4.0], 3) == pytest.approx(4.0, abs=1e-12)
    assert moving_average_predict([3.0, 5.0], 3) == pytest.approx(4.0, abs=1e-12)


def test_exp_smoothing_example():
    assert exp_smoothing_predict(4.0, 6.0, 0.2) == pytest.approx(4.4, abs=1e-12)


def test_empty_history_is_an_error():
    with pytest.raises(ContractError):
        naive_predict([])
    with pytest.raises(ContractError):
        ExpSmoothing(0.2).predict()
    with pytest.raises(ContractError):
        BaselineConfig(alpha=1.0)


def test_hand_computed_series():
    naive = run_baseline(SERIES, "naive")
    ma = run_baseline(SERIES, "ma", BaselineConfig(ma_window=3))
    es = run_baseline(SERIES, "exp", BaselineConfig(alpha=0.2))
    assert naive.tolist() == SERIES[:-1]
    hand_ma = [3.0, 4.0, 4.0, 5.0, 6.0, 7.0, 8.0, 28 / 3, 31 / 3]
    assert np.max(np.abs(ma - hand_ma)) < 1e-12
    level, hand_es = SERIES[0], []
    for x in SERIES:
        level = level if not hand_es and x == SERIES[0] else 0.2 * x + 0.8 * level
        hand_es.append(level)
    assert np.max(np.abs(es - hand_es[:-1])) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
def test_naive_equals_ma_window_one(values):
    assert np.array_equal(run_baseline(values, "naive"),
                          run_baseline(values, "ma", BaselineConfig(ma_window=1)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=40), st.integers(1, 8))
def test_ma_matches_direct_mean(values, n):
    out = run_baseline(values, "ma", BaselineConfig(ma_window=n))
    for i in range(1, len(values)):
        assert out[i - 1] == pytest.approx(moving_average_predict(values[:i], n), rel=1e-9, abs=1e-9)


def test_arima_differencing_offset():
    model = OnlineArima(BaselineConfig(ar_order=2, differencing=1))
    for x in [1.0, 2.0, 4.0]:
        model.update(x)
    model.coef[:] = [0.5, 0.25]
    # diffs (1, 2): 4 + 0.5*2 + 0.25*1
    assert model.predict() == pytest.approx(5.25)


def test_arima_coefficients_stay_in_box():
    model = OnlineArima(BaselineConfig(ar_order=3, differencing=0, learning_rate=10.0))
    rng = np.random.default_rng(0)
    for x in rng.normal(0, 50, 300):
        model.update(x)
        assert np.all(np.abs(model.coef) <= 1.0)


@pytest.mark.parametrize("variant,lr,eps", [("ogd", None, None), ("ons", 1.75, 10 ** -0.5)])
def test_arima_learns_ar2(variant, lr, eps):
    data = ar2(5000, seed=3).target_series
    model = OnlineArima(BaselineConfig(ar_order=2, differencing=0, variant=variant,
                                       learning_rate=lr, epsilon=eps))
    for x in data:
        pred, model = arima_step(model, x)
    assert model.coef == pytest.approx([0.6, -0.3], abs=0.1)


def test_ons_default_settings_stay_bounded():
    data = ar2(2000, seed=1).target_series
    model = OnlineArima(BaselineConfig(ar_order=2, differencing=0, variant="ons"))
    preds = [model.update(x) for x in data]
    assert np.all(np.isfinite(preds)) and np.all(np.abs(model.coef) <= 1.0)


def test_ons_recovers_from_singular_update():
    model = OnlineArima(BaselineConfig(variant="ons", ar_order=2, differencing=0))
    model.a_inv[:] = -np.eye(2)
    model.update(1.0)
    model.update(2.0)
    assert model.resets == 1
    assert np.all(np.isfinite(model.coef))


def test_run_baseline_unknown_method():
    with pytest.raises(ContractError):
        run_baseline([1.0, 2.0], "prophet")


def test_forecasts_are_causal():
    values = np.random.default_rng(0).normal(size=60)
    for method in ("naive", "ma", "exp", "arima_ogd", "arima_ons"):
        full = run_baseline(values, method)
        changed = values.copy()
        changed[40:] += 100.0
        # forecasts of indices 1..40 only use values 0..39
        assert np.array_equal(full[:40], run_baseline(changed, method)[:40]), method
