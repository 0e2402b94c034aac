import math

import numpy as np
import pytest
from pathloss_ncv.metrics import (
    aggregate_folds,
    evaluate,
    format_diff,
    format_metric,
    format_percent,
    mae,
    mse,
    relative_difference,
)
from pathloss_ncv.types import MetricPair, PredictionSet

# Published comparison table: MAE, MSE per model.
TABLE_MAE = {"SVR": 5.07, "CBR": 2.42, "ANN": 3.87, "XGBR": 2.41, "RF": 2.97}
TABLE_MSE = {"SVR": 52.17, "CBR": 10.75, "ANN": 26.14, "XGBR": 10.64, "RF": 15.23}
PRINTED_MAE_DIFF = {"CBR": "0.004", "ANN": "0.38", "RF": "0.19"}
PRINTED_MSE_DIFF = {"SVR": "0.8", "CBR": "0.01", "ANN": "0.59", "RF": "0.3"}


def test_hand_example():
    p = PredictionSet(actual=[1, 2], predicted=[2, 4])
    assert mae(p) == 1.5
    assert mse(p) == 2.5


def test_identical_predictions_are_zero():
    p = PredictionSet(actual=[3.0, 4.0, 5.0], predicted=[3.0, 4.0, 5.0])
    assert mae(p) == 0
    assert mse(p) == 0


def test_constant_residuals():
    actual = np.linspace(90, 130, 7)
    assert mae(PredictionSet(actual=actual, predicted=actual - 2.41)) == pytest.approx(2.41)
    assert mse(PredictionSet(actual=actual, predicted=actual + 2)) == pytest.approx(4.0)


def test_zero_iff_equal():
    rng = np.random.default_rng(0)
    actual = rng.normal(120, 10, 20)
    predicted = actual.copy()
    predicted[7] += 1e-6
    pair = evaluate(actual, predicted)
    assert pair.mae > 0 and pair.mse > 0


def test_jensen_on_random_prediction_sets():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        n = int(rng.integers(1, 30))
        actual = rng.normal(120, 15, n)
        predicted = actual + rng.standard_t(3, n) * rng.uniform(0.1, 20)
        p = PredictionSet(actual=actual, predicted=predicted)
        assert mae(p) <= math.sqrt(mse(p)) * (1 + 1e-12) + 1e-12


def test_translation_and_permutation_symmetry():
    rng = np.random.default_rng(2)
    actual = rng.normal(120, 10, 50)
    predicted = actual + rng.normal(0, 3, 50)
    base = evaluate(actual, predicted)
    shifted = evaluate(actual + 17.5, predicted + 17.5)
    order = rng.permutation(50)
    permuted = evaluate(actual[order], predicted[order])
    assert shifted.mae == pytest.approx(base.mae, rel=1e-12)
    assert shifted.mse == pytest.approx(base.mse, rel=1e-12)
    assert permuted.mae == pytest.approx(base.mae, rel=1e-12)
    assert permuted.mse == pytest.approx(base.mse, rel=1e-12)


def test_prediction_set_invariants():
    with pytest.raises(ValueError):
        PredictionSet(actual=[1.0, 2.0], predicted=[1.0])
    with pytest.raises(ValueError):
        PredictionSet(actual=[], predicted=[])
    with pytest.raises(ValueError):
        PredictionSet(actual=[1.0], predicted=[float("inf")])


def test_metric_pair_invariants():
    with pytest.raises(ValueError):
        MetricPair(mae=3.0, mse=4.0)
    with pytest.raises(ValueError):
        MetricPair(mae=-1.0, mse=4.0)
    MetricPair(mae=2.0, mse=4.0)


def test_relative_difference_examples():
    assert relative_difference(2.41, 5.07) == pytest.approx(0.5247, abs=1e-4)
    assert relative_difference(2.41, 2.42) == pytest.approx(0.00413, abs=1e-5)
    assert relative_difference(3.0, 3.0) == 0


def test_relative_difference_errors():
    with pytest.raises(ZeroDivisionError):
        relative_difference(0.0, 0.0)
    with pytest.raises(ValueError):
        relative_difference(-1.0, 2.0)


def test_table_diff_cells_at_printed_precision():
    best_mae, best_mse = TABLE_MAE["XGBR"], TABLE_MSE["XGBR"]
    for model, printed in PRINTED_MAE_DIFF.items():
        assert format_diff(relative_difference(best_mae, TABLE_MAE[model])) == printed
    for model, printed in PRINTED_MSE_DIFF.items():
        assert format_diff(relative_difference(best_mse, TABLE_MSE[model])) == printed


def test_svr_mae_diff_from_rounded_cells():
    # The rounded table cells give 0.5247, which renders as 0.52; the printed
    # 0.53 must have come from unrounded metrics.
    diff = relative_difference(TABLE_MAE["XGBR"], TABLE_MAE["SVR"])
    assert format_diff(diff) == "0.52"
    assert abs(diff - 0.53) < 0.01


def test_aggregate_folds():
    assert aggregate_folds([MetricPair(mae=1, mse=1)]) == MetricPair(mae=1, mse=1)
    assert aggregate_folds(
        [MetricPair(mae=1, mse=1), MetricPair(mae=3, mse=9)]
    ) == MetricPair(mae=2, mse=5)
    pair = MetricPair(mae=2.41, mse=10.64)
    six = aggregate_folds([pair] * 6)
    assert six.mae == pytest.approx(2.41)
    assert six.mse == pytest.approx(10.64)
    with pytest.raises(ValueError):
        aggregate_folds([])


def test_display_rounding_is_half_up():
    assert format_metric(2.405) == "2.41"
    assert format_metric(2.415) == "2.42"
    assert format_metric(10.0) == "10.00"
    assert format_diff(0.125) == "0.13"
    assert format_diff(0.30138) == "0.3"
    assert format_diff(0.0) == "0"
    assert format_diff(None) == "-"


def test_format_percent():
    assert format_percent(0.5247) == "52%"
    assert format_percent(0.79605) == "80%"
    assert format_percent(0.00413) == "0.4%"
    assert format_percent(0.01023) == "1%"
    assert format_percent(0.0) == "0%"
