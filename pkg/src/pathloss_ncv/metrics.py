"""Error metrics, fold aggregation and relative-difference arithmetic.

Display rounding is half-up (decimal.ROUND_HALF_UP), never banker's rounding,
so rendered cells are reproducible from the full-precision values.
"""

from decimal import ROUND_HALF_UP, Decimal
from typing import Optional, Sequence

import numpy as np

from pathloss_ncv.types import MetricPair, PredictionSet


def mae(p: PredictionSet) -> float:
    """Mean absolute error, in dB."""
    return float(np.mean(np.abs(p.residuals)))


def mse(p: PredictionSet) -> float:
    """Mean squared error, in dB^2."""
    return float(np.mean(np.square(p.residuals)))


def evaluate(actual, predicted) -> MetricPair:
    p = PredictionSet(actual=actual, predicted=predicted)
    return MetricPair(mae=mae(p), mse=mse(p))


def relative_difference(best: float, other: float) -> float:
    """Fraction by which `best` undercuts `other`: (other - best) / other."""
    if other == 0:
        raise ZeroDivisionError(
            "relative_difference is undefined when the compared metric is 0."
        )
    if other < 0 or best < 0:
        raise ValueError(
            f"Metrics must be non-negative, received best={best}, other={other}."
        )
    return (other - best) / other


def aggregate_folds(per_fold: Sequence[MetricPair]) -> MetricPair:
    """Unweighted mean of the fold MAEs and of the fold MSEs."""
    if len(per_fold) == 0:
        raise ValueError("Cannot aggregate an empty list of fold metrics.")
    return MetricPair(
        mae=float(np.mean([m.mae for m in per_fold])),
        mse=float(np.mean([m.mse for m in per_fold])),
    )


def round_half_up(value: float, decimals: int) -> Decimal:
    quantum = Decimal(1).scaleb(-decimals)
    return Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP)


def _strip(d: Decimal) -> str:
    text = format(d, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    return "0" if text in ("-0", "") else text


def format_metric(value: float, decimals: int = 2) -> str:
    """MAE / MSE cells: fixed decimals, half-up."""
    return format(round_half_up(value, decimals), "f")


def format_diff(value: Optional[float], decimals: int = 2) -> str:
    """Diff cells: `decimals` places with trailing zeros stripped.

    A non-zero value that would round to zero keeps one significant digit,
    so 0.00413 renders as 0.004 and 0.7961 as 0.8. `None` (the best model) is "-".
    """
    if value is None:
        return "-"
    rounded = round_half_up(value, decimals)
    if rounded == 0 and value != 0:
        exponent = Decimal(repr(abs(value))).adjusted()
        rounded = round_half_up(value, -exponent)
    return _strip(rounded)


def format_percent(fraction: float) -> str:
    """Chart labels: whole percents, or one significant digit below 1 %."""
    percent = fraction * 100
    if abs(percent) < 1 and percent != 0:
        return format_diff(percent, 0) + "%"
    return _strip(round_half_up(percent, 0)) + "%"
