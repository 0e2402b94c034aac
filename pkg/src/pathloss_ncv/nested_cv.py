"""Leakage-free model selection and evaluation with nested cross validation.

An outer k-fold loop estimates generalization error. Inside each outer
training set an inner k-fold loop scores every grid point of a model family;
the winner is refit on the full outer training set and scored once on the
outer test fold. Normalization, when the family uses it, is fitted on the
training side of every split only.

Work items (model, outer fold, grid point, inner fold) are independent. Each
gets its own seed derived from the run seed and its coordinates, and joblib
returns results in submission order, so reports do not depend on the number
of workers.
"""

import hashlib
import logging
import time
import zlib
from typing import Any, Literal, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pathloss_ncv import metrics
from pathloss_ncv.data_pipeline import apply_normalizer, fit_normalizer, split_rows
from pathloss_ncv.exceptions import (
    AllFitsFailedError,
    FitError,
    FoldPlanError,
    LeakageError,
)
from pathloss_ncv.regressors.families import EstimatorSpec, GridPoint
from pathloss_ncv.types import Dataset, MetricPair

logger = logging.getLogger(__name__)

SelectionMetric = Literal["mse", "mae"]

REPORT_SCHEMA_VERSION = 1


class FoldPlan(BaseModel):
    """Deterministic outer and inner index partitions of range(n).

    Attributes:
        outer_folds: Test indices of each outer fold.
        inner_folds: For each outer fold, the validation indices of each inner
            fold. Inner folds partition that outer fold's training indices.
    """

    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=1)
    outer_k: int = Field(ge=2)
    inner_k: int = Field(ge=2)
    seed: int
    outer_folds: list[list[int]]
    inner_folds: list[list[list[int]]]

    @model_validator(mode="after")
    def check_partitions(self) -> "FoldPlan":
        if len(self.outer_folds) != self.outer_k:
            raise ValueError(
                f"Expected {self.outer_k} outer folds, received {len(self.outer_folds)}."
            )
        if sorted(i for fold in self.outer_folds for i in fold) != list(range(self.n)):
            raise ValueError("Outer folds must partition range(n).")
        for i, inner in enumerate(self.inner_folds):
            if len(inner) != self.inner_k:
                raise ValueError(
                    f"Outer fold {i} has {len(inner)} inner folds, expected {self.inner_k}."
                )
            if sorted(j for fold in inner for j in fold) != self.outer_train(i).tolist():
                raise ValueError(
                    f"Inner folds of outer fold {i} must partition its training indices."
                )
        return self

    def outer_test(self, i: int) -> np.ndarray:
        return np.array(self.outer_folds[i], dtype=np.int64)

    def outer_train(self, i: int) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[self.outer_folds[i]] = False
        return np.flatnonzero(mask)

    def inner_validation(self, i: int, j: int) -> np.ndarray:
        return np.array(self.inner_folds[i][j], dtype=np.int64)

    def inner_train(self, i: int, j: int) -> np.ndarray:
        validation = set(self.inner_folds[i][j])
        return np.array(
            [r for r in self.outer_train(i).tolist() if r not in validation],
            dtype=np.int64,
        )

    @property
    def plan_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(f"{self.n}:{self.outer_k}:{self.inner_k}:{self.seed}".encode())
        for i, fold in enumerate(self.outer_folds):
            digest.update(np.asarray(fold, dtype=np.int64).tobytes())
            for inner in self.inner_folds[i]:
                digest.update(b"|")
                digest.update(np.asarray(inner, dtype=np.int64).tobytes())
            digest.update(b"#")
        return digest.hexdigest()


def fold_sizes(n: int, k: int) -> list[int]:
    """floor(n / k) rows per fold, the first n mod k folds one row larger."""
    base, extra = divmod(n, k)
    return [base + 1 if f < extra else base for f in range(k)]


def _slice(indices: np.ndarray, k: int) -> list[list[int]]:
    bounds = np.cumsum([0, *fold_sizes(indices.size, k)])
    return [sorted(indices[bounds[f] : bounds[f + 1]].tolist()) for f in range(k)]


def make_fold_plan(n: int, outer_k: int = 6, inner_k: int = 4, seed: int = 0) -> FoldPlan:
    """Shuffles range(n) with `seed`, slices it into outer folds, and does the same inside every outer training set."""
    if outer_k < 2 or inner_k < 2:
        raise FoldPlanError(
            f"outer_k and inner_k must both be >= 2, received outer_k={outer_k}, inner_k={inner_k}."
        )
    if n < outer_k:
        raise FoldPlanError(f"Cannot split {n} rows into {outer_k} outer folds.")
    smallest_train = n - fold_sizes(n, outer_k)[0]
    if smallest_train < inner_k:
        raise FoldPlanError(
            f"Outer training sets of {smallest_train} rows cannot be split into {inner_k} inner folds."
        )
    rng = np.random.default_rng(seed)
    outer = _slice(rng.permutation(n), outer_k)
    inner = []
    for fold in outer:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        train = np.flatnonzero(mask)
        inner.append(_slice(rng.permutation(train), inner_k))
    return FoldPlan(
        n=n, outer_k=outer_k, inner_k=inner_k, seed=seed, outer_folds=outer, inner_folds=inner
    )


def item_seed(seed: int, label: str, outer: int, grid: int, inner: int) -> int:
    """Seed of one work item, independent of every other item."""
    key = zlib.crc32(label.encode("utf-8"))
    sequence = np.random.SeedSequence(seed, spawn_key=(key, outer, grid, inner))
    return int(sequence.generate_state(1)[0])


def _positions(data: Dataset, row_ids: np.ndarray) -> np.ndarray:
    """Positions in `data` of the given original row ids; LeakageError if any is absent."""
    lookup = {int(r): p for p, r in enumerate(data.row_ids.tolist())}
    missing = [int(r) for r in row_ids if int(r) not in lookup]
    if missing:
        raise LeakageError(
            f"Rows {missing[:10]} are not part of the outer training set they were assigned to."
        )
    return np.array([lookup[int(r)] for r in row_ids], dtype=np.int64)


def fit_and_score(
    spec: EstimatorSpec,
    train: Dataset,
    validation: Dataset,
    params: dict[str, Any],
    seed: int,
) -> tuple[Any, np.ndarray]:
    """Fits on `train` (normalizer included) and predicts `validation`.

    Returns the fitted model and the validation predictions. Non-finite
    predictions raise FitError.
    """
    overlap = np.intersect1d(train.row_ids, validation.row_ids)
    if overlap.size:
        raise LeakageError(
            f"Rows {overlap[:10].tolist()} appear in both the fitting and the scoring split."
        )
    if spec.normalizes:
        normalizer = fit_normalizer(train)
        train = apply_normalizer(normalizer, train)
        validation = apply_normalizer(normalizer, validation)
    model = spec.fit(train, params, seed)
    with np.errstate(all="ignore"):
        predictions = spec.predict(model, validation.features)
    if predictions.shape != validation.targets.shape or not np.all(np.isfinite(predictions)):
        raise FitError(f"{spec.name} produced invalid predictions with {params}.")
    return model, predictions


def _score(metric: SelectionMetric, actual: np.ndarray, predicted: np.ndarray) -> float:
    pair = metrics.evaluate(actual, predicted)
    return pair.mse if metric == "mse" else pair.mae


def _inner_item(
    spec: EstimatorSpec,
    outer_train: Dataset,
    validation_rows: np.ndarray,
    params: dict[str, Any],
    seed: int,
    selection_metric: SelectionMetric,
) -> tuple[float, Optional[str]]:
    validation_pos = _positions(outer_train, validation_rows)
    mask = np.ones(outer_train.n, dtype=bool)
    mask[validation_pos] = False
    train = split_rows(outer_train, np.flatnonzero(mask))
    validation = split_rows(outer_train, validation_pos)
    try:
        _, predictions = fit_and_score(spec, train, validation, params, seed)
    except FitError as e:
        return float("inf"), str(e)
    return _score(selection_metric, validation.targets, predictions), None


class SearchResult(BaseModel):
    """Outcome of one outer fold for one model.

    Attributes:
        model: The EstimatorSpec name.
        outer_fold: Index of the outer fold.
        inner_scores: Mean inner-validation score of every grid point, None when a fit failed.
        best_index: Enumeration index of the winning grid point.
        best_params: The winning hyperparameters.
        best_score: The winner's mean inner-validation score.
        metrics: MAE / MSE of the refit winner on the outer test fold.
        failures: One message per failed inner fit or refit.
    """

    model_config = ConfigDict(frozen=True)

    model: str
    outer_fold: int
    n_train: int
    n_test: int
    inner_scores: list[Optional[float]]
    best_index: int
    best_params: dict[str, Any]
    best_score: float
    metrics: Optional[MetricPair] = None
    failures: list[str] = Field(default_factory=list)


def _reportable(scores: list[float]) -> list[Optional[float]]:
    return [s if np.isfinite(s) else None for s in scores]


def _select(
    spec: EstimatorSpec, outer_fold: int, points: Sequence[GridPoint], scores: list[float]
) -> int:
    finite = [s for s in scores if np.isfinite(s)]
    if not finite:
        raise AllFitsFailedError(
            f"Every grid point of {spec.name} failed in outer fold {outer_fold}."
        )
    # strict < keeps the first of tied scores
    best = 0
    for g in range(1, len(points)):
        if scores[g] < scores[best]:
            best = g
    return best


def _run_inner(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    outer_folds: Sequence[int],
    seed: int,
    selection_metric: SelectionMetric,
    n_jobs: int,
) -> dict[int, tuple[list[float], list[str]]]:
    points = spec.grid_points()
    outer_sets = {i: split_rows(data, plan.outer_train(i)) for i in outer_folds}
    coordinates = [
        (i, g, j)
        for i in outer_folds
        for g in range(len(points))
        for j in range(plan.inner_k)
    ]
    for i in outer_folds:
        test = set(plan.outer_folds[i])
        for j in range(plan.inner_k):
            if test.intersection(plan.inner_folds[i][j]):
                raise LeakageError(
                    f"Inner fold {j} of outer fold {i} contains outer-test rows."
                )
    results = Parallel(n_jobs=n_jobs)(
        delayed(_inner_item)(
            spec,
            outer_sets[i],
            plan.inner_validation(i, j),
            points[g].params,
            item_seed(seed, spec.name, i, g, j),
            selection_metric,
        )
        for i, g, j in coordinates
    )
    assembled: dict[int, tuple[list[float], list[str]]] = {}
    by_coordinate = dict(zip(coordinates, results))
    for i in outer_folds:
        scores, failures = [], []
        for g, point in enumerate(points):
            fold_scores = []
            for j in range(plan.inner_k):
                score, failure = by_coordinate[(i, g, j)]
                if failure is not None:
                    failures.append(
                        f"outer fold {i}, grid point {g} ({point}), inner fold {j}: {failure}"
                    )
                    logger.warning(
                        "%s fit failed (outer %d, grid %d, inner %d): %s",
                        spec.name, i, g, j, failure,
                    )
                fold_scores.append(score)
            scores.append(float(np.mean(fold_scores)))
        assembled[i] = (scores, failures)
    return assembled


def inner_select(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    outer_fold: int,
    seed: int = 0,
    selection_metric: SelectionMetric = "mse",
    n_jobs: int = 1,
) -> SearchResult:
    """Scores every grid point on the inner folds of one outer fold and picks the lowest mean score.

    Ties go to the earliest grid point. A failed fit scores +inf for its grid
    point; an all-failed grid raises AllFitsFailedError.
    """
    points = spec.grid_points()
    scores, failures = _run_inner(
        spec, data, plan, [outer_fold], seed, selection_metric, n_jobs
    )[outer_fold]
    best = _select(spec, outer_fold, points, scores)
    return SearchResult(
        model=spec.name,
        outer_fold=outer_fold,
        n_train=int(plan.outer_train(outer_fold).size),
        n_test=len(plan.outer_folds[outer_fold]),
        inner_scores=_reportable(scores),
        best_index=best,
        best_params=points[best].params,
        best_score=scores[best],
        failures=failures,
    )


def _refit_item(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    outer_fold: int,
    ranking: list[int],
    points: Sequence[GridPoint],
    seed: int,
) -> tuple[int, Optional[MetricPair], list[str]]:
    train = split_rows(data, plan.outer_train(outer_fold))
    test = split_rows(data, plan.outer_test(outer_fold))
    failures = []
    for g in ranking:
        try:
            _, predictions = fit_and_score(
                spec,
                train,
                test,
                points[g].params,
                item_seed(seed, spec.name, outer_fold, g, plan.inner_k),
            )
        except FitError as e:
            failures.append(f"outer fold {outer_fold}, refit of grid point {g}: {e}")
            continue
        return g, metrics.evaluate(test.targets, predictions), failures
    return -1, None, failures


def outer_evaluate(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    seed: int = 0,
    selection_metric: SelectionMetric = "mse",
    n_jobs: int = 1,
) -> list[SearchResult]:
    """Nested CV of one model: inner selection, refit on the outer training set, outer-test metrics.

    When the winner's refit fails the next best grid point is refit instead.
    """
    if plan.n != data.n:
        raise FoldPlanError(
            f"Fold plan was built for {plan.n} rows but the dataset has {data.n}."
        )
    points = spec.grid_points()
    folds = list(range(plan.outer_k))
    inner = _run_inner(spec, data, plan, folds, seed, selection_metric, n_jobs)
    rankings = {}
    for i in folds:
        scores = inner[i][0]
        _select(spec, i, points, scores)
        order = sorted(range(len(points)), key=lambda g: (scores[g], g))
        rankings[i] = [g for g in order if np.isfinite(scores[g])]
    refits = Parallel(n_jobs=n_jobs)(
        delayed(_refit_item)(spec, data, plan, i, rankings[i], points, seed) for i in folds
    )
    results = []
    for i, (best, pair, refit_failures) in zip(folds, refits):
        scores, failures = inner[i]
        if pair is None:
            raise AllFitsFailedError(
                f"Every refit of {spec.name} failed on outer fold {i}: {refit_failures}"
            )
        logger.info(
            "%s outer fold %d: grid point %d (%s), test MAE %.4f",
            spec.name, i, best, points[best], pair.mae,
        )
        results.append(
            SearchResult(
                model=spec.name,
                outer_fold=i,
                n_train=int(plan.outer_train(i).size),
                n_test=len(plan.outer_folds[i]),
                inner_scores=_reportable(scores),
                best_index=best,
                best_params=points[best].params,
                best_score=scores[best],
                metrics=pair,
                failures=failures + refit_failures,
            )
        )
    return results


class ModelSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    label: str
    family: str
    metrics: MetricPair
    diff_mae: Optional[float] = None
    diff_mse: Optional[float] = None
    folds: list[SearchResult] = Field(default_factory=list)


class EvaluationReport(BaseModel):
    """Machine-readable benchmark outcome, persisted as report.yaml.

    Holds no wall-clock content, so identical runs serialize identically.
    """

    model_config = ConfigDict(frozen=True)

    schema_version: int = REPORT_SCHEMA_VERSION
    title: str = "Nested cross validation"
    n_rows: int
    outer_k: int
    inner_k: int
    seed: int
    plan_hash: str
    selection_metric: SelectionMetric = "mse"
    best_model: Optional[str] = None
    models: list[ModelSummary]

    def model(self, name: str) -> ModelSummary:
        for summary in self.models:
            if summary.name == name:
                return summary
        raise KeyError(f"No model named {name} in the report.")


def _diff(best: float, other: float) -> float:
    if other == 0:
        return 0.0
    return metrics.relative_difference(best, other)


def rank_models(aggregates: dict[str, MetricPair]) -> tuple[str, dict[str, tuple[Optional[float], Optional[float]]]]:
    """Best model (lowest MAE, then lowest MSE, then first listed) and every model's relative differences to it.

    The best model's differences are None.
    """
    if not aggregates:
        raise ValueError("Cannot rank an empty set of models.")
    names = list(aggregates)
    best = min(names, key=lambda k: (aggregates[k].mae, aggregates[k].mse, names.index(k)))
    diffs: dict[str, tuple[Optional[float], Optional[float]]] = {}
    for name, pair in aggregates.items():
        if name == best:
            diffs[name] = (None, None)
        else:
            diffs[name] = (
                _diff(aggregates[best].mae, pair.mae),
                _diff(aggregates[best].mse, pair.mse),
            )
    return best, diffs


def summarize(
    results: dict[str, list[SearchResult]],
    specs: Sequence[EstimatorSpec],
    plan: FoldPlan,
    selection_metric: SelectionMetric = "mse",
    title: str = "Nested cross validation",
) -> EvaluationReport:
    """Aggregates fold metrics per model and fills in the relative-difference columns."""
    aggregates = {
        spec.name: metrics.aggregate_folds([r.metrics for r in results[spec.name]])
        for spec in specs
    }
    best, diffs = rank_models(aggregates)
    summaries = []
    for spec in specs:
        folds = results[spec.name]
        summaries.append(
            ModelSummary(
                name=spec.name,
                label=spec.label,
                family=spec.family,
                metrics=aggregates[spec.name],
                diff_mae=diffs[spec.name][0],
                diff_mse=diffs[spec.name][1],
                folds=folds,
            )
        )
    return EvaluationReport(
        title=title,
        n_rows=plan.n,
        outer_k=plan.outer_k,
        inner_k=plan.inner_k,
        seed=plan.seed,
        plan_hash=plan.plan_hash,
        selection_metric=selection_metric,
        best_model=best,
        models=summaries,
    )


def report_from_metrics(
    aggregates: dict[str, MetricPair], n_rows: int = 0, seed: int = 0
) -> EvaluationReport:
    """Builds a fold-less report straight from per-model aggregate metrics."""
    best, diffs = rank_models(aggregates)
    summaries = [
        ModelSummary(
            name=name,
            label=name,
            family=name,
            metrics=pair,
            diff_mae=diffs[name][0],
            diff_mse=diffs[name][1],
        )
        for name, pair in aggregates.items()
    ]
    return EvaluationReport(
        n_rows=n_rows,
        outer_k=0,
        inner_k=0,
        seed=seed,
        plan_hash="",
        best_model=best,
        models=summaries,
    )


def run_benchmark(
    specs: Sequence[EstimatorSpec],
    data: Dataset,
    outer_k: int = 6,
    inner_k: int = 4,
    seed: int = 0,
    selection_metric: SelectionMetric = "mse",
    n_jobs: int = 1,
    skip_failed: bool = False,
    timings: Optional[dict[str, float]] = None,
) -> EvaluationReport:
    """Nested CV of every model on one shared FoldPlan, aggregated into an EvaluationReport.

    With `skip_failed`, a model whose every fit failed is logged and left out
    of the report; without it the AllFitsFailedError propagates. If no model
    survives, AllFitsFailedError is raised either way. When `timings` is given
    it receives the wall time in seconds of every model.
    """
    if not specs:
        raise ValueError("run_benchmark needs at least one EstimatorSpec.")
    names = [spec.name for spec in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"Model names must be unique, received {names}.")
    plan = make_fold_plan(data.n, outer_k, inner_k, seed)
    logger.info(
        "Fold plan %s: %d rows, %d outer x %d inner folds",
        plan.plan_hash[:12], data.n, outer_k, inner_k,
    )
    results: dict[str, list[SearchResult]] = {}
    kept = []
    for spec in specs:
        started = time.perf_counter()
        try:
            results[spec.name] = outer_evaluate(
                spec, data, plan, seed, selection_metric, n_jobs
            )
        except AllFitsFailedError as e:
            if not skip_failed:
                raise
            logger.error("Dropping %s from the report: %s", spec.name, e)
            continue
        finally:
            elapsed = time.perf_counter() - started
            if timings is not None:
                timings[spec.name] = elapsed
        logger.info("%s evaluated in %.1f s", spec.name, elapsed)
        kept.append(spec)
    if not kept:
        raise AllFitsFailedError("Every model failed; nothing to report.")
    return summarize(results, kept, plan, selection_metric)


def leaky_evaluate(
    specs: Sequence[EstimatorSpec],
    data: Dataset,
    k: int = 6,
    seed: int = 0,
    selection_metric: SelectionMetric = "mse",
    n_jobs: int = 1,
) -> EvaluationReport:
    """Conventional cross validation, kept only as a baseline to contrast with nested CV.

    Features are normalized once on the whole dataset, and the same k folds
    both choose the hyperparameters and report the error of the choice, so
    the reported error is optimistically biased.
    """
    plan = make_fold_plan(data.n, k, 2, seed)
    if any(spec.normalizes for spec in specs):
        normalized = apply_normalizer(fit_normalizer(data), data)
    else:
        normalized = data
    results: dict[str, list[SearchResult]] = {}
    for spec in specs:
        points = spec.grid_points()
        source = normalized if spec.normalizes else data
        raw = spec.model_copy(update={"normalize_features": False})
        coordinates = [(g, i) for g in range(len(points)) for i in range(k)]
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(_leaky_item)(
                raw, source, plan, i, points[g].params, item_seed(seed, spec.name, i, g, 0)
            )
            for g, i in coordinates
        )
        per_point: dict[int, list[Optional[MetricPair]]] = {}
        for (g, _), pair in zip(coordinates, outcomes):
            per_point.setdefault(g, []).append(pair)
        scores = []
        for g in range(len(points)):
            pairs = per_point[g]
            if any(p is None for p in pairs):
                scores.append(float("inf"))
            else:
                agg = metrics.aggregate_folds(pairs)
                scores.append(agg.mse if selection_metric == "mse" else agg.mae)
        best = _select(spec, -1, points, scores)
        results[spec.name] = [
            SearchResult(
                model=spec.name,
                outer_fold=i,
                n_train=int(plan.outer_train(i).size),
                n_test=len(plan.outer_folds[i]),
                inner_scores=_reportable(scores),
                best_index=best,
                best_params=points[best].params,
                best_score=scores[best],
                metrics=per_point[best][i],
            )
            for i in range(k)
        ]
    return summarize(
        results, specs, plan, selection_metric, title="Conventional cross validation (leaky baseline)"
    )


def _leaky_item(
    spec: EstimatorSpec,
    data: Dataset,
    plan: FoldPlan,
    fold: int,
    params: dict[str, Any],
    seed: int,
) -> Optional[MetricPair]:
    train = split_rows(data, plan.outer_train(fold))
    test = split_rows(data, plan.outer_test(fold))
    try:
        _, predictions = fit_and_score(spec, train, test, params, seed)
    except FitError:
        return None
    return metrics.evaluate(test.targets, predictions)
