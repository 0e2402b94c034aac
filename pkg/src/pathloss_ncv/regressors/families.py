"""Model families, their hyperparameter schemas and the estimator registry.

Every family exposes the same two-call contract:

    model = family.fit(train, hyperparams, seed)
    predictions = family.predict(model, features)

Built-in families are registered at import time. `register_family` adds
custom estimators (for instance instrumented ones used to audit leakage).
"""

import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Annotated, Any, Callable, Optional, Protocol, Sequence, Union

import numpy as np
import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    TypeAdapter,
    ValidationError,
    field_validator,
    model_validator,
)

from pathloss_ncv.exceptions import HyperparameterError
from pathloss_ncv.regressors.ann import AnnModel, ann_fit, ann_predict
from pathloss_ncv.regressors.boosting import (
    DEFAULT_ORDERED_MIN_ROWS,
    BoostedModel,
    boosted_predict,
    gbt_fit,
    obt_fit,
)
from pathloss_ncv.regressors.forest import ForestModel, rf_fit, rf_predict
from pathloss_ncv.regressors.svr import SvrModel, svr_fit, svr_predict
from pathloss_ncv.types import Dataset

logger = logging.getLogger(__name__)

# Column order of the published comparison table.
TABLE_ORDER: tuple[str, ...] = ("SVR", "CBR", "ANN", "XGBR", "RF")
DISPLAY_NAMES: dict[str, str] = {"RF": "RFR"}


def display_name(family: str) -> str:
    return DISPLAY_NAMES.get(family, family)


def family_name(name: str) -> str:
    """Maps a display name such as `RFR` back to its family; other names pass through."""
    aliases = {label: family for family, label in DISPLAY_NAMES.items()}
    return aliases.get(name, name)


class SvrHyperparams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    C: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=0.1, ge=0)
    rbf_gamma: float = Field(default=1.0 / 6.0, gt=0)
    tol: float = Field(default=1e-3, gt=0)
    max_iter: Optional[int] = Field(default=None, ge=1)


class AnnHyperparams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    hidden_units: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=0.01, gt=0)
    epochs: int = Field(default=200, ge=0)
    batch_size: int = Field(default=32, ge=1)


class ForestHyperparams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n_trees: int = Field(default=100, ge=1)
    max_depth: int = Field(default=8, ge=1)
    min_samples_leaf: int = Field(default=1, ge=1)
    feature_subsample: float = Field(default=1.0 / 3.0, gt=0, le=1)


class XgbHyperparams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rounds: int = Field(default=100, ge=1)
    learning_rate: float = Field(default=0.1, gt=0, le=1)
    max_depth: int = Field(default=6, ge=1)
    min_samples_leaf: int = Field(default=1, ge=1)
    reg_lambda: float = Field(default=1.0, ge=0)
    gamma: float = Field(default=0.0, ge=0)
    feature_subsample: float = Field(default=1.0, gt=0, le=1)


class CbrHyperparams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rounds: int = Field(default=100, ge=1)
    learning_rate: float = Field(default=0.1, gt=0, le=1)
    depth: int = Field(default=6, ge=1)
    reg_lambda: float = Field(default=1.0, ge=0)
    min_samples_leaf: int = Field(default=1, ge=1)
    ordered_min_rows: int = Field(default=DEFAULT_ORDERED_MIN_ROWS, ge=0)


class Estimator(Protocol):
    def fit(self, train: Dataset, hyperparams: dict[str, Any], seed: int) -> Any: ...

    def predict(self, model: Any, features: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ModelFamily:
    """One registered estimator family.

    Attributes:
        name: Registry key, also the label used in reports.
        hyperparams: pydantic schema validating one grid point.
        default_grid: Candidate values per hyperparameter.
        normalize_features: Whether features are normalized before fitting by default.
        fit_fn: Called as fit_fn(train, seed=seed, **hyperparams).
        predict_fn: Called as predict_fn(model, features).
    """

    name: str
    hyperparams: type[BaseModel]
    default_grid: dict[str, list[Any]]
    normalize_features: bool
    fit_fn: Callable[..., Any]
    predict_fn: Callable[[Any, np.ndarray], np.ndarray]

    def validate(self, hyperparams: dict[str, Any]) -> BaseModel:
        try:
            return self.hyperparams(**hyperparams)
        except ValidationError as e:
            raise HyperparameterError(
                f"Invalid hyperparameters for {self.name}: {e}"
            ) from e

    def fit(self, train: Dataset, hyperparams: dict[str, Any], seed: int) -> Any:
        validated = self.validate(hyperparams)
        return self.fit_fn(train, seed=seed, **validated.model_dump())

    def predict(self, model: Any, features: np.ndarray) -> np.ndarray:
        return np.asarray(self.predict_fn(model, features), dtype=np.float64)


_REGISTRY: dict[str, ModelFamily] = {}


def register_family(family: ModelFamily, replace: bool = False) -> ModelFamily:
    if family.name in _REGISTRY and not replace:
        raise ValueError(f"A model family named {family.name} is already registered.")
    _REGISTRY[family.name] = family
    return family


def unregister_family(name: str) -> None:
    _REGISTRY.pop(name, None)


def get_family(name: str) -> ModelFamily:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise HyperparameterError(
            f"Unknown model family {name}. Registered families are {list(_REGISTRY)}."
        ) from None


def registered_families() -> list[str]:
    return list(_REGISTRY)


register_family(
    ModelFamily(
        name="SVR",
        hyperparams=SvrHyperparams,
        default_grid={"C": [1.0, 10.0, 100.0], "epsilon": [0.1, 1.0], "rbf_gamma": [0.1, 1.0 / 6.0]},
        normalize_features=True,
        fit_fn=svr_fit,
        predict_fn=svr_predict,
    )
)
register_family(
    ModelFamily(
        name="CBR",
        hyperparams=CbrHyperparams,
        default_grid={"depth": [4, 6], "learning_rate": [0.1, 0.3], "rounds": [100]},
        normalize_features=False,
        fit_fn=obt_fit,
        predict_fn=boosted_predict,
    )
)
register_family(
    ModelFamily(
        name="ANN",
        hyperparams=AnnHyperparams,
        default_grid={"hidden_units": [8, 16, 32]},
        normalize_features=True,
        fit_fn=ann_fit,
        predict_fn=ann_predict,
    )
)
register_family(
    ModelFamily(
        name="XGBR",
        hyperparams=XgbHyperparams,
        default_grid={"max_depth": [3, 5], "learning_rate": [0.1, 0.3], "rounds": [100]},
        normalize_features=False,
        fit_fn=gbt_fit,
        predict_fn=boosted_predict,
    )
)
register_family(
    ModelFamily(
        name="RF",
        hyperparams=ForestHyperparams,
        default_grid={"n_trees": [50], "max_depth": [8, 12], "feature_subsample": [0.5, 1.0]},
        normalize_features=False,
        fit_fn=rf_fit,
        predict_fn=rf_predict,
    )
)


class GridPoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: int = Field(ge=0)
    params: dict[str, Any]

    def __str__(self) -> str:
        return ", ".join(f"{k}={v}" for k, v in self.params.items())


class EstimatorSpec(BaseModel):
    """A model family with the hyperparameter grid searched for it.

    Attributes:
        name: Label used in reports; defaults to the family name.
        family: A registered family.
        grid: Candidate values per hyperparameter; missing keys use the family defaults.
        normalize_features: Overrides the family's normalization default when set.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = ""
    family: str
    grid: dict[str, list[Any]] = Field(default_factory=dict)
    normalize_features: Optional[bool] = None

    @field_validator("family")
    def check_family(cls, v):
        if v not in _REGISTRY:
            raise ValueError(
                f"Unknown model family {v}. Registered families are {list(_REGISTRY)}."
            )
        return v

    @model_validator(mode="after")
    def check_grid(self) -> "EstimatorSpec":
        if not self.name:
            self.__dict__["name"] = self.family
        family = _REGISTRY[self.family]
        if not self.grid:
            self.__dict__["grid"] = dict(family.default_grid)
        allowed = set(family.hyperparams.model_fields)
        unknown = sorted(set(self.grid) - allowed)
        if unknown:
            raise ValueError(
                f"Grid for {self.name} has unknown hyperparameters {unknown}. Allowed: {sorted(allowed)}."
            )
        for key, values in self.grid.items():
            if len(values) == 0:
                raise ValueError(f"Grid entry {key} for {self.name} is empty.")
        for point in self.grid_points():
            try:
                family.hyperparams(**point.params)
            except ValidationError as e:
                raise ValueError(
                    f"Grid point {point} for {self.name} is invalid: {e}"
                ) from e
        return self

    @property
    def model_family(self) -> ModelFamily:
        return get_family(self.family)

    @property
    def normalizes(self) -> bool:
        if self.normalize_features is None:
            return self.model_family.normalize_features
        return self.normalize_features

    @property
    def label(self) -> str:
        return display_name(self.name)

    def grid_points(self) -> list[GridPoint]:
        """Cartesian product of the grid, last key varying fastest."""
        keys = list(self.grid)
        combos = itertools.product(*(self.grid[k] for k in keys))
        return [
            GridPoint(index=i, params=dict(zip(keys, combo)))
            for i, combo in enumerate(combos)
        ]

    def fit(self, train: Dataset, hyperparams: dict[str, Any], seed: int) -> Any:
        return self.model_family.fit(train, hyperparams, seed)

    def predict(self, model: Any, features: np.ndarray) -> np.ndarray:
        return self.model_family.predict(model, features)


def order_specs(specs: Sequence[EstimatorSpec]) -> list[EstimatorSpec]:
    """Built-in families in table order first, then anything else as given."""
    rank = {family: i for i, family in enumerate(TABLE_ORDER)}
    indexed = list(enumerate(specs))
    indexed.sort(key=lambda item: (rank.get(item[1].family, len(rank)), item[0]))
    return [spec for _, spec in indexed]


def default_estimators(families: Optional[list[str]] = None) -> list[EstimatorSpec]:
    """One spec per built-in family, in table order."""
    names = list(TABLE_ORDER) if families is None else families
    return [EstimatorSpec(family=name) for name in names]


FittedModel = Annotated[
    Union[SvrModel, AnnModel, ForestModel, BoostedModel], Field(discriminator="family")
]
_FITTED_ADAPTER: TypeAdapter = TypeAdapter(FittedModel)


def save_model(model: BaseModel, path: Union[str, Path]) -> Path:
    """Writes a fitted built-in model to YAML."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(model.model_dump(mode="json"), f, sort_keys=False)
    return path


def load_model(path: Union[str, Path]) -> BaseModel:
    with open(path, "r") as f:
        data = yaml.safe_load(f)
    return _FITTED_ADAPTER.validate_python(data)
