import datetime
import math
from enum import Enum
from typing import Any, Optional

import numpy as np
import pandas as pd
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

FEATURE_NAMES: tuple[str, ...] = (
    "longitude",
    "latitude",
    "elevation",
    "altitude",
    "clutter_height",
    "distance",
)
TARGET_NAME = "path_loss"
N_FEATURES = len(FEATURE_NAMES)
DISTANCE_INDEX = FEATURE_NAMES.index("distance")

PACKAGE_REFERENCE = "pathloss-ncv"


def serialize_array(array: np.ndarray) -> list:
    """Serializes a numpy array to (nested) python lists of builtin scalars.

    Args:
        array: The array to serialize.

    Returns:
        A list (of lists) holding the array values.
    """
    return np.asarray(array).tolist()


def coerce_array(value: Any, dtype: Any = np.float64, ndim: int = 1) -> np.ndarray:
    """Builds a read-only numpy array from a list, tuple, pandas object or array."""
    if isinstance(value, (pd.Series, pd.DataFrame)):
        value = value.to_numpy()
    array = np.array(value, dtype=dtype)
    if array.ndim != ndim:
        raise ValueError(
            f"Expected an array with {ndim} dimension(s), received shape {array.shape}."
        )
    array.setflags(write=False)
    return array


class Parameters(BaseModel):
    model_config = ConfigDict(extra="allow")

    def as_dict(self):
        return self.model_dump()


class ProcessingType(Enum):
    LOADING = "loading"
    SYNTHESIS = "synthesis"
    SPLITTING = "splitting"
    NORMALIZATION = "normalization"
    OTHER = "other"


class FunctionInfo(BaseModel):
    name: str
    version: str
    author: str
    reference: str


class ProcessingStep(BaseModel):
    type: ProcessingType
    description: str
    run_datetime: datetime.datetime
    function_info: FunctionInfo
    parameters: Optional[Parameters] = None
    n_rows: int = Field(ge=0)

    def __str__(self) -> str:
        return f"{self.type.value} step on {self.run_datetime.strftime('%Y-%m-%d %H:%M:%S')} using function `{self.function_info.name}`. Result has {self.n_rows} rows"


def make_step(
    type: ProcessingType,
    function_name: str,
    description: str,
    n_rows: int,
    **parameters: Any,
) -> ProcessingStep:
    return ProcessingStep(
        type=type,
        description=description,
        run_datetime=datetime.datetime.now(),
        function_info=FunctionInfo(
            name=function_name,
            version="0.1.0",
            author="Jean-David Therrien",
            reference=PACKAGE_REFERENCE,
        ),
        parameters=Parameters(**parameters),
        n_rows=n_rows,
    )


class Sample(BaseModel):
    """One drive-test measurement: six input features and the path loss in dB."""

    model_config = ConfigDict(frozen=True)

    longitude: float
    latitude: float
    elevation: float
    altitude: float
    clutter_height: float
    distance: float
    path_loss: float

    @model_validator(mode="after")
    def check_physical(self) -> "Sample":
        for name, value in self.model_dump().items():
            if not math.isfinite(value):
                raise ValueError(f"Field {name} must be finite, received {value}.")
        if self.distance <= 0:
            raise ValueError(f"distance must be > 0, received {self.distance}.")
        if self.path_loss <= 0:
            raise ValueError(f"path_loss must be > 0, received {self.path_loss}.")
        return self

    def feature_vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES])


class Dataset(BaseModel):
    """Column-major feature matrix with its path-loss target vector.

    Attributes:
        features (np.ndarray): N x 6 matrix of finite reals, columns in `feature_names` order.
        targets (np.ndarray): length-N vector of path loss values in dB.
        feature_names (tuple[str, ...]): the six feature labels.
        row_ids (np.ndarray): the original row number of each row, carried through splits.
        processing_steps (list[ProcessingStep]): provenance of the dataset.

    Datasets are immutable: the arrays are flagged read-only and the model is frozen.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES
    row_ids: Optional[np.ndarray] = None
    processing_steps: list[ProcessingStep] = Field(default_factory=list)

    @field_validator("features", mode="before")
    def features_to_array(cls, v):
        return coerce_array(v, np.float64, ndim=2)

    @field_validator("targets", mode="before")
    def targets_to_array(cls, v):
        return coerce_array(v, np.float64, ndim=1)

    @field_validator("row_ids", mode="before")
    def row_ids_to_array(cls, v):
        if v is None:
            return v
        return coerce_array(v, np.int64, ndim=1)

    @field_serializer("features", "targets", "row_ids")
    def arrays_to_lists(self, array: Optional[np.ndarray]):
        if array is None:
            return None
        return serialize_array(array)

    @model_validator(mode="after")
    def check_shapes(self) -> "Dataset":
        n_rows, n_cols = self.features.shape
        if n_rows < 1:
            raise ValueError("A Dataset must hold at least one row.")
        if n_cols != len(self.feature_names):
            raise ValueError(
                f"Feature matrix has {n_cols} columns but {len(self.feature_names)} feature names were given."
            )
        if self.targets.shape[0] != n_rows:
            raise ValueError(
                f"Feature matrix has {n_rows} rows but the target vector has {self.targets.shape[0]}."
            )
        if not np.all(np.isfinite(self.features)) or not np.all(
            np.isfinite(self.targets)
        ):
            raise ValueError("Datasets may not contain NaN or infinite values.")
        if self.row_ids is None:
            self.__dict__["row_ids"] = coerce_array(np.arange(n_rows), np.int64)
        elif self.row_ids.shape[0] != n_rows:
            raise ValueError(
                f"Received {self.row_ids.shape[0]} row ids for {n_rows} rows."
            )
        return self

    @property
    def n(self) -> int:
        return int(self.targets.shape[0])

    def sample(self, i: int) -> Sample:
        values = dict(zip(self.feature_names, self.features[i].tolist()))
        return Sample(**values, path_loss=float(self.targets[i]))

    @staticmethod
    def from_samples(samples: list[Sample]) -> "Dataset":
        if not samples:
            raise ValueError("Cannot build a Dataset from an empty list of samples.")
        return Dataset(
            features=np.vstack([s.feature_vector() for s in samples]),
            targets=np.array([s.path_loss for s in samples]),
        )

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[TARGET_NAME] = self.targets
        return frame

    def with_step(self, step: ProcessingStep, **updates: Any) -> "Dataset":
        fields = {
            "features": self.features,
            "targets": self.targets,
            "feature_names": self.feature_names,
            "row_ids": self.row_ids,
            "processing_steps": [*self.processing_steps, step],
        }
        fields.update(updates)
        return Dataset(**fields)

    def last_step(self, type: ProcessingType) -> Optional[ProcessingStep]:
        for step in reversed(self.processing_steps):
            if step.type == type:
                return step
        return None

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return False
        if self.feature_names != other.feature_names:
            return False
        if self.features.shape != other.features.shape:
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if not np.array_equal(self.targets, other.targets):
            return False
        return np.array_equal(self.row_ids, other.row_ids)

    def __str__(self):
        return f"Dataset with {self.n} rows, features={list(self.feature_names)}"


class NormalizationParams(BaseModel):
    """Per-feature zero-mean normalization state, fitted on one training split."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mean: np.ndarray
    std: np.ndarray
    feature_names: tuple[str, ...] = FEATURE_NAMES

    @field_validator("mean", "std", mode="before")
    def to_array(cls, v):
        return coerce_array(v, np.float64, ndim=1)

    @field_serializer("mean", "std")
    def arrays_to_lists(self, array: np.ndarray):
        return serialize_array(array)

    @model_validator(mode="after")
    def check_lengths(self) -> "NormalizationParams":
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have the same length.")
        if self.mean.shape[0] != len(self.feature_names):
            raise ValueError("mean and std must have one entry per feature.")
        if np.any(self.std < 0):
            raise ValueError("Standard deviations cannot be negative.")
        return self

    @property
    def degenerate_mask(self) -> np.ndarray:
        return self.std == 0


class SyntheticConfig(BaseModel):
    """Log-distance propagation oracle used to produce data with known ground truth."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    intercept: float = 128.1
    slope: float = 37.6
    noise_std: float = Field(default=2.0, ge=0)
    n: int = Field(default=2000, ge=1)
    distance_range: tuple[float, float] = (50.0, 2000.0)
    seed: int = 0

    @field_validator("distance_range")
    def check_range(cls, v):
        low, high = v
        if low <= 0:
            raise ValueError(f"distance_range minimum must be > 0, received {low}.")
        if high < low:
            raise ValueError(
                f"distance_range maximum {high} is lower than its minimum {low}."
            )
        return v


class PredictionSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    actual: np.ndarray
    predicted: np.ndarray

    @field_validator("actual", "predicted", mode="before")
    def to_array(cls, v):
        return coerce_array(v, np.float64, ndim=1)

    @model_validator(mode="after")
    def check_pairs(self) -> "PredictionSet":
        if self.actual.shape != self.predicted.shape:
            raise ValueError(
                f"actual has {self.actual.shape[0]} values but predicted has {self.predicted.shape[0]}."
            )
        if self.actual.shape[0] < 1:
            raise ValueError("A PredictionSet needs at least one value.")
        if not (np.all(np.isfinite(self.actual)) and np.all(np.isfinite(self.predicted))):
            raise ValueError("PredictionSet values must be finite.")
        return self

    @property
    def residuals(self) -> np.ndarray:
        return self.actual - self.predicted


class MetricPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    mae: float = Field(ge=0)
    mse: float = Field(ge=0)

    @model_validator(mode="after")
    def check_jensen(self) -> "MetricPair":
        if self.mae > math.sqrt(self.mse) * (1 + 1e-9) + 1e-12:
            raise ValueError(
                f"MAE {self.mae} cannot exceed the square root of MSE {self.mse}."
            )
        return self
