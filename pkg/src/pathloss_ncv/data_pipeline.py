"""Loading, validation, normalization and synthesis of path-loss datasets.

All zero-mean normalization state lives here: `fit_normalizer` computes the
population mean and standard deviation of each feature on a training split,
and `apply_normalizer` maps every cell to (x - mean) / std. Constant features
(std == 0) normalize to 0.
"""

import logging
import re
from pathlib import Path
from typing import Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from pathloss_ncv.exceptions import DataError
from pathloss_ncv.types import (
    DISTANCE_INDEX,
    FEATURE_NAMES,
    TARGET_NAME,
    Dataset,
    NormalizationParams,
    ProcessingType,
    SyntheticConfig,
    make_step,
)

logger = logging.getLogger(__name__)

LoadPolicy = Literal["reject", "drop"]

PUBLIC_DATASET_URL = (
    "https://github.com/charchitd/Path-Loss-Prediction-Based-on-Machine-Learning-"
    "Principle-Method-and-Data-Expansion/blob/master/Dataset/dat.csv"
)

# Accepted (normalized) header spellings for each field. The first entry is the
# canonical header written by `save_csv`.
DEFAULT_COLUMN_ALIASES: dict[str, tuple[str, ...]] = {
    "longitude": ("longitude", "lon", "long", "lng"),
    "latitude": ("latitude", "lat"),
    "elevation": ("elevation", "elev"),
    "altitude": ("altitude", "alt"),
    "clutter_height": ("clutter_height", "cluster_height", "clutter", "clutterheight"),
    "distance": ("distance", "dist", "distance_m", "distance_km"),
    TARGET_NAME: (TARGET_NAME, "pathloss", "pl", "path_loss_db"),
}

# Uniform ranges of the four signal-free synthetic features.
SYNTHETIC_FEATURE_RANGES: dict[str, tuple[float, float]] = {
    "longitude": (116.30, 116.40),
    "latitude": (39.90, 40.00),
    "elevation": (30.0, 60.0),
    "altitude": (30.0, 80.0),
    "clutter_height": (0.0, 30.0),
}


def normalize_header(header: str) -> str:
    """Lower-cases a header, strips units in brackets and joins words with `_`."""
    header = re.sub(r"\(.*?\)|\[.*?\]", "", str(header))
    header = header.strip().lower()
    header = re.sub(r"[\s\-\.]+", "_", header)
    return header.strip("_")


def _resolve_columns(
    headers: Sequence[str], mapping: Optional[dict[str, str]]
) -> dict[str, str]:
    normalized = {normalize_header(h): h for h in headers}
    mapping = mapping or {}
    unknown = sorted(set(mapping) - set(DEFAULT_COLUMN_ALIASES))
    if unknown:
        raise DataError(
            f"Column mapping refers to unknown fields {unknown}. Valid fields are {list(DEFAULT_COLUMN_ALIASES)}."
        )
    resolved = {}
    for field, aliases in DEFAULT_COLUMN_ALIASES.items():
        if field in mapping:
            candidates: tuple[str, ...] = (normalize_header(mapping[field]),)
        else:
            candidates = aliases
        match = next((normalized[c] for c in candidates if c in normalized), None)
        if match is None:
            expected = mapping.get(field, aliases[0])
            raise DataError(
                f"Missing column for field '{field}': expected a header named '{expected}'. Available headers are {list(headers)}."
            )
        resolved[field] = match
    return resolved


def load_csv(
    path: Union[str, Path],
    mapping: Optional[dict[str, str]] = None,
    policy: LoadPolicy = "reject",
    delimiter: str = ",",
) -> Dataset:
    """Loads a delimited path-loss table into a Dataset.

    Args:
        path: The delimited text file. A header row is required.
        mapping: Optional field -> header overrides. Fields not mapped are found
            through `DEFAULT_COLUMN_ALIASES`.
        policy: `reject` raises on the first invalid row; `drop` skips invalid rows
            and records how many were dropped in the LOADING processing step.
        delimiter: The cell separator.

    Returns:
        A Dataset whose row k is the k-th valid data row of the file.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Invalid path {path} provided. The file does not exist.")
    if policy not in ("reject", "drop"):
        raise DataError(f"Unknown load policy {policy}. Use 'reject' or 'drop'.")
    try:
        raw = pd.read_csv(
            path, sep=delimiter, dtype=str, keep_default_na=False, skipinitialspace=True
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DataError(f"Could not parse {path} as a delimited table: {e}") from e
    columns = _resolve_columns(list(raw.columns), mapping)
    fields = [*FEATURE_NAMES, TARGET_NAME]

    numeric = pd.DataFrame(
        {
            field: pd.to_numeric(raw[columns[field]].str.strip(), errors="coerce")
            for field in fields
        }
    )
    values = numeric.to_numpy(dtype=np.float64)
    finite = np.isfinite(values)
    with np.errstate(invalid="ignore"):
        physical = (values[:, DISTANCE_INDEX] > 0) & (values[:, -1] > 0)
    valid = finite.all(axis=1) & physical

    if policy == "reject" and not valid.all():
        row = int(np.flatnonzero(~valid)[0])
        line = row + 2  # header is line 1
        bad = [f for j, f in enumerate(fields) if not finite[row, j]]
        if bad:
            field = bad[0]
            cell = raw[columns[field]].iloc[row]
            kind = "Missing" if cell.strip() == "" else "Non-numeric"
            raise DataError(
                f"{kind} value {cell!r} in column '{columns[field]}' at line {line} of {path}."
            )
        raise DataError(
            f"Row at line {line} of {path} violates distance > 0 and path_loss > 0."
        )

    dropped_lines = (np.flatnonzero(~valid) + 2).tolist()
    kept = values[valid]
    if kept.shape[0] == 0:
        raise DataError(f"No valid rows found in {path}.")
    if dropped_lines:
        logger.warning(
            "Dropped %d invalid rows from %s (first lines: %s)",
            len(dropped_lines),
            path,
            dropped_lines[:10],
        )
    logger.info("Loaded %d rows from %s", kept.shape[0], path)
    step = make_step(
        ProcessingType.LOADING,
        "load_csv",
        "Reads a delimited path-loss table and validates every row.",
        n_rows=kept.shape[0],
        source=str(path),
        policy=policy,
        delimiter=delimiter,
        columns=columns,
        dropped_rows=len(dropped_lines),
        dropped_lines=dropped_lines,
    )
    return Dataset(
        features=kept[:, :-1],
        targets=kept[:, -1],
        processing_steps=[step],
    )


def save_csv(data: Dataset, path: Union[str, Path], delimiter: str = ",") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data.to_frame().to_csv(path, sep=delimiter, index=False)
    return path


def fit_normalizer(train: Dataset) -> NormalizationParams:
    """Fits per-feature population mean and standard deviation on `train` only."""
    features = train.features
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    # constant columns get an exact zero so the degenerate mask is reliable
    std[np.ptp(features, axis=0) == 0] = 0.0
    params = NormalizationParams(mean=mean, std=std, feature_names=train.feature_names)
    degenerate = [
        name for name, flag in zip(train.feature_names, params.degenerate_mask) if flag
    ]
    if degenerate:
        logger.warning("Degenerate (constant) features in training split: %s", degenerate)
    return params


def _check_compatible(params: NormalizationParams, data: Dataset) -> None:
    if data.features.shape[1] != params.mean.shape[0]:
        raise DataError(
            f"Normalizer was fitted on {params.mean.shape[0]} features but the dataset has {data.features.shape[1]}."
        )
    if tuple(data.feature_names) != tuple(params.feature_names):
        raise DataError(
            f"Normalizer features {list(params.feature_names)} do not match dataset features {list(data.feature_names)}."
        )


def apply_normalizer(params: NormalizationParams, data: Dataset) -> Dataset:
    """Maps every feature cell to (x - mean) / std. Targets pass through unchanged."""
    _check_compatible(params, data)
    degenerate = params.degenerate_mask
    safe_std = np.where(degenerate, 1.0, params.std)
    normalized = (data.features - params.mean) / safe_std
    normalized[:, degenerate] = 0.0
    step = make_step(
        ProcessingType.NORMALIZATION,
        "apply_normalizer",
        "Zero-mean, unit-variance feature normalization.",
        n_rows=data.n,
        degenerate_features=[
            name for name, flag in zip(params.feature_names, degenerate) if flag
        ],
    )
    return data.with_step(step, features=normalized)


def denormalize(params: NormalizationParams, data: Dataset) -> Dataset:
    """Inverse of `apply_normalizer`. Degenerate features come back as their mean."""
    _check_compatible(params, data)
    restored = data.features * params.std + params.mean
    step = make_step(
        ProcessingType.NORMALIZATION,
        "denormalize",
        "Inverse zero-mean normalization.",
        n_rows=data.n,
    )
    return data.with_step(step, features=restored)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Draws a log-distance path-loss dataset with known ground truth.

    path_loss = intercept + slope * log10(distance / 1000 m) + noise, with noise
    ~ Normal(0, noise_std^2) and distances log-uniform over `distance_range`.
    The other features are uniform over `SYNTHETIC_FEATURE_RANGES` and carry no
    signal.
    """
    rng = np.random.default_rng(cfg.seed)
    low, high = cfg.distance_range
    distance = 10 ** rng.uniform(np.log10(low), np.log10(high), cfg.n)
    columns = {}
    for name, (a, b) in SYNTHETIC_FEATURE_RANGES.items():
        columns[name] = rng.uniform(a, b, cfg.n)
    columns["distance"] = distance
    noise = rng.normal(0.0, cfg.noise_std, cfg.n)
    targets = cfg.intercept + cfg.slope * np.log10(distance / 1000.0) + noise
    step = make_step(
        ProcessingType.SYNTHESIS,
        "generate_synthetic",
        "Log-distance propagation oracle with Gaussian shadowing noise.",
        n_rows=cfg.n,
        **cfg.model_dump(mode="json"),
    )
    return Dataset(
        features=np.column_stack([columns[name] for name in FEATURE_NAMES]),
        targets=targets,
        processing_steps=[step],
    )


def synthetic_sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}.synthetic.yaml")


def save_synthetic(data: Dataset, cfg: SyntheticConfig, path: Union[str, Path]) -> Path:
    """Saves a generated dataset as CSV with its config in a sidecar YAML."""
    path = save_csv(data, path)
    with open(synthetic_sidecar_path(path), "w") as f:
        yaml.safe_dump(cfg.model_dump(mode="json"), f, sort_keys=False)
    return path


def write_synthetic(cfg: SyntheticConfig, path: Union[str, Path]) -> Dataset:
    """Generates a synthetic dataset and saves it with `save_synthetic`."""
    data = generate_synthetic(cfg)
    save_synthetic(data, cfg, path)
    return data


def split_rows(data: Dataset, indices: Sequence[int]) -> Dataset:
    """Returns the rows of `data` at `indices`, in the order given."""
    index_array = np.asarray(list(indices), dtype=np.int64)
    if index_array.size == 0:
        raise DataError("Cannot split a Dataset on an empty index list.")
    if index_array.min() < 0 or index_array.max() >= data.n:
        raise DataError(
            f"Row indices must lie in [0, {data.n - 1}], received range [{index_array.min()}, {index_array.max()}]."
        )
    if np.unique(index_array).size != index_array.size:
        raise DataError("Row indices passed to split_rows must be unique.")
    step = make_step(
        ProcessingType.SPLITTING,
        "split_rows",
        "Row subset selected by index.",
        n_rows=int(index_array.size),
    )
    return data.with_step(
        step,
        features=data.features[index_array],
        targets=data.targets[index_array],
        row_ids=data.row_ids[index_array],
    )
