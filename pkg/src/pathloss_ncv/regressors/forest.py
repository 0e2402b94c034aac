"""Bagged regression trees with per-split feature subsampling."""

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict

from pathloss_ncv.exceptions import HyperparameterError
from pathloss_ncv.tree_core import (
    TreeNode,
    TreeParams,
    build_tree,
    predict_tree_batch,
    split_gains,
)
from pathloss_ncv.types import Dataset

logger = logging.getLogger(__name__)


class ForestModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: Literal["RF"] = "RF"
    trees: list[TreeNode]
    bootstrap: bool = True
    n_features: int


def rf_fit(
    train: Dataset,
    n_trees: int = 100,
    max_depth: int = 8,
    min_samples_leaf: int = 1,
    feature_subsample: float = 1.0 / 3.0,
    seed: int = 0,
    bootstrap: bool = True,
) -> ForestModel:
    """Grows `n_trees` trees on bootstrap resamples of `train`.

    Each tree fits the raw targets (g = -y, h = 1, no regularization), so every
    leaf holds the mean target of its rows. Tree k draws its bootstrap and its
    feature subsets from the k-th child of SeedSequence(seed).
    """
    if n_trees < 1:
        raise HyperparameterError(f"n_trees must be >= 1, received {n_trees}.")
    try:
        base_params = TreeParams(
            max_depth=max_depth,
            min_samples_leaf=min_samples_leaf,
            feature_subsample=feature_subsample,
        )
    except ValueError as e:
        raise HyperparameterError(f"Invalid random forest hyperparameters: {e}") from e
    n = train.n
    gradients = -np.asarray(train.targets)
    hessians = np.ones(n)
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
        params = base_params.model_copy(update={"seed": int(rng.integers(2**32))})
        trees.append(build_tree(train.features, rows, gradients, hessians, params))
    logger.debug("Grew %d trees (bootstrap=%s)", n_trees, bootstrap)
    return ForestModel(trees=trees, bootstrap=bootstrap, n_features=train.features.shape[1])


def rf_predict(model: ForestModel, features: np.ndarray) -> np.ndarray:
    """Mean of the tree predictions."""
    total = np.zeros(np.atleast_2d(features).shape[0])
    for tree in model.trees:
        total += predict_tree_batch(tree, features)
    return total / len(model.trees)


def feature_importance(model: ForestModel) -> np.ndarray:
    """Split gain per feature summed over trees, normalized to sum to 1."""
    gains = sum(split_gains(tree, model.n_features) for tree in model.trees)
    total = gains.sum()
    return gains / total if total > 0 else gains
