"""Gradient boosting on squared loss: level-wise trees and oblivious trees.

Both variants start from the mean training target and add `learning_rate`
times one tree per round, each tree fitted to g = prediction - target with
h = 1. The oblivious variant switches to ordered boosting on larger training
sets: split search then uses gradients computed by supporting models that
never saw the row being scored.
"""

import logging
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pathloss_ncv.exceptions import HyperparameterError
from pathloss_ncv.tree_core import (
    TreeNode,
    TreeParams,
    TreeSplit,
    build_oblivious_tree,
    build_tree,
    predict_tree_batch,
    split_gains,
    tree_depth,
)
from pathloss_ncv.types import Dataset

logger = logging.getLogger(__name__)

DEFAULT_ORDERED_MIN_ROWS = 1000


class BoostedModel(BaseModel):
    """An additive tree ensemble: base_score + learning_rate * sum of tree outputs.

    Attributes:
        family: `XGBR` for level-wise trees, `CBR` for oblivious trees.
        base_score: The mean training target.
        learning_rate: Shrinkage applied to every tree.
        trees: One tree per boosting round.
        train_loss_history: Training MSE after 0, 1, ..., R rounds.
        ordered: Whether ordered boosting chose the tree structures.
    """

    model_config = ConfigDict(frozen=True)

    family: Literal["XGBR", "CBR"]
    base_score: float
    learning_rate: float
    trees: list[TreeNode]
    train_loss_history: list[float] = Field(default_factory=list)
    ordered: bool = False
    n_features: int

    @property
    def rounds(self) -> int:
        return len(self.trees)


def boosted_predict(
    model: BoostedModel, features: np.ndarray, n_trees: Optional[int] = None
) -> np.ndarray:
    """Predicts with the first `n_trees` trees (all when None).

    Trees are accumulated in training order so a prefix reproduces the
    predictions the model had after that many rounds.
    """
    features = np.atleast_2d(features)
    if n_trees is None:
        n_trees = model.rounds
    if not 0 <= n_trees <= model.rounds:
        raise ValueError(f"n_trees must lie in [0, {model.rounds}], received {n_trees}.")
    prediction = np.full(features.shape[0], model.base_score)
    for tree in model.trees[:n_trees]:
        prediction += model.learning_rate * predict_tree_batch(tree, features)
    return prediction


def _check_boosting(rounds: int, learning_rate: float) -> None:
    if rounds < 1:
        raise HyperparameterError(f"rounds must be >= 1, received {rounds}.")
    if not 0 < learning_rate <= 1:
        raise HyperparameterError(
            f"learning_rate must lie in (0, 1], received {learning_rate}."
        )


def _tree_params(**kwargs) -> TreeParams:
    try:
        return TreeParams(**kwargs)
    except ValueError as e:
        raise HyperparameterError(f"Invalid tree hyperparameters: {e}") from e


def gbt_fit(
    train: Dataset,
    rounds: int = 100,
    learning_rate: float = 0.1,
    max_depth: int = 6,
    min_samples_leaf: int = 1,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
    feature_subsample: float = 1.0,
    seed: int = 0,
) -> BoostedModel:
    """Level-wise second-order boosting."""
    _check_boosting(rounds, learning_rate)
    params = _tree_params(
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        reg_lambda=reg_lambda,
        gamma=gamma,
        feature_subsample=feature_subsample,
    )
    features = np.asarray(train.features)
    targets = np.asarray(train.targets)
    rows = np.arange(train.n)
    hessians = np.ones(train.n)
    base = float(targets.mean())
    prediction = np.full(train.n, base)
    history = [float(np.mean((prediction - targets) ** 2))]
    trees = []
    for child in np.random.SeedSequence(seed).spawn(rounds):
        round_params = params.model_copy(update={"seed": int(child.generate_state(1)[0])})
        tree = build_tree(features, rows, prediction - targets, hessians, round_params)
        prediction += learning_rate * predict_tree_batch(tree, features)
        history.append(float(np.mean((prediction - targets) ** 2)))
        trees.append(tree)
    logger.debug("Level-wise boosting: %d rounds, final train MSE %.4g", rounds, history[-1])
    return BoostedModel(
        family="XGBR",
        base_score=base,
        learning_rate=learning_rate,
        trees=trees,
        train_loss_history=history,
        n_features=features.shape[1],
    )


def oblivious_leaf_index(tree: TreeNode, features: np.ndarray) -> np.ndarray:
    """Leaf position of every row, counting leaves left to right."""
    features = np.atleast_2d(features)
    index = np.zeros(features.shape[0], dtype=np.int64)
    node = tree
    while isinstance(node, TreeSplit):
        index = 2 * index + (features[:, node.feature_index] > node.threshold)
        node = node.left
    return index


def _prefix_ladder(n: int, rng: np.random.Generator) -> tuple[list[np.ndarray], np.ndarray]:
    """Prefixes of sizes 1, 2, 4, ... of a random permutation and each row's serving prefix.

    The row at permutation position p >= 1 is served by the largest prefix of
    size 2^j <= p, which never contains it. Position 0 is served by the base
    score alone and gets serving index -1.
    """
    permutation = rng.permutation(n)
    n_models = int(np.floor(np.log2(n - 1))) + 1 if n > 1 else 0
    prefixes = [permutation[: 2**j] for j in range(n_models)]
    serving = np.full(n, -1, dtype=np.int64)
    positions = np.arange(1, n)
    serving[permutation[1:]] = np.floor(np.log2(positions)).astype(np.int64)
    return prefixes, serving


def obt_fit(
    train: Dataset,
    rounds: int = 100,
    learning_rate: float = 0.1,
    depth: int = 6,
    reg_lambda: float = 1.0,
    min_samples_leaf: int = 1,
    ordered_min_rows: int = DEFAULT_ORDERED_MIN_ROWS,
    seed: int = 0,
) -> BoostedModel:
    """Oblivious-tree boosting, ordered when the training set exceeds `ordered_min_rows` rows."""
    _check_boosting(rounds, learning_rate)
    params = _tree_params(
        max_depth=depth, min_samples_leaf=min_samples_leaf, reg_lambda=reg_lambda
    )
    features = np.asarray(train.features)
    targets = np.asarray(train.targets)
    n = train.n
    rows = np.arange(n)
    hessians = np.ones(n)
    base = float(targets.mean())
    prediction = np.full(n, base)
    history = [float(np.mean((prediction - targets) ** 2))]
    ordered = n > ordered_min_rows
    if ordered:
        prefixes, serving = _prefix_ladder(n, np.random.default_rng(seed))
        supporting = np.full((len(prefixes), n), base)
        logger.debug("Ordered boosting over %d supporting models", len(prefixes))
    trees = []
    for _ in range(rounds):
        gradients = prediction - targets
        split_gradients = None
        if ordered:
            served = np.where(
                serving >= 0, supporting[np.maximum(serving, 0), rows], base
            )
            split_gradients = served - targets
        tree = build_oblivious_tree(
            features, rows, gradients, hessians, params, split_gradients=split_gradients
        )
        prediction += learning_rate * predict_tree_batch(tree, features)
        history.append(float(np.mean((prediction - targets) ** 2)))
        trees.append(tree)
        if ordered:
            leaf = oblivious_leaf_index(tree, features)
            n_leaves = 2 ** tree_depth(tree)
            for j, prefix in enumerate(prefixes):
                residual = supporting[j, prefix] - targets[prefix]
                g = np.bincount(leaf[prefix], weights=residual, minlength=n_leaves)
                h = np.bincount(leaf[prefix], minlength=n_leaves).astype(np.float64)
                values = -g / (h + reg_lambda) if reg_lambda > 0 else -np.divide(
                    g, h, out=np.zeros_like(g), where=h > 0
                )
                supporting[j] += learning_rate * values[leaf]
    logger.debug("Oblivious boosting: %d rounds, final train MSE %.4g", rounds, history[-1])
    return BoostedModel(
        family="CBR",
        base_score=base,
        learning_rate=learning_rate,
        trees=trees,
        train_loss_history=history,
        ordered=ordered,
        n_features=features.shape[1],
    )


def boosted_importance(model: BoostedModel) -> np.ndarray:
    """Split gain per feature summed over rounds, normalized to sum to 1."""
    gains = np.zeros(model.n_features)
    for tree in model.trees:
        gains += split_gains(tree, model.n_features)
    total = gains.sum()
    return gains / total if total > 0 else gains
