"""Second-order regression trees shared by the random forest and both boosters.

Trees are grown from per-row gradients g and hessians h. A split of a node
into L and R scores

    gain = 1/2 * [G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda)
                  - (G_L + G_R)^2 / (H_L + H_R + lambda)] - gamma

and a leaf predicts -G / (H + lambda). With squared loss (h = 1, g = prediction
- target) and lambda = 0 a leaf predicts the mean residual of its rows, which
is how the forest grows plain CART trees on raw targets.
"""

import logging
from typing import Annotated, Iterator, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from pathloss_ncv.types import N_FEATURES

logger = logging.getLogger(__name__)

# gains within this relative distance of zero are rounding noise, not signal
GAIN_TOLERANCE = 1e-10


class TreeParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_depth: int = Field(default=6, ge=1)
    min_samples_leaf: int = Field(default=1, ge=1)
    reg_lambda: float = Field(default=0.0, ge=0)
    gamma: float = Field(default=0.0, ge=0)
    feature_subsample: float = Field(default=1.0, gt=0, le=1)
    seed: int = 0


class SplitCandidate(BaseModel):
    model_config = ConfigDict(frozen=True)

    feature_index: int = Field(ge=0)
    threshold: float
    gain: float


class TreeLeaf(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["leaf"] = "leaf"
    value: float
    sum_gradient: float
    sum_hessian: float
    count: int = Field(ge=1)


class TreeSplit(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["split"] = "split"
    feature_index: int = Field(ge=0)
    threshold: float
    gain: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Annotated[Union[TreeSplit, TreeLeaf], Field(discriminator="kind")]
TreeSplit.model_rebuild()


def _check_lengths(features: np.ndarray, gradients: np.ndarray, hessians: np.ndarray):
    if len(gradients) != len(hessians):
        raise ValueError(
            f"Received {len(gradients)} gradients but {len(hessians)} hessians."
        )
    if len(gradients) != features.shape[0]:
        raise ValueError(
            f"Received {len(gradients)} gradients for {features.shape[0]} feature rows."
        )


def _score(g: np.ndarray, h: np.ndarray, reg_lambda: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        score = np.square(g) / (h + reg_lambda)
    return np.where(np.isfinite(score), score, 0.0)


def _midpoints(low: np.ndarray, high: np.ndarray) -> np.ndarray:
    mid = (low + high) / 2
    # adjacent floats: the midpoint may round up onto `high`
    return np.where(mid < high, mid, low)


def best_split(
    features: np.ndarray,
    rows: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    params: TreeParams,
    feature_mask: Optional[Sequence[int]] = None,
) -> Optional[SplitCandidate]:
    """Exact greedy split search over midpoints of consecutive distinct values.

    Args:
        features: The full feature matrix; `rows` index into it.
        rows: Row indices of the node being split.
        gradients: Per-row gradients, aligned with `features`.
        hessians: Per-row hessians, aligned with `features`.
        params: Regularization (`reg_lambda`, `gamma`) and `min_samples_leaf`.
        feature_mask: Features allowed for this split; all features when None.

    Returns:
        The split with the highest positive gain, ties going to the lowest
        feature index and then the lowest threshold, or None.
    """
    _check_lengths(features, gradients, hessians)
    rows = np.asarray(rows)
    m = rows.shape[0]
    msl = params.min_samples_leaf
    if m < 2 * msl:
        return None
    if feature_mask is None:
        feature_mask = range(features.shape[1])
    g = gradients[rows]
    h = hessians[rows]
    total_g = g.sum()
    total_h = h.sum()
    parent = float(_score(np.array(total_g), np.array(total_h), params.reg_lambda))
    tolerance = GAIN_TOLERANCE * (abs(parent) + 1.0)

    best: Optional[SplitCandidate] = None
    positions = np.arange(msl - 1, m - msl)
    for j in sorted(feature_mask):
        x = features[rows, j]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        k = positions[xs[positions] < xs[positions + 1]]
        if k.size == 0:
            continue
        g_left = np.cumsum(g[order])[k]
        h_left = np.cumsum(h[order])[k]
        gain = (
            0.5
            * (
                _score(g_left, h_left, params.reg_lambda)
                + _score(total_g - g_left, total_h - h_left, params.reg_lambda)
                - parent
            )
            - params.gamma
        )
        i = int(np.argmax(gain))
        if gain[i] <= tolerance:
            continue
        if best is None or gain[i] > best.gain:
            threshold = _midpoints(xs[k[i]], xs[k[i] + 1])
            best = SplitCandidate(
                feature_index=j, threshold=float(threshold), gain=float(gain[i])
            )
    return best


def _leaf(g: np.ndarray, h: np.ndarray, reg_lambda: float) -> TreeLeaf:
    sum_g = float(g.sum())
    sum_h = float(h.sum())
    return TreeLeaf(
        value=-sum_g / (sum_h + reg_lambda),
        sum_gradient=sum_g,
        sum_hessian=sum_h,
        count=int(g.shape[0]),
    )


def _feature_draw(params: TreeParams, rng: np.random.Generator, n_features: int):
    if params.feature_subsample >= 1.0:
        return list(range(n_features))
    k = max(1, int(np.floor(params.feature_subsample * n_features + 0.5)))
    return sorted(rng.choice(n_features, size=k, replace=False).tolist())


def build_tree(
    features: np.ndarray,
    rows: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    params: TreeParams,
) -> TreeNode:
    """Greedy depth-first tree growth on `best_split`."""
    _check_lengths(features, gradients, hessians)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("Cannot build a tree on an empty row set.")
    rng = np.random.default_rng(params.seed)
    n_features = features.shape[1]

    def grow(node_rows: np.ndarray, depth: int) -> TreeNode:
        leaf = _leaf(gradients[node_rows], hessians[node_rows], params.reg_lambda)
        if depth >= params.max_depth or node_rows.size < 2 * params.min_samples_leaf:
            return leaf
        mask = _feature_draw(params, rng, n_features)
        split = best_split(features, node_rows, gradients, hessians, params, mask)
        if split is None:
            return leaf
        go_left = features[node_rows, split.feature_index] <= split.threshold
        left = grow(node_rows[go_left], depth + 1)
        right = grow(node_rows[~go_left], depth + 1)
        return TreeSplit(
            feature_index=split.feature_index,
            threshold=split.threshold,
            gain=split.gain,
            left=left,
            right=right,
        )

    return grow(rows, 0)


def build_oblivious_tree(
    features: np.ndarray,
    rows: np.ndarray,
    gradients: np.ndarray,
    hessians: np.ndarray,
    params: TreeParams,
    split_gradients: Optional[np.ndarray] = None,
) -> TreeNode:
    """Grows a tree whose nodes at one depth all share one (feature, threshold).

    Each level picks the condition maximizing the summed gain of all nodes on
    that level; every child must keep at least `min_samples_leaf` rows. The
    structure is searched with `split_gradients` when given (ordered boosting)
    while leaf values always come from `gradients`.
    """
    _check_lengths(features, gradients, hessians)
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("Cannot build a tree on an empty row set.")
    search_g = gradients if split_gradients is None else split_gradients
    _check_lengths(features, search_g, hessians)
    rng = np.random.default_rng(params.seed)
    msl = params.min_samples_leaf
    lam = params.reg_lambda

    levels: list[tuple[int, float, list[float]]] = []
    nodes = [rows]
    for _ in range(params.max_depth):
        if any(node.size < 2 * msl for node in nodes):
            break
        parent_scale = sum(
            float(_score(np.array(search_g[n].sum()), np.array(hessians[n].sum()), lam))
            for n in nodes
        )
        mask = _feature_draw(params, rng, features.shape[1])
        best: Optional[tuple[float, int, float, list[float]]] = None
        for j in mask:
            values = np.unique(features[rows, j])
            if values.size < 2:
                continue
            candidates = _midpoints(values[:-1], values[1:])
            total = np.full(candidates.size, -params.gamma)
            valid = np.ones(candidates.size, dtype=bool)
            node_gains = []
            for node in nodes:
                x = features[node, j]
                order = np.argsort(x, kind="stable")
                xs = x[order]
                g_cum = np.concatenate([[0.0], np.cumsum(search_g[node][order])])
                h_cum = np.concatenate([[0.0], np.cumsum(hessians[node][order])])
                n_left = np.searchsorted(xs, candidates, side="right")
                valid &= (n_left >= msl) & (node.size - n_left >= msl)
                g_left, h_left = g_cum[n_left], h_cum[n_left]
                g_all, h_all = search_g[node].sum(), hessians[node].sum()
                gain = 0.5 * (
                    _score(g_left, h_left, lam)
                    + _score(g_all - g_left, h_all - h_left, lam)
                    - _score(np.array(g_all), np.array(h_all), lam)
                )
                node_gains.append(gain)
                total += gain
            if not valid.any():
                continue
            total = np.where(valid, total, -np.inf)
            i = int(np.argmax(total))
            if total[i] <= GAIN_TOLERANCE * (parent_scale + 1.0):
                continue
            if best is None or total[i] > best[0]:
                best = (
                    float(total[i]),
                    j,
                    float(candidates[i]),
                    [float(ng[i]) for ng in node_gains],
                )
        if best is None:
            break
        _, feature_index, threshold, gains = best
        levels.append((feature_index, threshold, gains))
        next_nodes = []
        for node in nodes:
            go_left = features[node, feature_index] <= threshold
            next_nodes.extend([node[go_left], node[~go_left]])
        nodes = next_nodes

    leaves = [_leaf(gradients[node], hessians[node], lam) for node in nodes]

    def assemble(depth: int, position: int) -> TreeNode:
        if depth == len(levels):
            return leaves[position]
        feature_index, threshold, gains = levels[depth]
        return TreeSplit(
            feature_index=feature_index,
            threshold=threshold,
            gain=gains[position],
            left=assemble(depth + 1, 2 * position),
            right=assemble(depth + 1, 2 * position + 1),
        )

    return assemble(0, 0)


def predict_tree(tree: TreeNode, features: np.ndarray) -> float:
    """Routes one feature vector to its leaf; values equal to a threshold go left."""
    node = tree
    while isinstance(node, TreeSplit):
        node = node.left if features[node.feature_index] <= node.threshold else node.right
    return node.value


def predict_tree_batch(tree: TreeNode, features: np.ndarray) -> np.ndarray:
    """Vectorized `predict_tree` over the rows of a feature matrix."""
    features = np.atleast_2d(features)
    out = np.empty(features.shape[0])
    stack = [(tree, np.arange(features.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if isinstance(node, TreeLeaf):
            out[idx] = node.value
            continue
        go_left = features[idx, node.feature_index] <= node.threshold
        stack.append((node.left, idx[go_left]))
        stack.append((node.right, idx[~go_left]))
    return out


def iter_leaves(tree: TreeNode) -> Iterator[TreeLeaf]:
    if isinstance(tree, TreeLeaf):
        yield tree
    else:
        yield from iter_leaves(tree.left)
        yield from iter_leaves(tree.right)


def tree_depth(tree: TreeNode) -> int:
    if isinstance(tree, TreeLeaf):
        return 0
    return 1 + max(tree_depth(tree.left), tree_depth(tree.right))


def is_oblivious(tree: TreeNode) -> bool:
    """True when every level holds a single (feature, threshold) and all leaves share a depth."""
    level = [tree]
    while level:
        splits = [n for n in level if isinstance(n, TreeSplit)]
        if not splits:
            return True
        if len(splits) != len(level):
            return False
        conditions = {(n.feature_index, n.threshold) for n in splits}
        if len(conditions) != 1:
            return False
        level = [child for n in splits for child in (n.left, n.right)]
    return True


def split_gains(tree: TreeNode, n_features: int = N_FEATURES) -> np.ndarray:
    """Total split gain per feature over one tree."""
    gains = np.zeros(n_features)
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, TreeSplit):
            gains[node.feature_index] += node.gain
            stack.extend([node.left, node.right])
    return gains
