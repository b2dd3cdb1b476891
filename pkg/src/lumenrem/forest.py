"""Regression-tree baselines: a CART tree, Extra Trees, and AdaBoost.R2.

Trees store their nodes in flat parallel arrays (feature, threshold, children,
value) with -1 marking leaves, grown iteratively with an explicit stack. CART
searches every midpoint between consecutive sorted distinct values; Extra
Trees draws one uniform cut per feature per node and keeps the best. Both
maximize variance reduction with ties broken by lowest feature index, then
lowest threshold. Rows route left when feature < threshold. Features are used
raw — axis-aligned splits don't care about scale, so trees skip the
normalization the MLP needs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mlp import MODEL_FORMAT_VERSION, ModelFormatError, ModelVersionError

__all__ = [
    "TreeParams",
    "Tree",
    "Forest",
    "fit_cart",
    "fit_extra_trees",
    "fit_adaboost_r2",
    "predict_forest",
    "weighted_median",
    "save_forest",
    "load_forest",
]


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass(frozen=True)
class TreeParams:
    """Stopping rules shared by all tree kinds."""

    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1 or None")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def to_dict(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_samples_leaf": self.min_samples_leaf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeParams":
        return cls(**d)


class Tree:
    """One binary regression tree in flat-array form.

    feature[i] is the split feature of node i, or -1 for a leaf; leaves keep
    their routed-target mean in value[i]. Node 0 is the root.
    """

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Route every row to its leaf; rows go left when feature < threshold."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int32)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.nonzero(active)[0]
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] < self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return self.value[node]

    def predict_row(self, x) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] < self.threshold[i] else self.right[i]
        return float(self.value[i])

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


# ---------------------------------------------------------------------------
# Growth
# ---------------------------------------------------------------------------

def _grow(X: np.ndarray, y: np.ndarray, params: TreeParams, splitter) -> Tree:
    """Iterative depth-first growth; `splitter` proposes the best split or None."""
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        value.append(math.nan)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(len(y), dtype=np.intp), 0)]
    while stack:
        nid, idx, depth = stack.pop()
        yy = y[idx]
        value[nid] = float(yy.mean())
        at_depth = params.max_depth is not None and depth >= params.max_depth
        if at_depth or len(idx) < params.min_samples_split or np.all(yy == yy[0]):
            continue
        best = splitter(X, y, idx)
        if best is None:
            continue
        f, thr, idx_l, idx_r = best
        lid, rid = new_node(), new_node()
        feature[nid] = f
        threshold[nid] = thr
        left[nid] = lid
        right[nid] = rid
        # left pushed last so it is grown first (fixed order keeps RNG replayable)
        stack.append((rid, idx_r, depth + 1))
        stack.append((lid, idx_l, depth + 1))
    return Tree(feature, threshold, left, right, value)


def _cart_splitter(params: TreeParams):
    msl = params.min_samples_leaf

    def splitter(X, y, idx):
        yv = y[idx]
        n = len(idx)
        sum_y = yv.sum()
        sum_y2 = float(yv @ yv)
        sse_parent = sum_y2 - sum_y * sum_y / n
        best = None
        best_red = 0.0
        for f in range(X.shape[1]):
            xv = X[idx, f]
            order = np.argsort(xv, kind="stable")
            xs = xv[order]
            ys = yv[order]
            cy = np.cumsum(ys)
            cy2 = np.cumsum(ys * ys)
            pos = np.nonzero(xs[1:] != xs[:-1])[0] + 1  # left-side row counts
            pos = pos[(pos >= msl) & (n - pos >= msl)]
            if len(pos) == 0:
                continue
            nl = pos.astype(np.float64)
            nr = n - nl
            syl = cy[pos - 1]
            syl2 = cy2[pos - 1]
            red = (
                sse_parent
                - (syl2 - syl * syl / nl)
                - ((sum_y2 - syl2) - (sum_y - syl) ** 2 / nr)
            )
            j = int(np.argmax(red))  # first max -> lowest threshold
            if red[j] > best_red:
                i = int(pos[j])
                a, b = xs[i - 1], xs[i]
                thr = a + (b - a) / 2.0
                if not a < thr:  # midpoint collapsed onto a; b routes identically
                    thr = b
                best_red = float(red[j])
                best = (f, float(thr), idx[order[:i]], idx[order[i:]])
        return best

    return splitter


def _extra_splitter(params: TreeParams, rng: np.random.Generator):
    msl = params.min_samples_leaf

    def splitter(X, y, idx):
        Xv = X[idx]
        yv = y[idx]
        n = len(idx)
        lo = Xv.min(axis=0)
        hi = Xv.max(axis=0)
        # one draw per feature, in feature order; constant features burn a
        # draw and simply produce no usable candidate
        cuts = rng.uniform(lo, hi)
        go_l = Xv < cuts
        nl = go_l.sum(axis=0)
        nr = n - nl
        valid = (nl >= max(msl, 1)) & (nr >= max(msl, 1))
        if not np.any(valid):
            return None
        sum_y = yv.sum()
        sum_y2 = float(yv @ yv)
        sse_parent = sum_y2 - sum_y * sum_y / n
        syl = yv @ go_l
        syl2 = (yv * yv) @ go_l
        nl_safe = np.maximum(nl, 1)
        nr_safe = np.maximum(nr, 1)
        red = (
            sse_parent
            - (syl2 - syl * syl / nl_safe)
            - ((sum_y2 - syl2) - (sum_y - syl) ** 2 / nr_safe)
        )
        red = np.where(valid, red, -np.inf)
        f = int(np.argmax(red))  # ties -> lowest feature index
        if not red[f] > 0.0:
            return None
        mask = go_l[:, f]
        return f, float(cuts[f]), idx[mask], idx[~mask]

    return splitter


# ---------------------------------------------------------------------------
# Forest container
# ---------------------------------------------------------------------------

@dataclass
class Forest:
    """A fitted tree model: one CART, an Extra Trees ensemble, or AdaBoost.R2.

    For adaboost_r2, `trees` holds members' trees back to back
    (`trees_per_member` each) and `tree_weights` carries one ln(1/beta)
    confidence per member.
    """

    mode: str
    trees: tuple[Tree, ...]
    n_features: int
    params: TreeParams
    seed: int
    trees_per_member: int = 1
    tree_weights: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("single", "extra_trees", "adaboost_r2"):
            raise ValueError(f"unknown forest mode {self.mode!r}")
        self.trees = tuple(self.trees)
        if not self.trees:
            raise ValueError("forest holds no trees")
        if len(self.trees) % self.trees_per_member:
            raise ValueError("tree count is not a multiple of trees_per_member")
        if self.mode == "adaboost_r2":
            n_members = len(self.trees) // self.trees_per_member
            if self.tree_weights is None or len(self.tree_weights) != n_members:
                raise ValueError("adaboost_r2 needs one weight per member")
            self.tree_weights = np.asarray(self.tree_weights, dtype=np.float64)

    @property
    def n_members(self) -> int:
        return len(self.trees) // self.trees_per_member


def fit_cart(features, targets, params: TreeParams = TreeParams(), seed: int = 0) -> Tree:
    """Greedy exact-split regression tree (the seed is accepted for interface
    symmetry; CART is deterministic)."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty (n, k) feature matrix with matching targets")
    return _grow(X, y, params, _cart_splitter(params))


def fit_extra_trees(
    features,
    targets,
    n_trees: int = 100,
    params: TreeParams = TreeParams(),
    seed: int = 0,
) -> Forest:
    """Extra Trees: every tree sees the full sample; randomness is in the cuts."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0 or len(X) != len(y):
        raise ValueError("need a non-empty (n, k) feature matrix with matching targets")
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    trees = tuple(
        _grow(X, y, params, _extra_splitter(params, _rng(seed, t))) for t in range(n_trees)
    )
    return Forest(
        mode="extra_trees",
        trees=trees,
        n_features=X.shape[1],
        params=params,
        seed=seed,
        meta={"n_trees": n_trees},
    )


def fit_adaboost_r2(
    features,
    targets,
    n_estimators: int = 50,
    base_n_trees: int = 10,
    params: TreeParams = TreeParams(),
    seed: int = 0,
) -> Forest:
    """AdaBoost.R2 with linear loss over Extra Trees base learners.

    Each round resamples rows by the current weights, fits a base ensemble,
    and scores it on the ORIGINAL rows. Rounds with average loss >= 0.5 are
    rejected and boosting stops; a perfect round (zero loss) is kept with
    weight 1 and also stops. If the very first round is rejected it is kept
    anyway (weight 1) so the model is never empty.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2 or len(X) != len(y):
        raise ValueError("need at least 2 rows with matching targets")
    if n_estimators < 1 or base_n_trees < 1:
        raise ValueError("n_estimators and base_n_trees must be >= 1")
    n = len(y)
    w = np.full(n, 1.0 / n)
    member_trees: list[Tree] = []
    member_weights: list[float] = []
    for r in range(n_estimators):
        rows = _rng(seed, r, 0).choice(n, size=n, replace=True, p=w)
        base_seed = int(_rng(seed, r, 1).integers(0, 2**63 - 1))
        base = fit_extra_trees(X[rows], y[rows], n_trees=base_n_trees, params=params, seed=base_seed)
        pred = predict_forest(base, X)
        err = np.abs(pred - y)
        err_max = float(err.max())
        if err_max == 0.0:  # perfect member: keep it and stop
            member_trees.extend(base.trees)
            member_weights.append(1.0)
            break
        loss = err / err_max
        l_bar = float(w @ loss)
        if l_bar >= 0.5:
            if not member_weights:  # never return an empty ensemble
                member_trees.extend(base.trees)
                member_weights.append(1.0)
            break
        beta = l_bar / (1.0 - l_bar)
        member_trees.extend(base.trees)
        member_weights.append(math.log(1.0 / beta))
        w = w * beta ** (1.0 - loss)
        w /= w.sum()
    return Forest(
        mode="adaboost_r2",
        trees=tuple(member_trees),
        n_features=X.shape[1],
        params=params,
        seed=seed,
        trees_per_member=base_n_trees,
        tree_weights=np.asarray(member_weights),
        meta={"n_estimators": n_estimators, "base_n_trees": base_n_trees},
    )


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def weighted_median(values, weights) -> float:
    """Smallest value whose cumulative weight reaches half the total."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if v.shape != w.shape or v.size == 0:
        raise ValueError("values and weights must be equal-length and non-empty")
    if np.any(w < 0) or w.sum() == 0:
        raise ValueError("weights must be non-negative with positive sum")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(v[order[min(k, len(v) - 1)]])


def _member_predictions(forest: Forest, X: np.ndarray) -> np.ndarray:
    """(n_members, n_rows) matrix; a member's output averages its trees."""
    per_tree = np.stack([t.predict(X) for t in forest.trees])
    if forest.trees_per_member == 1:
        return per_tree
    m = forest.n_members
    return per_tree.reshape(m, forest.trees_per_member, -1).mean(axis=1)


def predict_forest(forest: Forest, raw_features):
    """Prediction in the target's raw units; scalar in, scalar out."""
    X = np.asarray(raw_features, dtype=np.float64)
    scalar = X.ndim == 1
    if scalar:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got shape {X.shape}")
    if scalar:
        # One-row fast path: walk each tree in Python instead of paying the
        # vectorized router's per-level array overhead. The aggregation keeps
        # the batch path's array shapes so the reductions are bit-identical.
        row = X[0]
        vals = np.array([t.predict_row(row) for t in forest.trees], dtype=np.float64)
        preds = vals.reshape(-1, forest.trees_per_member, 1).mean(axis=1)
    else:
        preds = _member_predictions(forest, X)
    if forest.mode in ("single", "extra_trees"):
        out = preds.mean(axis=0)
    else:
        w = forest.tree_weights
        order = np.argsort(preds, axis=0, kind="stable")
        cum = np.cumsum(w[order], axis=0)
        ranks = np.argmax(cum >= 0.5 * cum[-1], axis=0)
        cols = np.arange(X.shape[0])
        out = preds[order[ranks, cols], cols]
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_forest(forest: Forest, path) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "forest",
        "mode": forest.mode,
        "n_features": forest.n_features,
        "params": forest.params.to_dict(),
        "seed": forest.seed,
        "trees_per_member": forest.trees_per_member,
        "tree_weights": None if forest.tree_weights is None else forest.tree_weights.tolist(),
        "meta": forest.meta,
        "trees": [t.to_dict() for t in forest.trees],
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True)
        f.write("\n")


def load_forest(path) -> Forest:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ModelFormatError(f"{path} is not a valid model file: {e}") from e
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelFormatError(f"{path} is missing the format header")
    if doc["format_version"] != MODEL_FORMAT_VERSION:
        raise ModelVersionError(
            f"{path} has format version {doc['format_version']}, expected {MODEL_FORMAT_VERSION}"
        )
    if doc.get("kind") != "forest":
        raise ModelFormatError(f"{path} holds a {doc.get('kind')!r} model, not a forest")
    try:
        return Forest(
            mode=doc["mode"],
            trees=tuple(Tree.from_dict(t) for t in doc["trees"]),
            n_features=int(doc["n_features"]),
            params=TreeParams.from_dict(doc["params"]),
            seed=int(doc["seed"]),
            trees_per_member=int(doc["trees_per_member"]),
            tree_weights=None if doc["tree_weights"] is None else np.asarray(doc["tree_weights"]),
            meta=dict(doc.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, (ModelFormatError, ModelVersionError)):
            raise
        raise ModelFormatError(f"{path} is malformed: {e}") from e
