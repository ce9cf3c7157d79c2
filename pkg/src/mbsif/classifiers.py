"""From-scratch binary classifiers: boosted stumps and a Gini random forest.

Labels are +1 (male) and -1 (female) everywhere. All fits are
deterministic: stump ties break by (error, feature index, threshold,
polarity +1 first), forests derive one RNG stream per tree from
(seed, tree index), and prediction ties resolve to +1.

Stump thresholds are midpoints between consecutive sorted unique feature
values, so every stored threshold actually separates training samples and
all stump-based decisions are invariant to positive rescaling of any
feature column.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_MAGIC = b"MBSIFM01"
_KIND_TAGS = {"adaboost_m1": 0, "logitboost": 1, "forest": 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

# alpha assigned to a perfectly separating stump (error exactly 0)
ALPHA_CAP = 0.5 * math.log((1.0 - 1e-10) / 1e-10)

LOGIT_Z_MAX = 4.0
LOGIT_WEIGHT_FLOOR = 2e-16

LABEL_POS = "male"
LABEL_NEG = "female"


class ModelFormatError(Exception):
    """Raised when a model file is corrupt, truncated or invalid."""


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with +/-1 labels and per-sample subject ids."""

    features: np.ndarray   # (m, d) float64
    labels: np.ndarray     # (m,) in {+1, -1}
    subject_ids: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise ValueError(f"features {X.shape} and labels {y.shape} do not align")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must not contain NaN/Inf")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if self.subject_ids and len(self.subject_ids) != X.shape[0]:
            raise ValueError("subject_ids length must match sample count")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)


@dataclass(frozen=True)
class StumpModel:
    """Threshold test on one feature: predicts polarity when value > threshold."""

    feature_index: int
    threshold: float
    polarity: int  # +1 or -1

    def decide(self, X: np.ndarray) -> np.ndarray:
        above = X[:, self.feature_index] > self.threshold
        return np.where(above, float(self.polarity), float(-self.polarity))


@dataclass(frozen=True)
class BoostModel:
    """Additive stump ensemble: score(x) = sum_t offset_t + weight_t * h_t(x).

    AdaBoost rounds have zero offsets and non-negative weights; LogitBoost
    regression stumps carry the two leaf values as (offset, weight) with
    the sign folded into the stump polarity so weights stay >= 0.
    """

    kind: str
    stumps: tuple[StumpModel, ...]
    weights: tuple[float, ...]
    offsets: tuple[float, ...]
    rounds: int
    dim: int

    def __post_init__(self):
        if self.kind not in ("adaboost_m1", "logitboost"):
            raise ValueError(f"unknown boosting kind {self.kind!r}")
        if not (len(self.stumps) == len(self.weights) == len(self.offsets)):
            raise ValueError("stumps, weights, offsets must have equal length")
        if not all(math.isfinite(w) for w in self.weights):
            raise ValueError("stump weights must be finite")
        if any(w < 0 for w in self.weights):
            raise ValueError("stump weights must be >= 0")

    def scores(self, X: np.ndarray) -> np.ndarray:
        if not self.stumps:
            raise ValueError("model has no stumps")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        s = np.zeros(X.shape[0])
        for stump, w, b in zip(self.stumps, self.weights, self.offsets):
            s += b + w * stump.decide(X)
        return s


@dataclass(frozen=True)
class TreeNode:
    """Internal split (feature >= 0) or leaf (feature == -1 with class votes)."""

    feature: int
    threshold: float
    left: int
    right: int
    votes_pos: float
    votes_neg: float


@dataclass(frozen=True)
class ForestModel:
    """Bagged Gini trees; prediction is a majority vote, ties go to +1."""

    trees: tuple[tuple[TreeNode, ...], ...]
    features_per_split: int
    max_depth: int | None
    seed: int
    dim: int
    oob_accuracy: float = float("nan")

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    def scores(self, X: np.ndarray) -> np.ndarray:
        """Fraction of trees voting +1, in [0, 1]."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        votes = np.zeros(X.shape[0])
        for tree in self.trees:
            votes += _tree_predict(tree, X) > 0
        return votes / len(self.trees)


Model = BoostModel | ForestModel


# ---------------------------------------------------------------------------
# Stump search (shared by both boosters)
# ---------------------------------------------------------------------------

class _StumpSearch:
    """Presorted feature columns for repeated stump fitting on one dataset.

    Candidate thresholds are the midpoints between consecutive distinct
    sorted values of each column; columns with a single distinct value
    contribute no candidates.
    """

    def __init__(self, X: np.ndarray):
        self.X = X
        self.m, self.d = X.shape
        self.order = np.argsort(X, axis=0, kind="stable")
        self.sorted_vals = np.take_along_axis(X, self.order, axis=0)
        if self.m > 1:
            self.valid = self.sorted_vals[1:] != self.sorted_vals[:-1]
            self.thresholds = 0.5 * (self.sorted_vals[1:] + self.sorted_vals[:-1])
        else:
            self.valid = np.zeros((0, self.d), dtype=bool)
            self.thresholds = np.zeros((0, self.d))
        self.has_candidates = bool(self.valid.any())

    def best_classification_stump(self, y: np.ndarray, w: np.ndarray):
        """Weighted-error-minimizing stump; returns (stump, error) or None."""
        if not self.has_candidates:
            return None
        ys = y[self.order]
        ws = w[self.order]
        wp = np.where(ys > 0, ws, 0.0)
        wn = ws - wp
        cum_p = np.cumsum(wp, axis=0)[:-1]      # (+1)-mass left of each cut
        cum_n = np.cumsum(wn, axis=0)[:-1]
        total_p = wp.sum(axis=0)
        total_n = wn.sum(axis=0)
        # polarity +1 predicts +1 strictly above the cut
        err_pos = cum_p + (total_n - cum_n)
        err_neg = (total_p + total_n) - err_pos
        # axes (feature, cut, polarity): first flat argmin realizes the
        # (error, feature, threshold, +1 before -1) tie-breaking order
        errs = np.stack([err_pos.T, err_neg.T], axis=-1)
        errs[~self.valid.T] = np.inf
        flat = int(np.argmin(errs))
        j, k, p = np.unravel_index(flat, errs.shape)
        err = float(errs[j, k, p])
        if not math.isfinite(err):
            return None
        stump = StumpModel(feature_index=int(j),
                           threshold=float(self.thresholds[k, j]),
                           polarity=+1 if p == 0 else -1)
        return stump, err

    def best_regression_stump(self, z: np.ndarray, w: np.ndarray):
        """Weighted-SSE-minimizing two-leaf stump on targets z.

        Returns (feature, threshold, left_value, right_value) or None.
        """
        if not self.has_candidates:
            return None
        ws = w[self.order]
        wzs = (w * z)[self.order]
        cum_w = np.cumsum(ws, axis=0)[:-1]
        cum_wz = np.cumsum(wzs, axis=0)[:-1]
        total_w = ws.sum(axis=0)
        total_wz = wzs.sum(axis=0)
        right_w = total_w - cum_w
        right_wz = total_wz - cum_wz
        # minimizing SSE == maximizing explained sum (SL^2/WL + SR^2/WR)
        explained = cum_wz ** 2 / cum_w + right_wz ** 2 / right_w
        gains = explained.T         # (feature, cut)
        gains[~self.valid.T] = -np.inf
        flat = int(np.argmax(gains))
        j, k = np.unravel_index(flat, gains.shape)
        if not math.isfinite(gains[j, k]):
            return None
        left_value = float(cum_wz[k, j] / cum_w[k, j])
        right_value = float(right_wz[k, j] / right_w[k, j])
        return int(j), float(self.thresholds[k, j]), left_value, right_value


def _check_two_classes(data: LabeledDataset):
    if np.all(data.labels > 0) or np.all(data.labels < 0):
        raise ValueError("training data must contain both classes")


# ---------------------------------------------------------------------------
# AdaBoost.M1
# ---------------------------------------------------------------------------

def fit_adaboost(data: LabeledDataset, rounds: int = 100) -> BoostModel:
    """AdaBoost.M1 over decision stumps with exponential reweighting.

    Stops before adding a stump whose weighted error reaches 0.5, and
    stops after adding a perfectly separating stump (capped alpha).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    _check_two_classes(data)
    X, y = data.features, data.labels
    m = X.shape[0]
    search = _StumpSearch(X)
    w = np.full(m, 1.0 / m)
    stumps: list[StumpModel] = []
    alphas: list[float] = []
    for _ in range(rounds):
        found = search.best_classification_stump(y, w)
        if found is None:
            break
        stump, eps = found
        if eps >= 0.5:
            break
        if eps <= 0.0:
            stumps.append(stump)
            alphas.append(ALPHA_CAP)
            break
        alpha = 0.5 * math.log((1.0 - eps) / eps)
        stumps.append(stump)
        alphas.append(alpha)
        w = w * np.exp(-alpha * y * stump.decide(X))
        w /= w.sum()
    if not stumps:
        raise ValueError("no stump with weighted error below 0.5 exists (degenerate data)")
    return BoostModel(kind="adaboost_m1", stumps=tuple(stumps),
                      weights=tuple(alphas), offsets=(0.0,) * len(stumps),
                      rounds=rounds, dim=X.shape[1])


# ---------------------------------------------------------------------------
# LogitBoost
# ---------------------------------------------------------------------------

def fit_logitboost(data: LabeledDataset, rounds: int = 100) -> BoostModel:
    """Additive logistic regression over two-leaf regression stumps.

    Each round fits a weighted least-squares stump to the clamped working
    response z = (y* - p) / (p(1-p)) and takes the half-step
    F <- F + f/2, p = sigmoid(2F).
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    _check_two_classes(data)
    X, y = data.features, data.labels
    m = X.shape[0]
    y01 = (y + 1.0) / 2.0
    search = _StumpSearch(X)
    F = np.zeros(m)
    p = np.full(m, 0.5)
    stumps: list[StumpModel] = []
    weights: list[float] = []
    offsets: list[float] = []
    for _ in range(rounds):
        w = np.maximum(p * (1.0 - p), LOGIT_WEIGHT_FLOOR)
        z = np.clip((y01 - p) / w, -LOGIT_Z_MAX, LOGIT_Z_MAX)
        found = search.best_regression_stump(z, w)
        if found is None:
            break
        j, thr, c_left, c_right = found
        # two-leaf stump as offset + signed step: f(x) = a + b*h(x)
        a = 0.5 * (c_left + c_right)
        b = 0.5 * (c_right - c_left)
        polarity = +1 if b >= 0 else -1
        stump = StumpModel(feature_index=j, threshold=thr, polarity=polarity)
        stumps.append(stump)
        offsets.append(0.5 * a)
        weights.append(0.5 * abs(b))
        F += 0.5 * np.where(X[:, j] > thr, c_right, c_left)
        p = 1.0 / (1.0 + np.exp(-2.0 * F))
    if not stumps:
        raise ValueError("no usable split exists (all features constant)")
    return BoostModel(kind="logitboost", stumps=tuple(stumps),
                      weights=tuple(weights), offsets=tuple(offsets),
                      rounds=rounds, dim=X.shape[1])


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------

def _gini(n_pos: float, n_neg: float) -> float:
    n = n_pos + n_neg
    if n == 0:
        return 0.0
    p = n_pos / n
    q = n_neg / n
    return 1.0 - p * p - q * q


def _best_gini_split(X: np.ndarray, y: np.ndarray, feature_ids: np.ndarray):
    """Best (gain, feature, threshold) over the candidate features, or None."""
    n = y.shape[0]
    n_pos = float(np.sum(y > 0))
    parent = _gini(n_pos, n - n_pos)
    best = None
    for j in feature_ids:
        col = X[:, j]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        pos = (y[order] > 0).astype(np.float64)
        cum_pos = np.cumsum(pos)[:-1]
        counts = np.arange(1, n)
        valid = xs[1:] != xs[:-1]
        if not valid.any():
            continue
        left_pos = cum_pos
        left_neg = counts - cum_pos
        right_pos = n_pos - left_pos
        right_neg = (n - n_pos) - left_neg
        left_n = counts
        right_n = n - counts
        gini_left = 1.0 - (left_pos / left_n) ** 2 - (left_neg / left_n) ** 2
        gini_right = 1.0 - (right_pos / right_n) ** 2 - (right_neg / right_n) ** 2
        gain = parent - (left_n * gini_left + right_n * gini_right) / n
        gain[~valid] = -np.inf
        k = int(np.argmax(gain))
        if not math.isfinite(gain[k]):
            continue
        thr = 0.5 * (xs[k] + xs[k + 1])
        cand = (float(gain[k]), int(j), float(thr))
        if best is None or cand[0] > best[0]:
            best = cand
    return best


def _grow_tree(X, y, idx, depth, max_depth, k_features, rng, nodes):
    """Append the subtree rooted at samples `idx`; returns its node index."""
    sub_y = y[idx]
    n_pos = float(np.sum(sub_y > 0))
    n_neg = float(len(sub_y) - n_pos)
    pure = n_pos == 0 or n_neg == 0
    at_depth = max_depth is not None and depth >= max_depth
    if not (pure or at_depth):
        feats = np.sort(rng.choice(X.shape[1], size=k_features, replace=False))
        best = _best_gini_split(X[idx], sub_y, feats)
    else:
        best = None
    if best is None or best[0] <= 0.0:
        nodes.append(TreeNode(feature=-1, threshold=0.0, left=-1, right=-1,
                              votes_pos=n_pos, votes_neg=n_neg))
        return len(nodes) - 1
    _, j, thr = best
    go_left = X[idx, j] <= thr
    me = len(nodes)
    nodes.append(None)  # placeholder, children indices filled below
    left = _grow_tree(X, y, idx[go_left], depth + 1, max_depth, k_features, rng, nodes)
    right = _grow_tree(X, y, idx[~go_left], depth + 1, max_depth, k_features, rng, nodes)
    nodes[me] = TreeNode(feature=j, threshold=thr, left=left, right=right,
                         votes_pos=n_pos, votes_neg=n_neg)
    return me


def _tree_predict(tree: tuple[TreeNode, ...], X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = tree[0]
        while node.feature >= 0:
            node = tree[node.left] if X[i, node.feature] <= node.threshold else tree[node.right]
        out[i] = 1.0 if node.votes_pos >= node.votes_neg else -1.0
    return out


def fit_forest(data: LabeledDataset, trees: int = 500,
               features_per_split: int | None = None,
               max_depth: int | None = None, seed: int = 0) -> ForestModel:
    """Bagged Gini-impurity trees on bootstrap resamples.

    Each tree gets its own generator spawned from (seed, tree index), so
    the fit is reproducible and trees could be trained in any order.
    Out-of-bag accuracy is recorded on the model.
    """
    if trees < 1:
        raise ValueError("trees must be >= 1")
    _check_two_classes(data)
    X, y = data.features, data.labels
    m, d = X.shape
    k = features_per_split if features_per_split is not None else max(1, round(math.sqrt(d)))
    if not (1 <= k <= d):
        raise ValueError(f"features_per_split must be in [1, {d}], got {k}")

    grown: list[tuple[TreeNode, ...]] = []
    oob_votes = np.zeros(m)
    oob_counts = np.zeros(m)
    for t in range(trees):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(t,)))
        boot = rng.integers(0, m, size=m)
        nodes: list[TreeNode] = []
        _grow_tree(X, y, boot, 0, max_depth, k, rng, nodes)
        tree = tuple(nodes)
        grown.append(tree)
        oob = np.setdiff1d(np.arange(m), boot, assume_unique=False)
        if oob.size:
            oob_votes[oob] += _tree_predict(tree, X[oob])
            oob_counts[oob] += 1
    seen = oob_counts > 0
    if seen.any():
        oob_pred = np.where(oob_votes[seen] >= 0, 1.0, -1.0)
        oob_acc = float(np.mean(oob_pred == y[seen]))
    else:
        oob_acc = float("nan")
    return ForestModel(trees=tuple(grown), features_per_split=k,
                       max_depth=max_depth, seed=seed, dim=d, oob_accuracy=oob_acc)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def decision_scores(model: Model, X: np.ndarray) -> np.ndarray:
    """Signed margin for boosting, +1 vote fraction for forests."""
    return model.scores(X)


def predict_batch(model: Model, X: np.ndarray) -> np.ndarray:
    """Vector of +/-1 predictions; ties resolve to +1."""
    s = decision_scores(model, X)
    cut = 0.0 if isinstance(model, BoostModel) else 0.5
    return np.where(s >= cut, 1.0, -1.0)


def predict(model: Model, features: np.ndarray) -> tuple[str, float]:
    """Label and score for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("predict expects a single feature vector")
    d = _model_dim(model)
    if x.shape[0] != d:
        raise ValueError(f"feature dimension {x.shape[0]} does not match model ({d})")
    s = float(decision_scores(model, x[None, :])[0])
    lab = predict_batch(model, x[None, :])[0]
    return (LABEL_POS if lab > 0 else LABEL_NEG), s


def _model_dim(model: Model) -> int:
    if isinstance(model, BoostModel) and not model.stumps:
        raise ValueError("model has no stumps")
    return model.dim


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_model(model: Model, path) -> None:
    """Write the versioned binary container (magic MBSIFM01, little-endian)."""
    parts = [MODEL_MAGIC]
    if isinstance(model, BoostModel):
        parts.append(struct.pack("<IIII", _KIND_TAGS[model.kind], len(model.stumps),
                                 model.rounds, model.dim))
        for stump, w, b in zip(model.stumps, model.weights, model.offsets):
            parts.append(struct.pack("<Ididd", stump.feature_index, stump.threshold,
                                     stump.polarity, w, b))
    else:
        depth = -1 if model.max_depth is None else model.max_depth
        parts.append(struct.pack("<IIIiQId", _KIND_TAGS["forest"], model.tree_count,
                                 model.features_per_split, depth, model.seed,
                                 model.dim, model.oob_accuracy))
        for tree in model.trees:
            parts.append(struct.pack("<I", len(tree)))
            for n in tree:
                parts.append(struct.pack("<idiidd", n.feature, n.threshold,
                                         n.left, n.right, n.votes_pos, n.votes_neg))
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> Model:
    """Read a model written by save_model; lossless round-trip."""
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ModelFormatError(f"{path}: file too short to be a model")
    if raw[:8] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: bad magic {raw[:8]!r} (expected {MODEL_MAGIC!r})")
    view = memoryview(raw)[8:]
    try:
        (tag,) = struct.unpack_from("<I", view, 0)
        kind = _TAG_KINDS.get(tag)
        if kind is None:
            raise ModelFormatError(f"{path}: unknown model kind tag {tag}")
        if kind in ("adaboost_m1", "logitboost"):
            _, count, rounds, dim = struct.unpack_from("<IIII", view, 0)
            pos = 16
            stumps, weights, offsets = [], [], []
            rec = struct.Struct("<Ididd")
            for _ in range(count):
                f, thr, pol, w, b = rec.unpack_from(view, pos)
                pos += rec.size
                stumps.append(StumpModel(feature_index=f, threshold=thr, polarity=pol))
                weights.append(w)
                offsets.append(b)
            if pos != len(view):
                raise ModelFormatError(f"{path}: trailing bytes after model payload")
            return BoostModel(kind=kind, stumps=tuple(stumps), weights=tuple(weights),
                              offsets=tuple(offsets), rounds=rounds, dim=dim)
        _, n_trees, k, depth, seed, dim, oob = struct.unpack_from("<IIIiQId", view, 0)
        pos = struct.calcsize("<IIIiQId")
        trees = []
        node_rec = struct.Struct("<idiidd")
        for _ in range(n_trees):
            (n_nodes,) = struct.unpack_from("<I", view, pos)
            pos += 4
            nodes = []
            for _ in range(n_nodes):
                f, thr, le, ri, vp, vn = node_rec.unpack_from(view, pos)
                pos += node_rec.size
                nodes.append(TreeNode(feature=f, threshold=thr, left=le, right=ri,
                                      votes_pos=vp, votes_neg=vn))
            trees.append(tuple(nodes))
        if pos != len(view):
            raise ModelFormatError(f"{path}: trailing bytes after model payload")
        return ForestModel(trees=tuple(trees), features_per_split=k,
                           max_depth=None if depth < 0 else depth,
                           seed=seed, dim=dim, oob_accuracy=oob)
    except struct.error as exc:
        raise ModelFormatError(f"{path}: truncated model file ({exc})") from exc
