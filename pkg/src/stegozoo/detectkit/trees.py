"""Decision-tree ensembles for binary classification.

Variants:

* ``rf``  -- bagged gini trees with per-split feature subsampling
* ``gb``  -- gradient boosting on logistic loss with exact split search
* ``hgb`` -- the same boosting with features pre-binned into histograms

Boosted trees use second-order (gradient/hessian) gains and Newton leaf
values. Every tree is stored as flat arrays; a row goes left when
``x[feature] <= threshold``. Leaves have ``feature == -1``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

VARIANTS = ("rf", "gb", "hgb")

DEFAULTS = {
    "rf": {"n_trees": 100, "max_depth": 8, "max_features": "sqrt", "min_samples_leaf": 1, "bootstrap": True},
    "gb": {"n_rounds": 200, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 1, "l2": 1.0},
    "hgb": {"n_rounds": 200, "max_depth": 3, "learning_rate": 0.1, "min_samples_leaf": 20, "l2": 1.0,
            "max_bins": 256},
}


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.nonzero(inner)[0]
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


class _TreeBuilder:
    """Accumulates nodes depth-first into flat arrays."""

    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

    def add(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(float(value))
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, left: int, right: int):
        self.feature[node] = feature
        self.threshold[node] = threshold
        self.left[node] = left
        self.right[node] = right

    def build(self) -> Tree:
        return Tree(
            np.array(self.feature, dtype=np.int32),
            np.array(self.threshold, dtype=np.float64),
            np.array(self.left, dtype=np.int32),
            np.array(self.right, dtype=np.int32),
            np.array(self.value, dtype=np.float64),
        )


def _midpoints(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    mid = lo + (hi - lo) / 2.0
    # adjacent doubles: the midpoint may round up to hi, which would send hi left
    return np.where(mid < hi, mid, lo)


def _best_split(V, Sf, feats, stats, gain_fn, min_leaf):
    """Best split of a node; column j of ``Sf`` lists its rows sorted by feature ``feats[j]``.

    ``V`` holds the values searched (raw features or bin codes) and ``stats``
    additive per-row statistics; ``gain_fn(left_sums, totals)`` scores every
    cut between distinct neighbouring values. Returns ``(gain, feature, lo, hi)``
    where ``lo``/``hi`` are the values either side of the cut, or None.
    """
    m = Sf.shape[0]
    if m < 2 * min_leaf:
        return None
    xs = V[Sf, feats]
    left = np.cumsum(stats[Sf], axis=0)
    total = left[-1]
    gains = gain_fn(left[:-1], total)
    n_left = np.arange(1, m)[:, None]
    valid = (xs[:-1] < xs[1:]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    if not valid.any():
        return None
    gains = np.where(valid, gains, -np.inf)
    j, fi = np.unravel_index(np.argmax(gains), gains.shape)
    return float(gains[j, fi]), int(feats[fi]), xs[j, fi], xs[j + 1, fi]


def _partition(S, go_left):
    """Split per-feature sorted row ids by a row mask, keeping the order."""
    m, d = S.shape
    mask = go_left[S].T
    n_left = int(mask[0].sum())
    St = S.T
    return St[mask].reshape(d, n_left).T, St[~mask].reshape(d, m - n_left).T


def _sorted_rows(V: np.ndarray) -> np.ndarray:
    """(n, d) row ids sorted by each column of ``V``."""
    return np.argsort(V, axis=0, kind="stable")


def _gini_gain(left, total):
    # [..., 0] = count, [..., 1] = positives; weighted gini decrease times node size
    nL, pL = left[..., 0], left[..., 1]
    n, p = total[..., 0], total[..., 1]
    nR, pR = n - nL, p - pL
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (pL ** 2 + (nL - pL) ** 2) / nL + (pR ** 2 + (nR - pR) ** 2) / nR
    return score - (p ** 2 + (n - p) ** 2) / n


def _newton_gain(l2):
    def gain(left, total):
        GL, HL = left[..., 0], left[..., 1]
        G, H = total[..., 0], total[..., 1]
        GR, HR = G - GL, H - HL
        return GL ** 2 / (HL + l2) + GR ** 2 / (HR + l2) - G ** 2 / (H + l2)
    return gain


def build_gini_tree(X, y, rows, max_depth, max_features, min_leaf, rng) -> Tree:
    """Classification tree on ``rows`` (repeats allowed); leaves hold the positive fraction."""
    d = X.shape[1]
    stats = np.stack([np.ones(len(y)), y.astype(np.float64)], axis=1)
    b = _TreeBuilder()
    stack = [(b.add(y[rows].mean()), rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        pos = y[idx].sum()
        if depth >= max_depth or pos == 0 or pos == idx.size:
            continue
        feats = np.arange(d) if max_features >= d else np.sort(rng.choice(d, max_features, replace=False))
        Sf = idx[np.argsort(X[np.ix_(idx, feats)], axis=0, kind="stable")]
        best = _best_split(X, Sf, feats, stats, _gini_gain, min_leaf)
        if best is None:
            continue
        _, f, lo, hi = best
        thr = float(_midpoints(lo, hi))
        go = X[idx, f] <= thr
        li, ri = idx[go], idx[~go]
        left, right = b.add(y[li].mean()), b.add(y[ri].mean())
        b.split(node, f, thr, left, right)
        stack += [(right, ri, depth + 1), (left, li, depth + 1)]
    return b.build()


def build_newton_tree(X, g, h, max_depth, min_leaf, l2, S, edges=None, codes=None) -> tuple[Tree, np.ndarray]:
    """Regression tree on gradients/hessians; returns the tree and each row's leaf value.

    ``S`` is the presorted row order of the search matrix: ``X`` itself, or
    ``codes`` (histogram bins) when ``edges`` is given.
    """
    n, d = X.shape
    V = X if edges is None else codes
    feats = np.arange(d)
    stats = np.stack([g, h], axis=1)
    gain_fn = _newton_gain(l2)
    leaf_of_row = np.zeros(n)
    b = _TreeBuilder()

    def leaf_value(idx):
        return -g[idx].sum() / (h[idx].sum() + l2)

    stack = [(b.add(leaf_value(S[:, 0])), S, 0)]
    while stack:
        node, S, depth = stack.pop()
        best = _best_split(V, S, feats, stats, gain_fn, min_leaf) if depth < max_depth else None
        if best is None or best[0] <= 1e-12:
            leaf_of_row[S[:, 0]] = b.value[node]
            continue
        _, f, lo, hi = best
        if edges is None:
            thr = float(_midpoints(lo, hi))
            go_left = X[:, f] <= thr
        else:
            thr = float(edges[f, int(lo)])
            go_left = codes[:, f] <= lo
        SL, SR = _partition(S, go_left)
        left, right = b.add(leaf_value(SL[:, 0])), b.add(leaf_value(SR[:, 0]))
        b.split(node, f, thr, left, right)
        stack += [(right, SR, depth + 1), (left, SL, depth + 1)]
    return b.build(), leaf_of_row


def bin_edges(X: np.ndarray, max_bins: int) -> np.ndarray:
    """Per-feature bin upper edges, padded with +inf to ``max_bins - 1`` columns.

    Features with few distinct values get one bin per value; otherwise edges
    sit at quantiles of the distinct training values.
    """
    n, d = X.shape
    edges = np.full((d, max_bins - 1), np.inf)
    for f in range(d):
        col = X[:, f]
        u = np.unique(col[~np.isnan(col)])
        if u.size <= max_bins:
            e = _midpoints(u[:-1], u[1:])
        else:
            e = np.unique(np.quantile(u, np.linspace(0, 1, max_bins + 1)[1:-1]))
        edges[f, :e.size] = e
    return edges


def bin_codes(X: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Bin index per value: the number of edges strictly below it, so x <= edge[b] iff code <= b."""
    codes = np.empty(X.shape, dtype=np.int64)
    for f in range(X.shape[1]):
        codes[:, f] = np.searchsorted(edges[f], X[:, f], side="left")
    return codes


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class TreeEnsemble:
    variant: str
    params: dict
    seed: int
    trees: list[Tree] = field(default_factory=list)
    base_score: float = 0.0
    n_features: int = 0

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        if self.variant == "rf":
            return np.mean([t.predict(X) for t in self.trees], axis=0)
        lr = self.params["learning_rate"]
        score = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            score += lr * t.predict(X)
        return score

    def predict_proba(self, X) -> np.ndarray:
        s = self.decision_function(X)
        return s if self.variant == "rf" else _sigmoid(s)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) > 0.5).astype(np.int64)


def _canonical_order(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row permutation that depends only on row contents (lexicographic)."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def resolve_params(variant: str, params: dict | None = None) -> dict:
    if variant not in VARIANTS:
        raise ValueError(f"unknown ensemble variant {variant!r}; expected one of {VARIANTS}")
    merged = dict(DEFAULTS[variant])
    unknown = set(params or {}) - set(merged)
    if unknown:
        raise ValueError(f"unknown {variant} parameters: {sorted(unknown)}")
    merged.update(params or {})
    return merged


def fit_ensemble(X, y, variant: str, params: dict | None = None, seed: int = 0) -> TreeEnsemble:
    """Fit a tree ensemble on labels ``y`` in {0, 1}. Deterministic given ``seed``.

    Training rows are put in a canonical order first, so the result does not
    depend on the order in which rows are supplied.
    """
    params = resolve_params(variant, params)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] == 0 or X.shape[0] == 0:
        raise ValueError(f"need a non-empty 2-D feature matrix, got shape {X.shape}")
    if X.shape[0] != y.size:
        raise ValueError("feature rows and labels differ in length")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature matrix contains NaN or infinite values")
    if set(np.unique(y)) - {0, 1}:
        raise ValueError("labels must be 0 (benign) or 1 (malicious)")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training data contains a single class")
    share = y.mean()
    if not 0.2 <= share <= 0.8:
        log.warning("training labels are imbalanced (%.0f%% malicious)", 100 * share)
    order = _canonical_order(X, y)
    X, y = X[order], y[order]
    model = TreeEnsemble(variant, params, int(seed), n_features=X.shape[1])
    if variant == "rf":
        _fit_forest(model, X, y)
    else:
        _fit_boosting(model, X, y)
    return model


def _max_features(spec, d: int) -> int:
    if spec in (None, "all"):
        return d
    if spec == "sqrt":
        return max(1, int(math.sqrt(d)))
    if spec == "log2":
        return max(1, int(math.log2(d)))
    if isinstance(spec, float):
        return max(1, int(spec * d))
    return max(1, min(d, int(spec)))


def _fit_forest(model: TreeEnsemble, X, y):
    p = model.params
    n, d = X.shape
    k = _max_features(p["max_features"], d)
    children = np.random.SeedSequence(model.seed).spawn(p["n_trees"])
    for child in children:
        rng = np.random.default_rng(child)
        rows = np.sort(rng.integers(0, n, n)) if p["bootstrap"] else np.arange(n)
        model.trees.append(build_gini_tree(X, y, rows, p["max_depth"], k, p["min_samples_leaf"], rng))


def _fit_boosting(model: TreeEnsemble, X, y):
    p = model.params
    prior = np.clip(y.mean(), 1e-6, 1 - 1e-6)
    model.base_score = float(np.log(prior / (1 - prior)))
    edges = codes = None
    if model.variant == "hgb":
        edges = bin_edges(X, p["max_bins"])
        codes = bin_codes(X, edges)
        S = _sorted_rows(codes)
    else:
        S = _sorted_rows(X)
    score = np.full(y.size, model.base_score)
    for _ in range(p["n_rounds"]):
        prob = _sigmoid(score)
        g = prob - y
        h = np.maximum(prob * (1 - prob), 1e-16)
        tree, leaf_values = build_newton_tree(
            X, g, h, p["max_depth"], p["min_samples_leaf"], p["l2"], S, edges, codes
        )
        model.trees.append(tree)
        score += p["learning_rate"] * leaf_values
