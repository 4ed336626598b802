"""Downstream feature-quality oracles: random forest + AUC, Ward
agglomerative clustering + V-measure, and top-p% feature subsetting.

The forest is plain CART with Gini splits, bootstrap resamples and
floor(sqrt(P)) candidate features per split; probabilities are the mean
of per-tree leaf class distributions.  Each tree owns a pre-assigned RNG
substream, so results do not depend on construction order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nncore import as_matrix
from .rng import RngStream


@dataclass
class ForestConfig:
    n_trees: int = 500
    features_per_split: object = "sqrt"  # "sqrt" or a positive int
    min_leaf: int = 1
    bootstrap: bool = True
    rng: RngStream = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("tree count must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min leaf must be >= 1")
        if self.features_per_split != "sqrt" and (
                not isinstance(self.features_per_split, int) or self.features_per_split < 1):
            raise ValueError("features_per_split must be 'sqrt' or a positive int")
        if self.rng is None:
            raise ValueError("forest needs an rng stream")

    def n_candidates(self, n_features: int) -> int:
        if self.features_per_split == "sqrt":
            return max(1, math.floor(math.sqrt(n_features)))
        return min(self.features_per_split, n_features)


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: object = None
    right: object = None
    dist: np.ndarray = None  # set on leaves only


def _gini(counts: np.ndarray, total: int) -> float:
    frac = counts / total
    return 1.0 - float((frac * frac).sum())


def _best_split(x: np.ndarray, onehot: np.ndarray, candidates, min_leaf: int):
    """Highest-Gini-decrease (feature, threshold); ties go to the earlier
    candidate feature, then the smaller threshold.  None when no split
    strictly reduces impurity."""
    n = onehot.shape[0]
    parent_counts = onehot.sum(axis=0)
    parent = _gini(parent_counts, n)
    best = None
    best_decrease = 0.0
    for f in candidates:
        order = np.argsort(x[:, f], kind="stable")
        xs = x[order, f]
        cum = onehot[order].cumsum(axis=0)
        pos = np.arange(min_leaf, n - min_leaf + 1)
        pos = pos[xs[pos - 1] < xs[pos]]
        if pos.size == 0:
            continue
        left = cum[pos - 1]
        right = parent_counts - left
        n_left = pos.astype(np.float64)
        n_right = n - n_left
        gini_left = 1.0 - (left * left).sum(axis=1) / (n_left * n_left)
        gini_right = 1.0 - (right * right).sum(axis=1) / (n_right * n_right)
        decrease = parent - (n_left * gini_left + n_right * gini_right) / n
        k = int(np.argmax(decrease))
        if decrease[k] > best_decrease + 1e-15:
            best_decrease = float(decrease[k])
            i = pos[k]
            best = (f, (xs[i - 1] + xs[i]) / 2.0)
    return best


def _grow(x: np.ndarray, y: np.ndarray, n_classes: int, cfg: ForestConfig, gen) -> _Node:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    n = y.size
    if n <= cfg.min_leaf or counts.max() == n:
        return _Node(dist=counts / n)
    m = cfg.n_candidates(x.shape[1])
    candidates = np.sort(gen.choice(x.shape[1], size=m, replace=False))
    onehot = np.eye(n_classes)[y]
    split = _best_split(x, onehot, candidates, cfg.min_leaf)
    if split is None:
        return _Node(dist=counts / n)
    f, thr = split
    go_left = x[:, f] <= thr
    return _Node(feature=f, threshold=thr,
                 left=_grow(x[go_left], y[go_left], n_classes, cfg, gen),
                 right=_grow(x[~go_left], y[~go_left], n_classes, cfg, gen))


def _tree_proba(node: _Node, x: np.ndarray, out: np.ndarray, rows: np.ndarray) -> None:
    if node.dist is not None:
        out[rows] += node.dist
        return
    go_left = x[rows, node.feature] <= node.threshold
    if go_left.any():
        _tree_proba(node.left, x, out, rows[go_left])
    if not go_left.all():
        _tree_proba(node.right, x, out, rows[~go_left])


def rf_fit_predict(train_x, train_y, test_x, cfg: ForestConfig,
                   n_classes: int | None = None) -> np.ndarray:
    """Fit the forest and return test per-class probabilities.  Single-class
    training data yields that class with probability 1."""
    train_x = as_matrix(train_x, "train X")
    test_x = as_matrix(test_x, "test X")
    train_y = np.asarray(train_y, dtype=np.int64)
    if train_y.shape != (train_x.shape[0],):
        raise ValueError("train labels must align with train rows")
    if test_x.shape[0] == 0:
        raise ValueError("empty test set")
    if test_x.shape[1] != train_x.shape[1]:
        raise ValueError(f"test has {test_x.shape[1]} features, train has {train_x.shape[1]}")
    if n_classes is None:
        n_classes = int(train_y.max()) + 1
    if train_y.min() < 0 or train_y.max() >= n_classes:
        raise ValueError("label index out of range")

    proba = np.zeros((test_x.shape[0], n_classes))
    n = train_x.shape[0]
    for t in range(cfg.n_trees):
        gen = cfg.rng.fork(f"tree{t}").generator
        if cfg.bootstrap:
            rows = gen.integers(0, n, size=n)
            bx, by = train_x[rows], train_y[rows]
        else:
            bx, by = train_x, train_y
        root = _grow(bx, by, n_classes, cfg, gen)
        _tree_proba(root, test_x, proba, np.arange(test_x.shape[0]))
    return proba / cfg.n_trees


def _binary_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Mann-Whitney AUC with midranks, so tied scores count 0.5 a pair."""
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("binary AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < labels.size:
        j = i
        while j + 1 < labels.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos_ranks = ranks[labels == 1].sum()
    return (pos_ranks - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_score(labels, probabilities) -> float:
    """Binary: Mann-Whitney on the positive-class probability.  Multiclass:
    macro one-vs-rest, skipping classes without both positives and
    negatives in the labels."""
    labels = np.asarray(labels, dtype=np.int64)
    prob = np.asarray(probabilities, dtype=np.float64)
    if prob.ndim == 1:
        if prob.shape != labels.shape:
            raise ValueError("scores must align with labels")
        present = np.unique(labels)
        if present.size != 2:
            raise ValueError("1-D scores imply binary labels, need exactly 2 classes present")
        return _binary_auc((labels == present.max()).astype(np.int64), prob)
    if prob.shape[0] != labels.shape[0]:
        raise ValueError("probability rows must align with labels")
    n_classes = prob.shape[1]
    if n_classes == 2:
        return _binary_auc((labels == 1).astype(np.int64), prob[:, 1])
    per_class = []
    for c in range(n_classes):
        pos = labels == c
        if pos.any() and (~pos).any():
            per_class.append(_binary_auc(pos.astype(np.int64), prob[:, c]))
    if not per_class:
        raise ValueError("no class has both positives and negatives")
    return float(np.mean(per_class))


def ward_cluster(x, k: int, return_merges: bool = False):
    """Bottom-up Ward agglomeration over Euclidean distances, cut at k
    clusters.  Merge cost = increase in within-cluster sum of squares,
    updated with the Lance-Williams recurrence; ties break on the smallest
    (i, j) slot pair.  Labels are consecutive ints by first row occurrence."""
    x = as_matrix(x, "X")
    n = x.shape[0]
    if not (1 <= k <= n):
        raise ValueError(f"k must be in [1, {n}]")

    sq = (x * x).sum(axis=1)
    cost = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)  # squared distances
    np.maximum(cost, 0.0, out=cost)
    cost *= 0.5  # singleton merge cost = ||xi - xj||^2 / 2
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    member = np.arange(n)  # row -> cluster slot
    inf = np.inf
    cost[np.diag_indices(n)] = inf

    merges = []
    for _ in range(n - k):
        masked = np.where(active[:, None] & active[None, :], cost, inf)
        masked[np.tril_indices(n)] = inf
        flat = int(np.argmin(masked))
        i, j = divmod(flat, n)
        if not np.isfinite(masked[i, j]):
            raise ValueError("no finite merge cost available")
        merges.append((i, j))
        ni, nj, d_ij = sizes[i], sizes[j], cost[i, j]
        others = np.flatnonzero(active)
        others = others[(others != i) & (others != j)]
        nk = sizes[others]
        new = ((ni + nk) * cost[i, others] + (nj + nk) * cost[j, others] - nk * d_ij) / (ni + nj + nk)
        cost[i, others] = new
        cost[others, i] = new
        sizes[i] = ni + nj
        active[j] = False
        member[member == j] = i

    labels = np.empty(n, dtype=np.int64)
    seen = {}
    for r in range(n):
        labels[r] = seen.setdefault(member[r], len(seen))
    if return_merges:
        return labels, merges
    return labels


@dataclass(frozen=True)
class ClusterQuality:
    v_measure: float
    homogeneity: float
    completeness: float

    def __post_init__(self):
        for name in ("v_measure", "homogeneity", "completeness"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name} out of [0, 1]: {val}")


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def v_measure(true_labels, pred_labels) -> ClusterQuality:
    """Rosenberg-Hirschberg V-measure (beta = 1, natural-log entropies).
    h := 1 when H(C) = 0 and c := 1 when H(K) = 0."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    if true_labels.shape != pred_labels.shape or true_labels.ndim != 1:
        raise ValueError("label vectors must be 1-D and equal length")
    if true_labels.size == 0:
        raise ValueError("empty label vectors")
    _, ti = np.unique(true_labels, return_inverse=True)
    _, pi = np.unique(pred_labels, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1))
    np.add.at(table, (ti, pi), 1.0)
    n = true_labels.size

    h_c = _entropy(table.sum(axis=1))
    h_k = _entropy(table.sum(axis=0))
    h_c_given_k = sum(table[:, kcol].sum() / n * _entropy(table[:, kcol])
                      for kcol in range(table.shape[1]) if table[:, kcol].sum() > 0)
    h_k_given_c = sum(table[crow].sum() / n * _entropy(table[crow])
                      for crow in range(table.shape[0]) if table[crow].sum() > 0)
    h = 1.0 if h_c == 0.0 else 1.0 - h_c_given_k / h_c
    c = 1.0 if h_k == 0.0 else 1.0 - h_k_given_c / h_k
    h = min(1.0, max(0.0, h))
    c = min(1.0, max(0.0, c))
    v = 0.0 if h + c == 0.0 else 2.0 * h * c / (h + c)
    return ClusterQuality(v_measure=v, homogeneity=h, completeness=c)


def subset_top_p(ranks, p: float) -> np.ndarray:
    """Indices of the ceil(p/100 * N) best-ranked features, in rank order."""
    if not (0.0 < p <= 100.0):
        raise ValueError("p must be in (0, 100]")
    rank_vals = np.asarray(ranks.ranks, dtype=np.int64)
    count = max(1, math.ceil(p / 100.0 * rank_vals.size))
    return np.argsort(rank_vals, kind="stable")[:count]
