"""DeepSHAP attribution for the multi-view net.

For each background reference, DeepLIFT multipliers are chained from the
pre-softmax fused logits back to the inputs: affine layers contribute
their weight matrix, ReLU units the rescale-rule coefficient
(ReLU(z_x) - ReLU(z_b)) / (z_x - z_b), and the fusion junction either
splits the multiplier evenly over views (mean) or routes slices (concat).
phi against one reference is multiplier * (x - b); the reported phi is
the mean over the background set.  The softmax layer and the per-view
heads are outside the multiplier chain.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .multiview import TrainedModel, _VIEW_SLOTS
from .nncore import as_matrix

RESCALE_EPS = 1e-9
COMPLETENESS_RTOL = 1e-6


@dataclass
class BackgroundSet:
    """Reference samples, one matrix per view, equal row counts."""

    views: list

    def __post_init__(self):
        if not self.views:
            raise ValueError("background set needs at least one view")
        self.views = [as_matrix(v, f"background view {i}") for i, v in enumerate(self.views)]
        rows = {v.shape[0] for v in self.views}
        if len(rows) != 1:
            raise ValueError("background views must have equal row counts")
        if self.views[0].shape[0] < 1:
            raise ValueError("background set needs at least one reference sample")

    @property
    def n_references(self) -> int:
        return self.views[0].shape[0]


def background_from_dataset(dataset, size: int | None = None, rng=None) -> BackgroundSet:
    """Default background: the full training split.  With size k, a seeded
    subsample without replacement."""
    idx = dataset.split_indices("train")
    if idx.size == 0:
        raise ValueError("dataset has no train split to draw a background from")
    if size is not None:
        if size < 1 or size > idx.size:
            raise ValueError(f"background size must be in [1, {idx.size}]")
        if rng is None:
            raise ValueError("subsampled background needs an rng stream")
        idx = np.sort(rng.generator.choice(idx, size=size, replace=False))
    return BackgroundSet([view.values[idx] for view in dataset.views])


@dataclass
class AttributionResult:
    """phi indexed by (sample, class, view, feature), plus the per-sample
    per-class output delta f_c(x) - mean_b f_c(b)."""

    view_ids: tuple
    feature_names: list
    phi: list
    output_delta: np.ndarray
    class_names: tuple
    sample_ids: tuple

    @property
    def n_samples(self) -> int:
        return self.output_delta.shape[0]

    @property
    def n_classes(self) -> int:
        return self.output_delta.shape[1]

    def phi_total(self) -> np.ndarray:
        """Sum of phi over every view and feature, per (sample, class)."""
        return sum(p.sum(axis=2) for p in self.phi)


def verify_completeness(result: AttributionResult, rtol: float = COMPLETENESS_RTOL) -> float:
    """Largest completeness violation, normalized by max(1, |delta|).
    Raises if it exceeds rtol."""
    gap = np.abs(result.phi_total() - result.output_delta)
    scale = np.maximum(1.0, np.abs(result.output_delta))
    worst = float((gap / scale).max()) if gap.size else 0.0
    if worst > rtol:
        raise ValueError(f"completeness violated: relative gap {worst:.3e} > {rtol:.1e}")
    return worst


def _rescale(z_x: np.ndarray, z_b: np.ndarray) -> np.ndarray:
    """Rescale-rule ReLU multipliers for all samples against one reference.
    Degenerate units (|z_x - z_b| < 1e-9) fall back to the 0/1 derivative."""
    delta = z_x - z_b
    degenerate = np.abs(delta) < RESCALE_EPS
    safe = np.where(degenerate, 1.0, delta)
    coef = (np.maximum(z_x, 0.0) - np.maximum(z_b, 0.0)) / safe
    return np.where(degenerate, (z_x > 0.0).astype(np.float64), coef)


def deepshap_attribute(model: TrainedModel, samples: list, background: BackgroundSet) -> AttributionResult:
    """Mean-over-backgrounds DeepLIFT attribution of the pre-softmax fused
    logits.  Dropout is always off."""
    plan = model.plan
    if len(samples) != plan.n_views:
        raise ValueError(f"expected {plan.n_views} sample views, got {len(samples)}")
    if len(background.views) != plan.n_views:
        raise ValueError(f"expected {plan.n_views} background views, got {len(background.views)}")
    for v in range(plan.n_views):
        if background.views[v].shape[1] != plan.input_dims[v]:
            raise ValueError(
                f"background view {plan.view_ids[v]} has {background.views[v].shape[1]} features, "
                f"plan expects {plan.input_dims[v]}")

    sx = model.forward(samples)
    sb = model.forward(background.views)
    n, n_cls = sx.logits.shape[0], plan.n_classes
    n_views = plan.n_views
    fw, _, ow, _ = model.params[n_views * _VIEW_SLOTS:]
    offsets = np.cumsum([0] + list(plan.embedding))

    phi = [np.zeros((n, n_cls, plan.input_dims[v])) for v in range(n_views)]
    n_refs = background.n_references
    for b in range(n_refs):
        # multipliers from each post-fusion hidden unit to every logit
        g = np.broadcast_to(ow, (n, *ow.shape)) * _rescale(sx.zf, sb.zf[b])[:, :, None]
        g = np.matmul(fw, g)  # (n, fused_dim, C)
        for v in range(n_views):
            if plan.fusion == "mean":
                gv = g / n_views
            else:
                gv = g[:, offsets[v]:offsets[v + 1], :]
            w1, _, w2, _, w3, _ = model.params[v * _VIEW_SLOTS:v * _VIEW_SLOTS + 6]
            gv = np.matmul(w3, gv) * _rescale(sx.z2[v], sb.z2[v][b])[:, :, None]
            gv = np.matmul(w2, gv) * _rescale(sx.z1[v], sb.z1[v][b])[:, :, None]
            gv = np.matmul(w1, gv)  # (n, d_v, C)
            diff = sx.x[v] - background.views[v][b]
            phi[v] += gv.transpose(0, 2, 1) * diff[:, None, :]
    for v in range(n_views):
        phi[v] /= n_refs

    delta = sx.logits - sb.logits.mean(axis=0)
    result = AttributionResult(
        view_ids=tuple(plan.view_ids),
        feature_names=[tuple(f"{plan.view_ids[v]}_x{i}" for i in range(plan.input_dims[v]))
                       for v in range(n_views)],
        phi=phi,
        output_delta=delta,
        class_names=tuple(f"class{c}" for c in range(n_cls)),
        sample_ids=tuple(f"sample{i}" for i in range(n)),
    )
    verify_completeness(result)
    return result


def annotate_result(result: AttributionResult, feature_names=None, sample_ids=None,
                    class_names=None) -> AttributionResult:
    """Replace placeholder names with real ones (lengths must match)."""
    if feature_names is not None:
        if len(feature_names) != len(result.phi):
            raise ValueError("need one name tuple per view")
        for v, names in enumerate(feature_names):
            if len(names) != result.phi[v].shape[2]:
                raise ValueError(f"view {result.view_ids[v]}: {len(names)} names for "
                                 f"{result.phi[v].shape[2]} features")
        result.feature_names = [tuple(names) for names in feature_names]
    if sample_ids is not None:
        if len(sample_ids) != result.n_samples:
            raise ValueError("sample_ids length mismatch")
        result.sample_ids = tuple(sample_ids)
    if class_names is not None:
        if len(class_names) != result.n_classes:
            raise ValueError("class_names length mismatch")
        result.class_names = tuple(class_names)
    return result


@dataclass
class ScoreSet:
    """Aggregated per-feature scores over a declared universe."""

    universe: str
    labels: tuple
    scores: np.ndarray


def aggregate_scores(result: AttributionResult, universe: str = "pooled") -> ScoreSet:
    """score_f = mean over samples and classes of |phi_f|.  Universe is one
    view id or "pooled" (all views concatenated, labels view-qualified)."""
    if result.n_samples == 0:
        raise ValueError("attribution result has no samples")
    if universe == "pooled":
        labels, chunks = [], []
        for v, view_id in enumerate(result.view_ids):
            labels += [f"{view_id}:{name}" for name in result.feature_names[v]]
            chunks.append(np.abs(result.phi[v]).mean(axis=(0, 1)))
        return ScoreSet("pooled", tuple(labels), np.concatenate(chunks))
    if universe in result.view_ids:
        v = result.view_ids.index(universe)
        return ScoreSet(universe, tuple(result.feature_names[v]),
                        np.abs(result.phi[v]).mean(axis=(0, 1)))
    raise ValueError(f"unknown universe {universe!r}; expected 'pooled' or one of {result.view_ids}")


@dataclass
class RankVector:
    """Ordinal ranks, 1 = most important, ties broken by ascending index."""

    universe: str
    labels: tuple
    scores: np.ndarray
    ranks: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if sorted(self.ranks.tolist()) != list(range(1, n + 1)):
            raise ValueError("ranks must be a permutation of 1..N")


def rank_features(scores: ScoreSet) -> RankVector:
    vals = np.asarray(scores.scores, dtype=np.float64)
    if not np.isfinite(vals).all():
        raise ValueError("scores must be finite")
    order = np.lexsort((np.arange(vals.size), -vals))
    ranks = np.empty(vals.size, dtype=np.int64)
    ranks[order] = np.arange(1, vals.size + 1)
    return RankVector(scores.universe, scores.labels, vals, ranks)


def save_attribution_csv(result: AttributionResult, path) -> None:
    """Long-form export: sample_id, class, view, feature, phi."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "class", "view", "feature", "phi"])
        for s in range(result.n_samples):
            for c in range(result.n_classes):
                for v, view_id in enumerate(result.view_ids):
                    row_phi = result.phi[v][s, c]
                    for f, name in enumerate(result.feature_names[v]):
                        writer.writerow([result.sample_ids[s], result.class_names[c],
                                         view_id, name, repr(float(row_phi[f]))])


def save_rank_json(rank: RankVector, path) -> None:
    doc = {
        "universe": rank.universe,
        "labels": list(rank.labels),
        "scores": [float(s) for s in rank.scores],
        "ranks": [int(r) for r in rank.ranks],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
