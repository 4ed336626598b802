"""Noise-feature augmentation and layer-sizing schemes.

Noise columns are Normal(mu, sigma^2) fills where each (mu, sigma^2) is a
linked pair sampled with replacement from the original features' empirical
(mean, variance) pairs.  Sizing schemes answer "how do layer widths react
when a view's input dimension changes": not at all (static), by
reapportioning a conserved total width (dynamic), or by scaling
combination widths proportionally to input dims (proportional-concat).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataio import ViewMatrix
from .multiview import LayerPlan
from .rng import RngStream

NOISE_PREFIX = "NOISE__"


@dataclass
class NoiseSpec:
    view_id: str
    n_noise: int
    rng: RngStream

    def __post_init__(self):
        if self.n_noise < 0:
            raise ValueError("n_noise must be >= 0")


def gen_noise_features(view: ViewMatrix, spec: NoiseSpec) -> ViewMatrix:
    """Append n_noise seeded noise columns to a view.  Original columns are
    untouched; noise names carry the NOISE__ prefix."""
    if view.view_id != spec.view_id:
        raise ValueError(f"spec targets view {spec.view_id!r}, got {view.view_id!r}")
    if spec.n_noise == 0:
        return view
    original = [i for i, name in enumerate(view.feature_names) if not name.startswith(NOISE_PREFIX)]
    if not original:
        raise ValueError(f"view {view.view_id} has no original features to sample stats from")
    base = view.values[:, original]
    means = base.mean(axis=0)
    variances = base.var(axis=0, ddof=1) if base.shape[0] > 1 else np.zeros(base.shape[1])
    assert (variances >= 0.0).all()

    gen = spec.rng.generator
    src = gen.integers(0, len(original), size=spec.n_noise)
    n = view.n_samples
    cols = np.empty((n, spec.n_noise))
    for j, k in enumerate(src):
        cols[:, j] = gen.normal(means[k], math.sqrt(variances[k]), size=n)

    start = sum(1 for name in view.feature_names if name.startswith(NOISE_PREFIX))
    new_names = tuple(f"{NOISE_PREFIX}{start + j:04d}" for j in range(spec.n_noise))
    return ViewMatrix(view.view_id, view.sample_ids,
                      view.feature_names + new_names,
                      np.concatenate([view.values, cols], axis=1))


def augment_dataset(dataset, view_id: str, n_noise: int, rng: RngStream):
    """Dataset copy with noise columns appended to one view."""
    views = []
    for view in dataset.views:
        if view.view_id == view_id:
            views.append(gen_noise_features(view, NoiseSpec(view_id, n_noise, rng)))
        else:
            views.append(view)
    cls = type(dataset)
    return cls(views, dataset.labels.copy(), dataset.class_names,
               dataset.split.copy(), dataset.presence.copy())


def dynamic_layer_plan(base: LayerPlan, new_dims, floor_width: int = 8) -> LayerPlan:
    """Reapportion each depth's conserved total width between two views in
    proportion to the new input dims: w1' = max(floor(T*d1/(d1+d2)), floor),
    w2' = T - w1'.  Unchanged dims return the base plan as-is."""
    if base.n_views != 2:
        raise ValueError("dynamic sizing is defined for two-view plans")
    new_dims = tuple(int(d) for d in new_dims)
    if len(new_dims) != 2:
        raise ValueError("need new dims for both views")
    if any(n < d for n, d in zip(new_dims, base.input_dims)):
        raise ValueError("new dims must be >= original dims")
    if floor_width < 1:
        raise ValueError("floor width must be >= 1")
    if new_dims == tuple(base.input_dims):
        return base

    d1, d2 = new_dims

    def split(total: int):
        w1 = max(math.floor(total * d1 / (d1 + d2)), floor_width)
        w2 = total - w1
        if w2 < floor_width:
            raise ValueError(f"total width {total} cannot honor floor {floor_width} for both views")
        return w1, w2

    h1 = split(sum(base.hidden1))
    h2 = split(sum(base.hidden2))
    emb = split(sum(base.embedding))
    if base.fusion == "mean" and emb[0] != emb[1]:
        raise ValueError("dynamic sizing under mean fusion would produce unequal "
                         "embedding widths; use concat fusion")
    return LayerPlan(view_ids=base.view_ids, input_dims=new_dims, hidden1=h1,
                     hidden2=h2, embedding=emb, fusion=base.fusion,
                     post_fusion=base.post_fusion, n_classes=base.n_classes)


def proportional_concat_plan(base_width: int, dims) -> tuple:
    """Per-view combination widths: round-half-up(base_width * d_v / d_min).
    The smallest view keeps base_width."""
    dims = tuple(int(d) for d in dims)
    if base_width < 1:
        raise ValueError("base width must be >= 1")
    if not dims or any(d < 1 for d in dims):
        raise ValueError("dims must be >= 1")
    d_min = min(dims)
    return tuple(math.floor(base_width * d / d_min + 0.5) for d in dims)


@dataclass(frozen=True)
class SizingScheme:
    """How a base plan reacts to changed input dims."""

    kind: str
    base: LayerPlan
    floor_width: int = 8

    def __post_init__(self):
        if self.kind not in ("static", "dynamic", "proportional-concat"):
            raise ValueError(f"unknown sizing scheme {self.kind!r}")
        if self.floor_width < 1:
            raise ValueError("floor width must be >= 1")

    def apply(self, new_dims) -> LayerPlan:
        new_dims = tuple(int(d) for d in new_dims)
        if len(new_dims) != self.base.n_views:
            raise ValueError(f"need {self.base.n_views} dims, got {len(new_dims)}")
        if any(d < 1 for d in new_dims):
            raise ValueError("dims must be >= 1")
        if self.kind == "static":
            if new_dims == tuple(self.base.input_dims):
                return self.base
            return LayerPlan(view_ids=self.base.view_ids, input_dims=new_dims,
                             hidden1=self.base.hidden1, hidden2=self.base.hidden2,
                             embedding=self.base.embedding, fusion=self.base.fusion,
                             post_fusion=self.base.post_fusion, n_classes=self.base.n_classes)
        if self.kind == "dynamic":
            return dynamic_layer_plan(self.base, new_dims, self.floor_width)
        # proportional-concat: the view with the smallest input keeps its
        # base combination width, the rest scale with their input dims
        if self.base.fusion != "concat":
            raise ValueError("proportional-concat sizing requires a concat-fusion base plan")
        anchor = min(range(len(new_dims)), key=lambda v: (new_dims[v], v))
        emb = proportional_concat_plan(self.base.embedding[anchor], new_dims)
        return LayerPlan(view_ids=self.base.view_ids, input_dims=new_dims,
                         hidden1=self.base.hidden1, hidden2=self.base.hidden2,
                         embedding=emb, fusion="concat",
                         post_fusion=self.base.post_fusion, n_classes=self.base.n_classes)
