"""Multi-view feedforward classifier with mean or concat late fusion.

Each view runs through its own marginal network (two hidden affine+ReLU
layers, then an affine projection to an embedding).  Embeddings are fused
by feature-wise averaging over present views or by concatenation, then a
post-fusion hidden layer and a final affine head produce class logits.
Every marginal network also carries its own affine prediction head.

Training is full-batch Adam on a weighted focal loss (fusion head plus
per-view heads), stopped on a validation-loss plateau, then re-run from
the same seed on train+validation for 20% more iterations.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .nncore import AdamState, FocalLossParams, adam_step, as_matrix, check_finite, focal_loss, softmax
from .rng import RngStream, stream

_VIEW_SLOTS = 8  # w1 b1 w2 b2 w3 b3 head_w head_b
_FUSION_SLOTS = 4  # fuse_w fuse_b out_w out_b


@dataclass(frozen=True)
class LayerPlan:
    """Widths of every layer: per-view (input, hidden1, hidden2, embedding),
    fusion scheme, post-fusion hidden width and class count."""

    view_ids: tuple
    input_dims: tuple
    hidden1: tuple
    hidden2: tuple
    embedding: tuple
    fusion: str = "mean"
    post_fusion: int = 32
    n_classes: int = 2

    def __post_init__(self):
        n = len(self.view_ids)
        if n == 0:
            raise ValueError("plan needs at least one view")
        for name in ("input_dims", "hidden1", "hidden2", "embedding"):
            vals = getattr(self, name)
            if len(vals) != n:
                raise ValueError(f"{name} must have one entry per view")
            if any(v < 1 for v in vals):
                raise ValueError(f"{name} widths must be >= 1")
        if self.post_fusion < 1 or self.n_classes < 2:
            raise ValueError("post_fusion must be >= 1 and n_classes >= 2")
        if self.fusion not in ("mean", "concat"):
            raise ValueError(f"unknown fusion scheme {self.fusion!r}")
        if self.fusion == "mean" and len(set(self.embedding)) != 1:
            raise ValueError("mean fusion requires equal embedding widths")

    @property
    def n_views(self) -> int:
        return len(self.view_ids)

    @property
    def fused_dim(self) -> int:
        return self.embedding[0] if self.fusion == "mean" else sum(self.embedding)

    def to_dict(self) -> dict:
        return {
            "view_ids": list(self.view_ids),
            "input_dims": list(self.input_dims),
            "hidden1": list(self.hidden1),
            "hidden2": list(self.hidden2),
            "embedding": list(self.embedding),
            "fusion": self.fusion,
            "post_fusion": self.post_fusion,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LayerPlan":
        return cls(
            view_ids=tuple(d["view_ids"]),
            input_dims=tuple(int(v) for v in d["input_dims"]),
            hidden1=tuple(int(v) for v in d["hidden1"]),
            hidden2=tuple(int(v) for v in d["hidden2"]),
            embedding=tuple(int(v) for v in d["embedding"]),
            fusion=d["fusion"],
            post_fusion=int(d["post_fusion"]),
            n_classes=int(d["n_classes"]),
        )


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    max_iterations: int = 2000
    patience: int = 50
    min_delta: float = 1e-5
    dropout: float = 0.1
    focal: FocalLossParams = field(default_factory=FocalLossParams)
    loss_weights: tuple = ()  # empty = 1.0 for fusion head and every view head
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.patience < self.max_iterations):
            raise ValueError("patience must be in [0, max_iterations)")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout rate must be in [0, 1)")

    def weights_vector(self, n_views: int) -> np.ndarray:
        if not self.loss_weights:
            return np.ones(n_views + 1)
        if len(self.loss_weights) != n_views + 1:
            raise ValueError(f"loss_weights needs {n_views + 1} entries (fusion first), got {len(self.loss_weights)}")
        return np.asarray(self.loss_weights, dtype=np.float64)


def init_params(plan: LayerPlan, rng: RngStream) -> list:
    """Fan-in-scaled uniform weights (bound sqrt(6/fan_in)), zero biases."""
    gen = rng.generator

    def affine(d_in, d_out):
        bound = math.sqrt(6.0 / d_in)
        return gen.uniform(-bound, bound, size=(d_in, d_out))

    params = []
    for v in range(plan.n_views):
        d, h1, h2, e = plan.input_dims[v], plan.hidden1[v], plan.hidden2[v], plan.embedding[v]
        params += [affine(d, h1), np.zeros(h1), affine(h1, h2), np.zeros(h2), affine(h2, e), np.zeros(e)]
        params += [affine(e, plan.n_classes), np.zeros(plan.n_classes)]
    params += [affine(plan.fused_dim, plan.post_fusion), np.zeros(plan.post_fusion)]
    params += [affine(plan.post_fusion, plan.n_classes), np.zeros(plan.n_classes)]
    return params


def fuse_latents(latents: list, scheme: str, mask: np.ndarray | None = None) -> np.ndarray:
    """Merge per-view embeddings: presence-weighted mean, or concatenation.

    Mean averages over present views only; concat requires every view
    present for every sample.
    """
    if scheme == "mean":
        widths = {m.shape[1] for m in latents}
        if len(widths) != 1:
            raise ValueError("mean fusion requires equal embedding widths")
        if mask is None:
            return sum(latents) / len(latents)
        counts = mask.sum(axis=1).astype(np.float64)
        if np.any(counts < 1):
            raise ValueError("every sample needs at least one present view")
        fused = np.zeros_like(latents[0])
        for v, latent in enumerate(latents):
            fused += latent * mask[:, v, None]
        return fused / counts[:, None]
    if scheme == "concat":
        if mask is not None and not mask.all():
            raise ValueError("concat fusion does not support missing views")
        return np.concatenate(latents, axis=1)
    raise ValueError(f"unknown fusion scheme {scheme!r}")


class ForwardCache:
    """All intermediate activations of one forward pass (kept for backprop
    and attribution)."""

    def __init__(self):
        self.x = []
        self.z1, self.d1 = [], []
        self.z2, self.d2 = [], []
        self.m1, self.m2 = [], []
        self.emb = []
        self.view_logits = []
        self.fused = None
        self.zf = None
        self.df = None
        self.mf = None
        self.logits = None
        self.mask = None


def _dropout_mask(gen, shape, rate):
    return (gen.uniform(size=shape) >= rate) / (1.0 - rate)


def _forward(plan: LayerPlan, params: list, views: list, mask: np.ndarray | None,
             train: bool, dropout: float, rng: RngStream | None) -> ForwardCache:
    n = views[0].shape[0]
    if len(views) != plan.n_views:
        raise ValueError(f"expected {plan.n_views} views, got {len(views)}")
    use_dropout = train and dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng stream")
    gen = rng.generator if use_dropout else None

    cache = ForwardCache()
    cache.mask = mask
    for v in range(plan.n_views):
        x = as_matrix(views[v], f"view {plan.view_ids[v]}")
        if x.shape != (n, plan.input_dims[v]):
            raise ValueError(
                f"view {plan.view_ids[v]} has shape {x.shape}, plan expects {(n, plan.input_dims[v])}")
        w1, b1, w2, b2, w3, b3, hw, hb = params[v * _VIEW_SLOTS:(v + 1) * _VIEW_SLOTS]
        z1 = x @ w1 + b1
        d1 = np.maximum(z1, 0.0)
        m1 = _dropout_mask(gen, d1.shape, dropout) if use_dropout else None
        if m1 is not None:
            d1 = d1 * m1
        z2 = d1 @ w2 + b2
        d2 = np.maximum(z2, 0.0)
        m2 = _dropout_mask(gen, d2.shape, dropout) if use_dropout else None
        if m2 is not None:
            d2 = d2 * m2
        emb = d2 @ w3 + b3
        cache.x.append(x)
        cache.z1.append(z1)
        cache.m1.append(m1)
        cache.d1.append(d1)
        cache.z2.append(z2)
        cache.m2.append(m2)
        cache.d2.append(d2)
        cache.emb.append(emb)
        cache.view_logits.append(emb @ hw + hb)

    fw, fb, ow, ob = params[plan.n_views * _VIEW_SLOTS:]
    cache.fused = fuse_latents(cache.emb, plan.fusion, mask)
    cache.zf = cache.fused @ fw + fb
    df = np.maximum(cache.zf, 0.0)
    cache.mf = _dropout_mask(gen, df.shape, dropout) if use_dropout else None
    if cache.mf is not None:
        df = df * cache.mf
    cache.df = df
    cache.logits = df @ ow + ob
    return cache


def _backward(plan: LayerPlan, params: list, cache: ForwardCache,
              g_logits: np.ndarray, g_view_logits: list) -> list:
    """Gradients w.r.t. every parameter, in init_params order."""
    n_views = plan.n_views
    fw, fb, ow, ob = params[n_views * _VIEW_SLOTS:]
    grads = [None] * len(params)

    g_ow = cache.df.T @ g_logits
    g_ob = g_logits.sum(axis=0)
    g_df = g_logits @ ow.T
    if cache.mf is not None:
        g_df = g_df * cache.mf
    g_zf = g_df * (cache.zf > 0.0)
    g_fw = cache.fused.T @ g_zf
    g_fb = g_zf.sum(axis=0)
    g_fused = g_zf @ fw.T
    grads[n_views * _VIEW_SLOTS:] = [g_fw, g_fb, g_ow, g_ob]

    # route fused gradient back to each view's embedding
    if plan.fusion == "mean":
        if cache.mask is None:
            g_embs = [g_fused / n_views for _ in range(n_views)]
        else:
            counts = cache.mask.sum(axis=1).astype(np.float64)
            g_embs = [g_fused * (cache.mask[:, v] / counts)[:, None] for v in range(n_views)]
    else:
        offsets = np.cumsum([0] + list(plan.embedding))
        g_embs = [g_fused[:, offsets[v]:offsets[v + 1]] for v in range(n_views)]

    for v in range(n_views):
        w1, b1, w2, b2, w3, b3, hw, hb = params[v * _VIEW_SLOTS:(v + 1) * _VIEW_SLOTS]
        g_emb = g_embs[v]
        g_hw = np.zeros_like(hw)
        g_hb = np.zeros_like(hb)
        if g_view_logits is not None and g_view_logits[v] is not None:
            gvl = g_view_logits[v]
            g_hw = cache.emb[v].T @ gvl
            g_hb = gvl.sum(axis=0)
            g_emb = g_emb + gvl @ hw.T
        g_w3 = cache.d2[v].T @ g_emb
        g_b3 = g_emb.sum(axis=0)
        g_d2 = g_emb @ w3.T
        if cache.m2[v] is not None:
            g_d2 = g_d2 * cache.m2[v]
        g_z2 = g_d2 * (cache.z2[v] > 0.0)
        g_w2 = cache.d1[v].T @ g_z2
        g_b2 = g_z2.sum(axis=0)
        g_d1 = g_z2 @ w2.T
        if cache.m1[v] is not None:
            g_d1 = g_d1 * cache.m1[v]
        g_z1 = g_d1 * (cache.z1[v] > 0.0)
        g_w1 = cache.x[v].T @ g_z1
        g_b1 = g_z1.sum(axis=0)
        grads[v * _VIEW_SLOTS:(v + 1) * _VIEW_SLOTS] = [g_w1, g_b1, g_w2, g_b2, g_w3, g_b3, g_hw, g_hb]
    return grads


def total_loss(fused_logits, view_logits, labels, weights, focal: FocalLossParams,
               mask: np.ndarray | None = None, want_grads: bool = False):
    """Weighted focal loss: weights[0] * FL(fusion) + sum_v weights[1+v] * FL(view v).

    Per-view terms average over samples where that view is present.  With
    want_grads, also returns the logit gradients (fusion, per-view list).
    """
    fused_logits = as_matrix(fused_logits, "fused logits")
    n = fused_logits.shape[0]
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(view_logits) + 1,):
        raise ValueError(f"need {len(view_logits) + 1} loss weights, got {weights.shape}")

    loss, g_fused = focal_loss(softmax(fused_logits), labels, focal)
    loss *= weights[0]
    g_fused = g_fused * weights[0] if want_grads else None

    g_views = [None] * len(view_logits) if want_grads else None
    for v, logits_v in enumerate(view_logits):
        if logits_v.shape[0] != n:
            raise ValueError("per-view logits must have the same row count as fused logits")
        if weights[1 + v] == 0.0:
            continue
        present = mask[:, v] if mask is not None else np.ones(n, dtype=bool)
        if not present.any():
            continue
        loss_v, grad_v = focal_loss(softmax(logits_v[present]), np.asarray(labels)[present], focal)
        loss += weights[1 + v] * loss_v
        if want_grads:
            full = np.zeros_like(logits_v)
            full[present] = weights[1 + v] * grad_v
            g_views[v] = full
    if want_grads:
        return loss, g_fused, g_views
    return loss


class PlateauTracker:
    """Stop once the monitored loss has not improved by more than min_delta
    for `patience` consecutive iterations."""

    def __init__(self, min_delta: float, patience: int):
        self.min_delta = min_delta
        self.patience = patience
        self.best = None
        self.stale = 0

    def update(self, value: float) -> bool:
        if self.best is None or value < self.best - self.min_delta:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainHistory:
    stop_iteration: int
    phase1_train_loss: np.ndarray
    phase1_val_loss: np.ndarray
    phase2_train_loss: np.ndarray


@dataclass
class TrainedModel:
    """A trained multi-view net.  Immutable once train() returns."""

    plan: LayerPlan
    params: list
    dropout_rate: float
    seed: int
    loss_weights: tuple
    history: TrainHistory | None = None

    def forward(self, views, mask=None, train=False, rng=None) -> ForwardCache:
        return _forward(self.plan, self.params, views, mask, train, self.dropout_rate, rng)

    def logits(self, views, mask=None) -> np.ndarray:
        return self.forward(views, mask).logits

    def predict_proba(self, views, mask=None) -> np.ndarray:
        return softmax(self.logits(views, mask))


def _split_views(dataset, idx):
    return [np.ascontiguousarray(view.values[idx]) for view in dataset.views]


def train(plan: LayerPlan, dataset, cfg: TrainConfig) -> TrainedModel:
    """Full-batch Adam to a validation plateau, then retrain from the same
    seed on train+validation for ceil(1.2 * T) iterations."""
    for v, view in enumerate(dataset.views):
        if view.values.shape[1] != plan.input_dims[v]:
            raise ValueError(
                f"view {view.view_id} has {view.values.shape[1]} features, plan expects {plan.input_dims[v]}")
    if plan.n_classes != dataset.n_classes:
        raise ValueError(f"plan has {plan.n_classes} classes, dataset has {dataset.n_classes}")

    tr = dataset.split_indices("train")
    va = dataset.split_indices("val")
    if tr.size == 0 or va.size == 0:
        raise ValueError("training needs non-empty train and validation splits")

    weights = cfg.weights_vector(plan.n_views)

    def run_phase(idx, n_iters, val_idx):
        params = init_params(plan, stream(cfg.seed, "init"))
        adam = AdamState.for_params(params, lr=cfg.learning_rate, beta1=cfg.beta1,
                                    beta2=cfg.beta2, epsilon=cfg.epsilon)
        drop_rng = stream(cfg.seed, "dropout")
        views = _split_views(dataset, idx)
        mask = dataset.presence[idx]
        labels = dataset.labels[idx]
        val_views = _split_views(dataset, val_idx) if val_idx is not None else None
        val_mask = dataset.presence[val_idx] if val_idx is not None else None
        val_labels = dataset.labels[val_idx] if val_idx is not None else None

        tracker = PlateauTracker(cfg.min_delta, cfg.patience)
        train_hist, val_hist = [], []
        stop_at = None
        for it in range(1, n_iters + 1):
            cache = _forward(plan, params, views, mask, True, cfg.dropout, drop_rng)
            loss, g_fused, g_views = total_loss(cache.logits, cache.view_logits, labels,
                                                weights, cfg.focal, mask, want_grads=True)
            if not np.isfinite(loss):
                raise ValueError(f"non-finite training loss at iteration {it}")
            grads = _backward(plan, params, cache, g_fused, g_views)
            adam_step(params, grads, adam)
            train_hist.append(loss)
            if val_idx is not None:
                vc = _forward(plan, params, val_views, val_mask, False, cfg.dropout, None)
                val_loss = total_loss(vc.logits, vc.view_logits, val_labels, weights, cfg.focal, val_mask)
                if not np.isfinite(val_loss):
                    raise ValueError(f"non-finite validation loss at iteration {it}")
                val_hist.append(val_loss)
                if tracker.update(val_loss):
                    stop_at = it
                    break
        if stop_at is None:
            stop_at = n_iters
        return params, stop_at, np.asarray(train_hist), np.asarray(val_hist)

    _, stop_iter, p1_train, p1_val = run_phase(tr, cfg.max_iterations, va)
    final_iters = math.ceil(1.2 * stop_iter)
    both = np.concatenate([tr, va])
    params, _, p2_train, _ = run_phase(both, final_iters, None)

    history = TrainHistory(stop_iteration=stop_iter, phase1_train_loss=p1_train,
                           phase1_val_loss=p1_val, phase2_train_loss=p2_train)
    return TrainedModel(plan=plan, params=params, dropout_rate=cfg.dropout, seed=cfg.seed,
                        loss_weights=tuple(weights), history=history)


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(d["data"]), dtype="<f8").astype(np.float64)
    return arr.reshape(d["shape"])


def save_model(model: TrainedModel, path) -> None:
    """Write a self-describing JSON artifact; weights round-trip bit-exactly."""
    doc = {
        "format": "shapaudit-model",
        "version": 1,
        "plan": model.plan.to_dict(),
        "dropout_rate": model.dropout_rate,
        "seed": model.seed,
        "loss_weights": list(model.loss_weights),
        "params": [_encode_array(p) for p in model.params],
    }
    if model.history is not None:
        doc["history"] = {
            "stop_iteration": model.history.stop_iteration,
            "phase1_train_loss": _encode_array(model.history.phase1_train_loss.reshape(1, -1)),
            "phase1_val_loss": _encode_array(model.history.phase1_val_loss.reshape(1, -1)),
            "phase2_train_loss": _encode_array(model.history.phase2_train_loss.reshape(1, -1)),
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path) -> TrainedModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "shapaudit-model":
        raise ValueError(f"{path} is not a shapaudit model artifact")
    params = [_decode_array(d) for d in doc["params"]]
    params = [p.reshape(-1) if len(d["shape"]) == 1 else p for p, d in zip(params, doc["params"])]
    history = None
    if "history" in doc:
        h = doc["history"]
        history = TrainHistory(
            stop_iteration=int(h["stop_iteration"]),
            phase1_train_loss=_decode_array(h["phase1_train_loss"]).ravel(),
            phase1_val_loss=_decode_array(h["phase1_val_loss"]).ravel(),
            phase2_train_loss=_decode_array(h["phase2_train_loss"]).ravel(),
        )
    return TrainedModel(plan=LayerPlan.from_dict(doc["plan"]), params=params,
                        dropout_rate=float(doc["dropout_rate"]), seed=int(doc["seed"]),
                        loss_weights=tuple(doc["loss_weights"]), history=history)
