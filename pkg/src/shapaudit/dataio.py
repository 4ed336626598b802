"""CSV ingestion, sample alignment, splits, standardization and a synthetic
multi-view generator with planted ground truth.

One CSV per view (header = feature names, first column = sample id), one
labels CSV (sample_id, label).  A dataset manifest JSON records file
paths, sha256 checksums, split tags and class names so a dataset reloads
exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream, stream

SPLIT_TAGS = ("train", "val", "test")
_MISSING_TOKENS = {"", "NA", "NaN", "nan"}


@dataclass
class ViewMatrix:
    view_id: str
    sample_ids: tuple
    feature_names: tuple
    values: np.ndarray

    def __post_init__(self):
        self.sample_ids = tuple(str(s) for s in self.sample_ids)
        self.feature_names = tuple(str(f) for f in self.feature_names)
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValueError(f"view {self.view_id}: duplicate sample ids")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError(f"view {self.view_id}: duplicate feature names")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=np.float64))
        if vals.shape != (len(self.sample_ids), len(self.feature_names)):
            raise ValueError(
                f"view {self.view_id}: values shape {vals.shape} does not match "
                f"{len(self.sample_ids)} samples x {len(self.feature_names)} features")
        if not np.isfinite(vals).all():
            raise ValueError(f"view {self.view_id}: non-finite values")
        self.values = vals

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def reindex(self, sample_ids) -> "ViewMatrix":
        pos = {s: i for i, s in enumerate(self.sample_ids)}
        idx = np.array([pos[s] for s in sample_ids], dtype=np.intp)
        return ViewMatrix(self.view_id, tuple(sample_ids), self.feature_names, self.values[idx])


@dataclass
class MultiViewDataset:
    """Row-aligned views plus labels, class names, split tags and a
    per-sample view-presence mask."""

    views: list
    labels: np.ndarray
    class_names: tuple
    split: np.ndarray
    presence: np.ndarray

    def __post_init__(self):
        if not self.views:
            raise ValueError("dataset needs at least one view")
        ids = self.views[0].sample_ids
        for view in self.views[1:]:
            if view.sample_ids != ids:
                raise ValueError(f"view {view.view_id} is not row-aligned with view {self.views[0].view_id}")
        n = len(ids)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},)")
        self.class_names = tuple(str(c) for c in self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise ValueError("label index out of range")
        self.split = np.asarray(self.split, dtype=object)
        if self.split.shape != (n,):
            raise ValueError(f"split tags must have shape ({n},)")
        bad = set(self.split.tolist()) - set(SPLIT_TAGS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")
        self.presence = np.asarray(self.presence, dtype=bool)
        if self.presence.shape != (n, len(self.views)):
            raise ValueError(f"presence mask must have shape ({n}, {len(self.views)})")
        if n and not self.presence.any(axis=1).all():
            raise ValueError("every sample needs at least one present view")
        train_classes = set(self.labels[self.split == "train"].tolist())
        if train_classes != set(range(len(self.class_names))):
            raise ValueError("every class must appear in the train split")

    @property
    def sample_ids(self) -> tuple:
        return self.views[0].sample_ids

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def view_ids(self) -> tuple:
        return tuple(v.view_id for v in self.views)

    def split_indices(self, tag: str) -> np.ndarray:
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {tag!r}")
        return np.flatnonzero(self.split == tag)

    def subset_features(self, keep: dict) -> "MultiViewDataset":
        """New dataset keeping, per view, only the feature indices listed in
        keep[view_id] (order preserved as given)."""
        views = []
        for view in self.views:
            idx = np.asarray(keep[view.view_id], dtype=np.intp)
            names = tuple(view.feature_names[i] for i in idx)
            views.append(ViewMatrix(view.view_id, view.sample_ids, names, view.values[:, idx]))
        return MultiViewDataset(views, self.labels.copy(), self.class_names,
                                self.split.copy(), self.presence.copy())


def _parse_cell(text: str, path, row: int, col_name: str, missing_ok: bool):
    token = text.strip()
    if token in _MISSING_TOKENS:
        if missing_ok:
            return None
        raise ValueError(f"{path}: missing cell at row {row}, column {col_name!r} "
                         "(pass impute_median=True to fill with feature medians)")
    try:
        return float(token)
    except ValueError:
        raise ValueError(f"{path}: non-numeric cell {text!r} at row {row}, column {col_name!r}") from None


def load_view_csv(path, view_id: str, impute_median: bool = False) -> ViewMatrix:
    """Parse one view CSV.  Row 1 is the header (feature names after the
    sample-id column).  Missing cells error unless impute_median is set."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise ValueError(f"{path}: header needs a sample-id column and at least one feature")
    feature_names = [h.strip() for h in header[1:]]
    sample_ids, data = [], []
    for r, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        sample_ids.append(row[0].strip())
        data.append([_parse_cell(cell, path, r, feature_names[c], impute_median)
                     for c, cell in enumerate(row[1:])])
    if not sample_ids:
        raise ValueError(f"{path}: no data rows")
    if impute_median:
        for c, name in enumerate(feature_names):
            col = [row[c] for row in data]
            known = [v for v in col if v is not None]
            if len(known) < len(col):
                if not known:
                    raise ValueError(f"{path}: column {name!r} has no observed values to impute from")
                med = float(np.median(known))
                for row in data:
                    if row[c] is None:
                        row[c] = med
    return ViewMatrix(view_id, tuple(sample_ids), tuple(feature_names), np.array(data, dtype=np.float64))


def save_view_csv(view: ViewMatrix, path) -> None:
    """Values are written in shortest round-trip decimal form, so a
    write/read cycle reproduces the matrix bit-exactly."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", *view.feature_names])
        for i, sid in enumerate(view.sample_ids):
            writer.writerow([sid, *(repr(v) for v in view.values[i].tolist())])


def load_labels_csv(path):
    """Returns (sample_ids, raw label strings)."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    body = rows[1:] if rows[0] and rows[0][0].strip().lower() == "sample_id" else rows
    sample_ids, labels = [], []
    for r, row in enumerate(body, start=1):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}: row {r} must be sample_id,label")
        sample_ids.append(row[0].strip())
        labels.append(row[1].strip())
    if len(set(sample_ids)) != len(sample_ids):
        raise ValueError(f"{path}: duplicate sample ids")
    return tuple(sample_ids), tuple(labels)


def save_labels_csv(sample_ids, label_names, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label"])
        for sid, lab in zip(sample_ids, label_names):
            writer.writerow([sid, lab])


def assemble_dataset(views: list, sample_ids, labels, class_names, split,
                     allow_missing: bool = False) -> MultiViewDataset:
    """Align every view to the canonical sample order.  A view lacking some
    sample is an error unless allow_missing is set, in which case the row is
    zero-filled and flagged absent in the presence mask."""
    sample_ids = tuple(str(s) for s in sample_ids)
    aligned, presence = [], np.ones((len(sample_ids), len(views)), dtype=bool)
    for v, view in enumerate(views):
        have = set(view.sample_ids)
        missing = [s for s in sample_ids if s not in have]
        extra = [s for s in view.sample_ids if s not in set(sample_ids)]
        if extra:
            raise ValueError(f"view {view.view_id}: sample ids {extra[:3]} not in the labels file")
        if missing and not allow_missing:
            raise ValueError(f"view {view.view_id}: missing samples {missing[:3]} "
                             "(pass allow_missing=True to mask absent views)")
        if missing:
            pos = {s: i for i, s in enumerate(view.sample_ids)}
            values = np.zeros((len(sample_ids), view.n_features))
            for i, s in enumerate(sample_ids):
                if s in pos:
                    values[i] = view.values[pos[s]]
                else:
                    presence[i, v] = False
            aligned.append(ViewMatrix(view.view_id, sample_ids, view.feature_names, values))
        else:
            aligned.append(view.reindex(sample_ids))
    return MultiViewDataset(aligned, labels, class_names, split, presence)


def stratified_split(labels, fractions, rng: RngStream) -> np.ndarray:
    """Per-class largest-remainder apportionment over (train, val, test),
    with a seeded shuffle inside each class.  Tags are a pure function of
    (labels, fractions, stream)."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ValueError("fractions must be three positive values")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    labels = np.asarray(labels)
    tags = np.empty(labels.shape[0], dtype=object)
    gen = rng.generator
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if idx.size < 3:
            raise ValueError(f"class {cls} has {idx.size} samples, need at least 3")
        idx = idx[gen.permutation(idx.size)]
        quotas = [f * idx.size for f in fractions]
        counts = [math.floor(q) for q in quotas]
        # hand out the remainder by largest fractional part, ties to the
        # earlier split in (train, val, test) order
        order = sorted(range(3), key=lambda s: (-(quotas[s] - counts[s]), s))
        for s in order[:idx.size - sum(counts)]:
            counts[s] += 1
        start = 0
        for s, tag in enumerate(SPLIT_TAGS):
            tags[idx[start:start + counts[s]]] = tag
            start += counts[s]
    return tags


@dataclass
class StandardizeRecord:
    """Per-view train-split means and sds.  Constant features carry an sd
    sentinel of 0 and standardize to 0."""

    view_ids: tuple
    means: list
    sds: list

    def apply(self, dataset: MultiViewDataset) -> MultiViewDataset:
        if tuple(dataset.view_ids) != tuple(self.view_ids):
            raise ValueError("transform record does not match dataset views")
        views = []
        for view, mu, sd in zip(dataset.views, self.means, self.sds):
            if view.n_features != mu.shape[0]:
                raise ValueError(f"view {view.view_id}: transform has {mu.shape[0]} features")
            scale = np.where(sd == 0.0, 0.0, 1.0 / np.where(sd == 0.0, 1.0, sd))
            values = (view.values - mu) * scale
            views.append(ViewMatrix(view.view_id, view.sample_ids, view.feature_names, values))
        return MultiViewDataset(views, dataset.labels.copy(), dataset.class_names,
                                dataset.split.copy(), dataset.presence.copy())

    def to_dict(self) -> dict:
        return {"view_ids": list(self.view_ids),
                "means": [m.tolist() for m in self.means],
                "sds": [s.tolist() for s in self.sds]}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizeRecord":
        return cls(tuple(d["view_ids"]),
                   [np.asarray(m, dtype=np.float64) for m in d["means"]],
                   [np.asarray(s, dtype=np.float64) for s in d["sds"]])


def zscore_standardize(dataset: MultiViewDataset):
    """Fit per-feature mean/sd on the train split only (population sd),
    apply to every split.  Returns (new dataset, StandardizeRecord)."""
    tr = dataset.split_indices("train")
    if tr.size == 0:
        raise ValueError("standardization needs a non-empty train split")
    means, sds = [], []
    for v, view in enumerate(dataset.views):
        rows = tr[dataset.presence[tr, v]] if not dataset.presence[tr, v].all() else tr
        if rows.size == 0:
            raise ValueError(f"view {view.view_id}: no present train samples to fit on")
        mu = view.values[rows].mean(axis=0)
        sd = view.values[rows].std(axis=0)
        sd = np.where(sd < 1e-12, 0.0, sd)
        means.append(mu)
        sds.append(sd)
    record = StandardizeRecord(tuple(dataset.view_ids), means, sds)
    return record.apply(dataset), record


@dataclass(frozen=True)
class SynthConfig:
    view_dims: tuple
    n_samples: int
    n_classes: int = 2
    informative: tuple = ()
    effect_size: float = 1.5
    seed: int = 0
    view_ids: tuple = ()
    fractions: tuple = (0.6, 0.2, 0.2)

    def __post_init__(self):
        if not self.view_dims or any(d < 1 for d in self.view_dims):
            raise ValueError("view_dims must be positive")
        if self.n_samples < 1 or self.n_classes < 2:
            raise ValueError("need n_samples >= 1 and n_classes >= 2")
        info = self.informative or tuple(min(8, d) for d in self.view_dims)
        if len(info) != len(self.view_dims):
            raise ValueError("informative needs one entry per view")
        if any(k < 0 or k > d for k, d in zip(info, self.view_dims)):
            raise ValueError("informative count must be in [0, dims] per view")
        object.__setattr__(self, "informative", tuple(info))
        if self.effect_size <= 0:
            raise ValueError("effect size must be > 0")
        ids = self.view_ids or tuple(f"view{v}" for v in range(len(self.view_dims)))
        if len(ids) != len(self.view_dims):
            raise ValueError("view_ids needs one entry per view")
        object.__setattr__(self, "view_ids", tuple(ids))


def _class_sign(cls: int, j: int, n_classes: int) -> float:
    # distinct classes get distinct sign codewords over informative features
    bits = max(1, math.ceil(math.log2(n_classes)))
    return 1.0 if (cls >> (j % bits)) & 1 == 0 else -1.0


def synth_multiview(cfg: SynthConfig):
    """Background features ~ N(0,1); a seeded subset of columns per view get
    a class-dependent mean shift of +-effect_size.  Returns
    (MultiViewDataset, ground truth dict view_id -> informative names)."""
    n, n_cls = cfg.n_samples, cfg.n_classes
    labels = stream(cfg.seed, "synth", "labels").generator.permutation(np.arange(n) % n_cls)
    sample_ids = tuple(f"S{i:04d}" for i in range(n))
    views, truth = [], {}
    for v, view_id in enumerate(cfg.view_ids):
        d, k = cfg.view_dims[v], cfg.informative[v]
        values = stream(cfg.seed, "synth", "view", view_id).generator.normal(size=(n, d))
        cols = stream(cfg.seed, "synth", "informative", view_id).generator.choice(d, size=k, replace=False)
        cols = np.sort(cols)
        for j, c in enumerate(cols):
            shift = np.array([_class_sign(lab, j, n_cls) for lab in labels]) * cfg.effect_size
            values[:, c] += shift
        names = tuple(f"{view_id}_F{j}" for j in range(d))
        views.append(ViewMatrix(view_id, sample_ids, names, values))
        truth[view_id] = [names[c] for c in cols]
    split = stratified_split(labels, cfg.fractions, stream(cfg.seed, "synth", "split"))
    class_names = tuple(f"class{c}" for c in range(n_cls))
    presence = np.ones((n, len(views)), dtype=bool)
    dataset = MultiViewDataset(views, labels, class_names, split, presence)
    return dataset, truth


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(dataset: MultiViewDataset, out_dir, ground_truth: dict | None = None,
                 transform: StandardizeRecord | None = None) -> str:
    """Write one CSV per view, a labels CSV and a manifest JSON with sha256
    checksums.  Returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    view_entries = []
    for v, view in enumerate(dataset.views):
        # absent rows are zero-filled placeholders; write observed rows only
        # so a reload rebuilds the same presence mask
        rows = np.flatnonzero(dataset.presence[:, v])
        observed = ViewMatrix(view.view_id, tuple(view.sample_ids[i] for i in rows),
                              view.feature_names, view.values[rows])
        path = os.path.join(out_dir, f"{view.view_id}.csv")
        save_view_csv(observed, path)
        view_entries.append({"view_id": view.view_id, "path": f"{view.view_id}.csv", "sha256": _sha256(path)})
    labels_path = os.path.join(out_dir, "labels.csv")
    save_labels_csv(dataset.sample_ids, [dataset.class_names[i] for i in dataset.labels], labels_path)
    manifest = {
        "format": "shapaudit-dataset",
        "version": 1,
        "views": view_entries,
        "labels": {"path": "labels.csv", "sha256": _sha256(labels_path)},
        "class_names": list(dataset.class_names),
        "split_tags": dataset.split.tolist(),
        "presence": dataset.presence.astype(int).tolist(),
    }
    if ground_truth is not None:
        manifest["ground_truth"] = {k: list(v) for k, v in ground_truth.items()}
    if transform is not None:
        manifest["transform"] = transform.to_dict()
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest_path


def load_dataset(manifest_path, impute_median: bool = False, verify_checksums: bool = True):
    """Load a manifest-described dataset.  Returns (dataset, ground_truth or
    None)."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "shapaudit-dataset":
        raise ValueError(f"{manifest_path} is not a dataset manifest")
    base = os.path.dirname(os.path.abspath(manifest_path))

    def resolve(rel):
        return rel if os.path.isabs(rel) else os.path.join(base, rel)

    labels_path = resolve(manifest["labels"]["path"])
    if verify_checksums and _sha256(labels_path) != manifest["labels"]["sha256"]:
        raise ValueError(f"{labels_path}: checksum mismatch")
    sample_ids, label_names = load_labels_csv(labels_path)
    class_names = tuple(manifest["class_names"])
    index = {c: i for i, c in enumerate(class_names)}
    unknown = sorted(set(label_names) - set(class_names))
    if unknown:
        raise ValueError(f"labels file has classes {unknown} not in the manifest")
    labels = np.array([index[c] for c in label_names], dtype=np.int64)

    views = []
    for entry in manifest["views"]:
        path = resolve(entry["path"])
        if verify_checksums and _sha256(path) != entry["sha256"]:
            raise ValueError(f"{path}: checksum mismatch")
        views.append(load_view_csv(path, entry["view_id"], impute_median=impute_median))

    split = np.asarray(manifest["split_tags"], dtype=object)
    allow_missing = "presence" in manifest and not np.asarray(manifest["presence"], dtype=bool).all()
    dataset = assemble_dataset(views, sample_ids, labels, class_names, split,
                               allow_missing=allow_missing)
    if "presence" in manifest:
        recorded = np.asarray(manifest["presence"], dtype=bool)
        if recorded.shape == dataset.presence.shape and not (recorded == dataset.presence).all():
            raise ValueError("manifest presence mask does not match the loaded views")
    truth = manifest.get("ground_truth")
    if truth is not None:
        truth = {k: list(v) for k, v in truth.items()}
    return dataset, truth
