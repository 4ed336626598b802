"""Config-driven orchestration of the three ablation experiments, report
emission (CSV + JSON mirror) and SVG boxplot figures.

Determinism contract: every run seed is a pure function of (master seed,
purpose, run index), so adding a condition never shifts another
condition's seeds, and identical configs reproduce byte-identical
reports and figures.  In the compression experiment the zero-noise
reference for run i reuses run i's training seed, isolating the noise
effect from initialization randomness.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attribution, dataio, downstream, perturb, rankstats
from ._version import __version__
from .multiview import LayerPlan, TrainConfig, train
from .nncore import FocalLossParams
from .rng import derive_seed, stream

log = logging.getLogger("shapaudit.harness")

EXPERIMENT_KINDS = ("compression", "stability", "subset")


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 1."""


def load_config_file(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".json":
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        if ext == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as fh:
                return tomllib.load(fh)
    except (ValueError, OSError) as exc:
        raise ConfigError(f"failed to parse {path}: {exc}") from exc
    raise ConfigError(f"config must be .json or .toml, got {path}")


def config_hash(doc: dict) -> str:
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ExperimentConfig:
    kind: str
    doc: dict
    master_seed: int
    runs: int
    threads: int = 1
    manifest: str | None = None
    synth: dataio.SynthConfig | None = None
    standardize: bool = True
    background_size: int | None = None
    plan_spec: dict = field(default_factory=dict)
    train_template: TrainConfig = field(default_factory=TrainConfig)
    noise_levels: tuple = (0,)
    schemes: tuple = ("static",)
    noise_view: str | None = None
    percents: tuple = (75.0, 50.0, 25.0, 10.0)
    fusions: tuple = ("mean", "concat")
    forest_trees: int = 500
    floor_width: int = 8

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if (self.manifest is None) == (self.synth is None):
            raise ConfigError("config needs exactly one dataset source (manifest or synth)")
        levels = tuple(int(v) for v in self.noise_levels)
        if any(v < 0 for v in levels) or list(levels) != sorted(levels):
            raise ConfigError("noise levels must be nonnegative and sorted")
        self.noise_levels = levels
        if any(not (0.0 < p <= 100.0) for p in self.percents):
            raise ConfigError("subset percents must be in (0, 100]")
        self.percents = tuple(float(p) for p in self.percents)
        for s in self.schemes:
            if s not in ("static", "dynamic"):
                raise ConfigError(f"unknown sizing scheme {s!r}")
        for f in self.fusions:
            if f not in ("mean", "concat"):
                raise ConfigError(f"unknown fusion scheme {f!r}")
        if self.forest_trees < 1:
            raise ConfigError("forest_trees must be >= 1")


def _per_view(value, n_views: int, name: str) -> tuple:
    if isinstance(value, (list, tuple)):
        if len(value) != n_views:
            raise ConfigError(f"plan.{name} needs {n_views} entries, got {len(value)}")
        return tuple(int(v) for v in value)
    return tuple(int(value) for _ in range(n_views))


def parse_config(doc: dict, kind: str | None, seed=None, runs=None, threads=None) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed JSON/TOML document; CLI
    overrides (seed, runs, threads) win over the file.  kind=None accepts
    any config (utility commands that only need dataset/plan/train)."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a table/object")
    known = {"experiment", "seed", "runs", "threads", "standardize", "background_size",
             "dataset", "plan", "train", "compression", "stability", "subset"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    if kind is None:
        kind = doc.get("experiment", "stability")
    elif "experiment" in doc and doc["experiment"] != kind:
        raise ConfigError(f"config file is for experiment {doc['experiment']!r}, requested {kind!r}")

    master_seed = int(seed if seed is not None else doc.get("seed", 0))
    n_runs = int(runs if runs is not None else doc.get("runs", 1))
    n_threads = int(threads if threads is not None else doc.get("threads", 1))

    ds = doc.get("dataset")
    if not isinstance(ds, dict) or ("manifest" in ds) == ("synth" in ds):
        raise ConfigError("dataset section needs exactly one of 'manifest' or 'synth'")
    manifest = ds.get("manifest")
    synth = None
    if "synth" in ds:
        s = dict(ds["synth"])
        try:
            synth = dataio.SynthConfig(
                view_dims=tuple(int(v) for v in s.pop("view_dims")),
                n_samples=int(s.pop("n_samples")),
                n_classes=int(s.pop("n_classes", 2)),
                informative=tuple(int(v) for v in s.pop("informative", ())) or (),
                effect_size=float(s.pop("effect_size", 1.5)),
                seed=int(s.pop("seed", derive_seed(master_seed, "synth"))),
                view_ids=tuple(s.pop("view_ids", ())) or (),
                fractions=tuple(float(v) for v in s.pop("fractions", (0.6, 0.2, 0.2))),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid synth section: {exc}") from exc
        if s:
            raise ConfigError(f"unknown synth keys: {sorted(s)}")

    tr = doc.get("train", {})
    try:
        focal = FocalLossParams(gamma=float(tr.get("gamma", 2.0)),
                                alpha=tuple(tr.get("alpha", ())))
        template = TrainConfig(
            seed=0,
            max_iterations=int(tr.get("max_iterations", 2000)),
            patience=int(tr.get("patience", 50)),
            min_delta=float(tr.get("min_delta", 1e-5)),
            dropout=float(tr.get("dropout", 0.1)),
            focal=focal,
            loss_weights=tuple(tr.get("loss_weights", ())),
            learning_rate=float(tr.get("learning_rate", 1e-3)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc

    comp = doc.get("compression", {})
    stab = doc.get("stability", {})
    sub = doc.get("subset", {})
    section = {"compression": comp, "stability": stab, "subset": sub}[kind]
    noise_levels = tuple(section.get("noise_levels", (0,)))
    if kind == "compression" and "noise_levels" not in comp:
        raise ConfigError("compression section needs noise_levels")

    try:
        return ExperimentConfig(
            kind=kind,
            doc=doc,
            master_seed=master_seed,
            runs=n_runs,
            threads=n_threads,
            manifest=manifest,
            synth=synth,
            standardize=bool(doc.get("standardize", True)),
            background_size=(int(doc["background_size"]) if doc.get("background_size") else None),
            plan_spec=dict(doc.get("plan", {})),
            train_template=template,
            noise_levels=noise_levels,
            schemes=tuple(comp.get("schemes", ("static",))),
            noise_view=comp.get("noise_view") or stab.get("noise_view"),
            percents=tuple(sub.get("percents", (75, 50, 25, 10))),
            fusions=tuple(sub.get("fusion", ("mean", "concat"))),
            forest_trees=int(sub.get("forest_trees", 500)),
            floor_width=int(comp.get("floor_width", 8)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def prepare_dataset(cfg: ExperimentConfig):
    """Load or synthesize, then optionally standardize on train statistics.
    Returns (dataset, ground_truth or None)."""
    if cfg.synth is not None:
        dataset, truth = dataio.synth_multiview(cfg.synth)
    else:
        try:
            dataset, truth = dataio.load_dataset(cfg.manifest)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"failed to load dataset: {exc}") from exc
    if cfg.standardize:
        dataset, _ = dataio.zscore_standardize(dataset)
    return dataset, truth


def build_plan(cfg: ExperimentConfig, dataset, fusion: str | None = None) -> LayerPlan:
    spec = cfg.plan_spec
    n_views = len(dataset.views)
    dims = tuple(v.n_features for v in dataset.views)
    try:
        return LayerPlan(
            view_ids=tuple(dataset.view_ids),
            input_dims=dims,
            hidden1=_per_view(spec.get("hidden1", 64), n_views, "hidden1"),
            hidden2=_per_view(spec.get("hidden2", 128), n_views, "hidden2"),
            embedding=_per_view(spec.get("embedding", 16), n_views, "embedding"),
            fusion=fusion if fusion is not None else spec.get("fusion", "concat"),
            post_fusion=int(spec.get("post_fusion", 32)),
            n_classes=dataset.n_classes,
        )
    except ValueError as exc:
        raise ConfigError(f"invalid plan: {exc}") from exc


@dataclass(frozen=True)
class ReportRow:
    condition: str
    run: int
    seed: int
    metric: str
    detail: str
    value: float


@dataclass
class ExperimentReport:
    rows: list
    provenance: dict

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (_natural_key(r.condition), r.run,
                                                r.metric, _natural_key(r.detail)))

    def to_csv(self, path) -> None:
        import csv as _csv
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["condition", "run", "seed", "metric", "detail", "value"])
            for row in self.sorted_rows():
                value = repr(float(row.value)) if math.isfinite(row.value) else "nan"
                writer.writerow([row.condition, row.run, row.seed, row.metric, row.detail, value])

    def to_json(self, path) -> None:
        doc = {
            "provenance": self.provenance,
            "rows": [
                {"condition": r.condition, "run": r.run, "seed": r.seed, "metric": r.metric,
                 "detail": r.detail, "value": (float(r.value) if math.isfinite(r.value) else None)}
                for r in self.sorted_rows()
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")


def read_report_csv(path) -> list:
    import csv as _csv
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(ReportRow(condition=rec["condition"], run=int(rec["run"]),
                                  seed=int(rec["seed"]), metric=rec["metric"],
                                  detail=rec["detail"], value=float(rec["value"])))
    return rows


def _natural_key(text: str):
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", str(text)))


def _pmap(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _run_seed(cfg: ExperimentConfig, run: int) -> int:
    return derive_seed(cfg.master_seed, "train", run)


def _final_rows(dataset) -> np.ndarray:
    return np.concatenate([dataset.split_indices("train"), dataset.split_indices("val")])


def _attribute_final(cfg: ExperimentConfig, model, dataset, run: int):
    """Attribution on the final training data (train+val), which is also the
    background unless a seeded subsample size is configured."""
    rows = _final_rows(dataset)
    views = [view.values[rows] for view in dataset.views]
    bg_views = views
    if cfg.background_size is not None:
        size = min(cfg.background_size, rows.size)
        gen = stream(cfg.master_seed, "background", f"run{run}").generator
        pick = np.sort(gen.choice(rows.size, size=size, replace=False))
        bg_views = [v[pick] for v in views]
    background = attribution.BackgroundSet(bg_views)
    result = attribution.deepshap_attribute(model, views, background)
    names = [view.feature_names for view in dataset.views]
    ids = [dataset.sample_ids[i] for i in rows]
    return attribution.annotate_result(result, feature_names=names, sample_ids=ids,
                                       class_names=dataset.class_names)


def _train_once(cfg: ExperimentConfig, dataset, plan: LayerPlan, run: int):
    seed = _run_seed(cfg, run)
    model = train(plan, dataset, dataclasses.replace(cfg.train_template, seed=seed))
    return model, seed


def _original_mask(labels) -> np.ndarray:
    return np.array([perturb.NOISE_PREFIX not in lab for lab in labels])


def _phi_rows(condition: str, run: int, seed: int, result, noise_split: bool) -> list:
    rows = []
    for v, view_id in enumerate(result.view_ids):
        mags = np.abs(result.phi[v])
        rows.append(ReportRow(condition, run, seed, "mean_abs_phi", view_id, float(mags.mean())))
        if noise_split:
            is_noise = np.array([name.startswith(perturb.NOISE_PREFIX)
                                 for name in result.feature_names[v]])
            if is_noise.any():
                rows.append(ReportRow(condition, run, seed, "mean_abs_phi",
                                      f"{view_id}:original", float(mags[:, :, ~is_noise].mean())))
                rows.append(ReportRow(condition, run, seed, "mean_abs_phi",
                                      f"{view_id}:noise", float(mags[:, :, is_noise].mean())))
    return rows


def run_compression(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Noise-feature compression: per (noise level, sizing scheme, run),
    tau_w of the original features' pooled scores against the matched-seed
    zero-noise reference (run-to-run pairing at level 0)."""
    dataset, _ = prepare_dataset(cfg)
    if len(dataset.views) != 2:
        raise ConfigError("compression experiment needs a 2-view dataset")
    noise_view = cfg.noise_view or dataset.view_ids[0]
    if noise_view not in dataset.view_ids:
        raise ConfigError(f"noise_view {noise_view!r} is not a dataset view")
    base_plan = build_plan(cfg, dataset)
    base_dims = tuple(v.n_features for v in dataset.views)
    rows: list = []

    def reference(run: int):
        try:
            model, seed = _train_once(cfg, dataset, base_plan, run)
            result = _attribute_final(cfg, model, dataset, run)
            scores = attribution.aggregate_scores(result, "pooled")
            log.info("compression reference run %d done (T=%d)", run,
                     model.history.stop_iteration)
            return {"ok": True, "seed": seed, "scores": scores.scores,
                    "labels": scores.labels, "result": result,
                    "stop": model.history.stop_iteration}
        except Exception as exc:  # noqa: BLE001 - failure isolation by design
            log.warning("compression reference run %d failed: %s", run, exc)
            return {"ok": False, "seed": _run_seed(cfg, run), "error": exc}

    refs = _pmap(reference, list(range(cfg.runs)), cfg.threads)

    def noisy(task):
        level, scheme, run = task
        seed = _run_seed(cfg, run)
        condition = f"noise{level}|{scheme}"
        try:
            noise_rng = stream(cfg.master_seed, "noise", f"level{level}", f"run{run}")
            aug = perturb.augment_dataset(dataset, noise_view, level, noise_rng)
            dims = tuple(v.n_features for v in aug.views)
            plan = perturb.SizingScheme(scheme, base_plan, cfg.floor_width).apply(dims)
            model, _ = _train_once(cfg, aug, plan, run)
            result = _attribute_final(cfg, model, aug, run)
            scores = attribution.aggregate_scores(result, "pooled")
            keep = _original_mask(scores.labels)
            orig_labels = tuple(lab for lab, k in zip(scores.labels, keep) if k)
            log.info("compression run %s/%d done (T=%d)", condition, run,
                     model.history.stop_iteration)
            return {"ok": True, "task": task, "condition": condition, "seed": seed,
                    "orig_scores": scores.scores[keep], "orig_labels": orig_labels,
                    "result": result, "stop": model.history.stop_iteration}
        except Exception as exc:  # noqa: BLE001 - failure isolation by design
            log.warning("compression run %s/%d failed: %s", condition, run, exc)
            return {"ok": False, "task": task, "condition": condition, "seed": seed,
                    "error": exc}

    tasks = [(level, scheme, run)
             for level in cfg.noise_levels if level > 0
             for scheme in cfg.schemes
             for run in range(cfg.runs)]
    noisy_out = _pmap(noisy, tasks, cfg.threads)

    # zero-noise rows: run-to-run tau over the matched reference rankings
    for scheme in cfg.schemes:
        condition = f"noise0|{scheme}"
        for run in range(cfg.runs):
            ref = refs[run]
            if not ref["ok"]:
                rows.append(_failure_row(condition, run, ref["seed"], ref["error"]))
                continue
            other = refs[(run + 1) % cfg.runs]
            if not other["ok"]:
                rows.append(_failure_row(condition, run, ref["seed"],
                                         ValueError("run-to-run partner run failed")))
                continue
            tau = rankstats.weighted_kendall_tau(ref["scores"], other["scores"])
            rows.append(ReportRow(condition, run, ref["seed"], "tau_w", "run_to_run", tau.tau_w))
            rows.append(ReportRow(condition, run, ref["seed"], "stop_iteration", "", float(ref["stop"])))
            rows += _phi_rows(condition, run, ref["seed"], ref["result"], noise_split=False)

    for out in noisy_out:
        level, scheme, run = out["task"]
        condition, seed = out["condition"], out["seed"]
        if not out["ok"]:
            rows.append(_failure_row(condition, run, seed, out["error"]))
            continue
        ref = refs[run]
        if not ref["ok"]:
            rows.append(_failure_row(condition, run, seed,
                                     ValueError("matched zero-noise reference failed")))
            continue
        if out["orig_labels"] != ref["labels"]:
            rows.append(_failure_row(condition, run, seed,
                                     ValueError("original-feature universes do not align")))
            continue
        tau = rankstats.weighted_kendall_tau(out["orig_scores"], ref["scores"])
        rows.append(ReportRow(condition, run, seed, "tau_w", "matched_reference", tau.tau_w))
        rows.append(ReportRow(condition, run, seed, "stop_iteration", "", float(out["stop"])))
        rows += _phi_rows(condition, run, seed, out["result"], noise_split=True)

    report = _make_report(cfg, rows)
    if out_dir is not None:
        _write_outputs(report, out_dir)
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        if any(r.metric == "tau_w" for r in report.rows):
            emit_boxplot_svg(report, "condition", "tau_w",
                             os.path.join(fig_dir, "compression_tau.svg"),
                             title="Rank stability under noise features",
                             xlabel="condition", ylabel="weighted Kendall tau")
    return report


def run_stability(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Cross-run rank stability: trains `runs` models differing only in
    seed, then summarizes per-feature rank distributions for the pooled and
    per-view universes."""
    base, _ = prepare_dataset(cfg)
    rows: list = []
    fig_groups = {}
    for level in cfg.noise_levels:
        if level > 0:
            noise_view = cfg.noise_view or base.view_ids[0]
            noise_rng = stream(cfg.master_seed, "noise", f"level{level}", "stability")
            dataset = perturb.augment_dataset(base, noise_view, level, noise_rng)
        else:
            dataset = base
        plan = build_plan(cfg, dataset)

        def one_run(run):
            try:
                model, seed = _train_once(cfg, dataset, plan, run)
                result = _attribute_final(cfg, model, dataset, run)
                ranks = {"pooled": attribution.rank_features(
                    attribution.aggregate_scores(result, "pooled"))}
                for view_id in dataset.view_ids:
                    ranks[view_id] = attribution.rank_features(
                        attribution.aggregate_scores(result, view_id))
                log.info("stability run %d at noise %d done (T=%d)", run, level,
                         model.history.stop_iteration)
                return {"ok": True, "seed": seed, "ranks": ranks,
                        "stop": model.history.stop_iteration}
            except Exception as exc:  # noqa: BLE001 - failure isolation by design
                log.warning("stability run %d at noise %d failed: %s", run, level, exc)
                return {"ok": False, "seed": _run_seed(cfg, run), "error": exc}

        outs = _pmap(one_run, list(range(cfg.runs)), cfg.threads)
        condition = f"noise{level}"
        good = [o for o in outs if o["ok"]]
        for run, out in enumerate(outs):
            if out["ok"]:
                rows.append(ReportRow(condition, run, out["seed"], "stop_iteration", "",
                                      float(out["stop"])))
            else:
                rows.append(_failure_row(condition, run, out["seed"], out["error"]))
        if not good:
            continue

        universes = ["pooled"] + list(dataset.view_ids)
        for universe in universes:
            dist = rankstats.rank_distribution([o["ranks"][universe] for o in good])
            ucond = f"{condition}|{universe}"
            stats = (("rank_min", dist.mins), ("rank_q25", dist.q25),
                     ("rank_median", dist.medians), ("rank_q75", dist.q75),
                     ("rank_max", dist.maxs), ("rank_mean", dist.means),
                     ("rank_spread", dist.maxs - dist.mins))
            for f, label in enumerate(dist.labels):
                for metric, arr in stats:
                    rows.append(ReportRow(ucond, -1, cfg.master_seed, metric, label,
                                          float(arr[f])))
            for which, metric in (("top", "top8_mean_rank"), ("bottom", "bottom8_mean_rank")):
                k = min(8, len(dist.labels))
                for f in rankstats.panel_indices(dist, k, which):
                    rows.append(ReportRow(ucond, -1, cfg.master_seed, metric,
                                          dist.labels[f], float(dist.means[f])))
            if universe == "pooled":
                matrix = np.stack([np.asarray(o["ranks"][universe].ranks, dtype=np.float64)
                                   for o in good])
                for which in ("top", "bottom"):
                    k = min(8, len(dist.labels))
                    idx = rankstats.panel_indices(dist, k, which)
                    fig_groups[(level, which)] = [(dist.labels[f], matrix[:, f].tolist())
                                                  for f in idx]

    report = _make_report(cfg, rows)
    if out_dir is not None:
        _write_outputs(report, out_dir)
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        from .svgplot import save_boxplot_svg
        for (level, which), groups in sorted(fig_groups.items()):
            path = os.path.join(fig_dir, f"stability_noise{level}_{which}8.svg")
            save_boxplot_svg(groups, path,
                             title=f"Rank spread across runs ({which} 8, noise {level})",
                             xlabel="feature", ylabel="pooled rank")
    return report


def run_subset(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Top-p% retention: per fusion scheme and run, train + attribute, then
    compare RF holdout AUC and Ward V-measure on SHAP-selected subsets
    against the all-features baseline."""
    dataset, _ = prepare_dataset(cfg)
    if dataset.split_indices("test").size == 0:
        raise ConfigError("subset experiment needs a holdout (test) split")
    rows: list = []

    fit_rows = _final_rows(dataset)
    test_rows = dataset.split_indices("test")
    pooled_all = np.concatenate([v.values for v in dataset.views], axis=1)
    y = dataset.labels

    def one(task):
        fusion, run = task
        condition = f"fusion={fusion}"
        seed = _run_seed(cfg, run)
        try:
            plan = build_plan(cfg, dataset, fusion=fusion)
            if fusion == "concat":
                dims = tuple(v.n_features for v in dataset.views)
                plan = perturb.SizingScheme("proportional-concat", plan,
                                            cfg.floor_width).apply(dims)
            model, _ = _train_once(cfg, dataset, plan, run)
            result = _attribute_final(cfg, model, dataset, run)
            ranks = attribution.rank_features(attribution.aggregate_scores(result, "pooled"))
            out_rows = [ReportRow(condition, run, seed, "stop_iteration", "",
                                  float(model.history.stop_iteration))]
            forest_rng = stream(cfg.master_seed, "forest", f"fusion={fusion}", f"run{run}")

            def evaluate(detail: str, cols: np.ndarray):
                x = pooled_all[:, cols]
                forest = downstream.ForestConfig(n_trees=cfg.forest_trees, rng=forest_rng)
                proba = downstream.rf_fit_predict(x[fit_rows], y[fit_rows], x[test_rows],
                                                  forest, n_classes=dataset.n_classes)
                out_rows.append(ReportRow(condition, run, seed, "rf_auc", detail,
                                          downstream.auc_score(y[test_rows], proba)))
                for split_name, idx in (("holdout", test_rows), ("train", fit_rows)):
                    clusters = downstream.ward_cluster(x[idx], dataset.n_classes)
                    quality = downstream.v_measure(y[idx], clusters)
                    out_rows.append(ReportRow(condition, run, seed, "v_measure",
                                              f"{detail}|{split_name}", quality.v_measure))

            evaluate("all", np.arange(pooled_all.shape[1]))
            for p in cfg.percents:
                cols = np.sort(downstream.subset_top_p(ranks, p))
                evaluate(f"p={p:g}", cols)
            log.info("subset run %s/%d done (T=%d)", condition, run,
                     model.history.stop_iteration)
            return out_rows
        except Exception as exc:  # noqa: BLE001 - failure isolation by design
            log.warning("subset run %s/%d failed: %s", condition, run, exc)
            return [_failure_row(condition, run, seed, exc)]

    tasks = [(fusion, run) for fusion in cfg.fusions for run in range(cfg.runs)]
    for out in _pmap(one, tasks, cfg.threads):
        rows += out

    report = _make_report(cfg, rows)
    if out_dir is not None:
        _write_outputs(report, out_dir)
        fig_dir = os.path.join(out_dir, "figures")
        os.makedirs(fig_dir, exist_ok=True)
        for fusion in cfg.fusions:
            condition = f"fusion={fusion}"
            if any(r.metric == "rf_auc" and r.condition == condition for r in report.rows):
                emit_boxplot_svg(report, "detail", "rf_auc",
                                 os.path.join(fig_dir, f"subset_auc_{fusion}.svg"),
                                 title=f"Holdout AUC by feature subset ({fusion} fusion)",
                                 xlabel="subset", ylabel="AUC",
                                 where={"condition": condition})
    return report


def _failure_row(condition: str, run: int, seed: int, exc: Exception) -> ReportRow:
    return ReportRow(condition, run, seed, "failure",
                     f"{type(exc).__name__}: {exc}", float("nan"))


def _make_report(cfg: ExperimentConfig, rows: list) -> ExperimentReport:
    provenance = {
        "experiment": cfg.kind,
        "config_hash": config_hash(cfg.doc),
        "code_version": __version__,
        "master_seed": cfg.master_seed,
        "runs": cfg.runs,
        "timestamp": None,  # omitted by default so identical configs yield identical bytes
    }
    return ExperimentReport(rows=rows, provenance=provenance)


def _write_outputs(report: ExperimentReport, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    report.to_csv(os.path.join(out_dir, "report.csv"))
    report.to_json(os.path.join(out_dir, "report.json"))


def emit_boxplot_svg(report: ExperimentReport, group_key: str, metric: str, path,
                     title: str = "", xlabel: str = "", ylabel: str = "",
                     where: dict | None = None) -> None:
    """One box per distinct group-key value among the rows carrying
    `metric` (failure rows and non-finite values excluded)."""
    from .svgplot import save_boxplot_svg
    if group_key not in ("condition", "detail", "run", "seed"):
        raise ValueError(f"unknown group key {group_key!r}")
    rows = [r for r in report.rows if r.metric == metric and math.isfinite(r.value)]
    if where:
        rows = [r for r in rows if all(str(getattr(r, k)) == str(v) for k, v in where.items())]
    if not rows:
        raise ValueError(f"no finite rows for metric {metric!r}")
    groups: dict = {}
    for row in rows:
        groups.setdefault(str(getattr(row, group_key)), []).append(row.value)
    ordered = sorted(groups.items(), key=lambda kv: _natural_key(kv[0]))
    save_boxplot_svg(ordered, path, title=title, xlabel=xlabel, ylabel=ylabel)


def run_experiment(cfg: ExperimentConfig, out_dir) -> tuple:
    """Dispatch, write report.csv/report.json and figures.  Returns
    (report, number of failure rows)."""
    runner = {"compression": run_compression, "stability": run_stability,
              "subset": run_subset}[cfg.kind]
    report = runner(cfg, out_dir=out_dir)
    failures = sum(1 for r in report.rows if r.metric == "failure")
    return report, failures
