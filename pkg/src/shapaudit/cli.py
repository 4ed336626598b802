"""Command-line interface.

Subcommands: synth-gen, train, attribute, experiment
{compression,stability,subset}, plot.  Exit codes: 0 success, 1 config
error, 2 runtime failure (a partial report is still written when the
failure happened inside isolated runs).  SHAPAUDIT_LOG sets verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import attribution, dataio, harness
from ._version import __version__
from .harness import ConfigError
from .multiview import load_model, save_model, train
from .rng import derive_seed, stream

log = logging.getLogger("shapaudit.cli")


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the interface reserves
    # 2 for runtime failures, so usage problems become config errors
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="shapaudit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"shapaudit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = sub.add_parser("synth-gen", help="generate a synthetic multi-view dataset")
    synth.add_argument("--config", help="JSON/TOML config with a dataset.synth section")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--seed", type=int, default=None)

    tr = sub.add_parser("train", help="train one multi-view model")
    tr.add_argument("--config", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int, default=None)

    at = sub.add_parser("attribute", help="DeepSHAP attributions for a trained model")
    at.add_argument("--model", required=True, help="model.json from the train command")
    at.add_argument("--data", required=True, help="dataset manifest.json")
    at.add_argument("--out", required=True)
    at.add_argument("--seed", type=int, default=0)
    at.add_argument("--split", choices=("final", "train", "val", "test", "all"), default="final",
                    help="samples to attribute (final = train+val)")
    at.add_argument("--background-size", type=int, default=None)
    at.add_argument("--no-standardize", action="store_true")

    ex = sub.add_parser("experiment", help="run an ablation experiment")
    ex.add_argument("kind", choices=harness.EXPERIMENT_KINDS)
    ex.add_argument("--config", required=True)
    ex.add_argument("--out", required=True)
    ex.add_argument("--seed", type=int, default=None)
    ex.add_argument("--runs", type=int, default=None)
    ex.add_argument("--threads", type=int, default=None)

    pl = sub.add_parser("plot", help="boxplot a metric from a report CSV")
    pl.add_argument("--report", required=True)
    pl.add_argument("--metric", required=True)
    pl.add_argument("--group-key", default="condition",
                    choices=("condition", "detail", "run", "seed"))
    pl.add_argument("--out", required=True, help="output SVG path")
    pl.add_argument("--title", default="")
    pl.add_argument("--xlabel", default="")
    pl.add_argument("--ylabel", default="")
    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("SHAPAUDIT_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _cmd_synth_gen(args) -> int:
    doc = harness.load_config_file(args.config) if args.config else {}
    section = doc.get("dataset", {}).get("synth", doc.get("synth", {}))
    seed = args.seed if args.seed is not None else int(section.get("seed", doc.get("seed", 0)))
    try:
        cfg = dataio.SynthConfig(
            view_dims=tuple(section.get("view_dims", (138, 1000))),
            n_samples=int(section.get("n_samples", 120)),
            n_classes=int(section.get("n_classes", 2)),
            informative=tuple(section.get("informative", (20, 20))),
            effect_size=float(section.get("effect_size", 1.5)),
            seed=seed,
            view_ids=tuple(section.get("view_ids", ())),
            fractions=tuple(section.get("fractions", (0.6, 0.2, 0.2))),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth settings: {exc}") from exc
    dataset, truth = dataio.synth_multiview(cfg)
    manifest = dataio.save_dataset(dataset, args.out, ground_truth=truth)
    print(f"wrote {manifest} ({dataset.n_samples} samples, "
          f"{', '.join(f'{v.view_id}:{v.n_features}' for v in dataset.views)})")
    return 0


def _cmd_train(args) -> int:
    doc = harness.load_config_file(args.config)
    cfg = harness.parse_config(doc, None, seed=args.seed)
    dataset, _ = harness.prepare_dataset(cfg)
    plan = harness.build_plan(cfg, dataset)
    train_cfg = dataclasses.replace(cfg.train_template, seed=cfg.master_seed)
    model = train(plan, dataset, train_cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "model.json")
    save_model(model, path)
    hist = model.history
    print(f"wrote {path} (plateau at iteration {hist.stop_iteration}, "
          f"final train loss {hist.phase2_train_loss[-1]:.6f})")
    return 0


def _cmd_attribute(args) -> int:
    model = load_model(args.model)
    dataset, _ = dataio.load_dataset(args.data)
    if not args.no_standardize:
        dataset, _ = dataio.zscore_standardize(dataset)
    if args.split == "all":
        rows = np.arange(dataset.n_samples)
    elif args.split == "final":
        rows = np.concatenate([dataset.split_indices("train"), dataset.split_indices("val")])
    else:
        rows = dataset.split_indices(args.split)
    if rows.size == 0:
        raise ConfigError(f"split {args.split!r} selects no samples")
    views = [view.values[rows] for view in dataset.views]

    bg_rows = np.concatenate([dataset.split_indices("train"), dataset.split_indices("val")])
    bg_views = [view.values[bg_rows] for view in dataset.views]
    if args.background_size is not None:
        size = min(args.background_size, bg_rows.size)
        gen = stream(derive_seed(args.seed, "background"), "cli").generator
        pick = np.sort(gen.choice(bg_rows.size, size=size, replace=False))
        bg_views = [v[pick] for v in bg_views]

    result = attribution.deepshap_attribute(model, views, attribution.BackgroundSet(bg_views))
    attribution.annotate_result(
        result,
        feature_names=[view.feature_names for view in dataset.views],
        sample_ids=[dataset.sample_ids[i] for i in rows],
        class_names=dataset.class_names)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "attribution.csv")
    json_path = os.path.join(args.out, "ranks.json")
    attribution.save_attribution_csv(result, csv_path)
    ranks = attribution.rank_features(attribution.aggregate_scores(result, "pooled"))
    attribution.save_rank_json(ranks, json_path)
    print(f"wrote {csv_path} and {json_path} ({result.n_samples} samples, "
          f"{len(ranks.labels)} pooled features)")
    return 0


def _cmd_experiment(args) -> int:
    doc = harness.load_config_file(args.config)
    cfg = harness.parse_config(doc, args.kind, seed=args.seed, runs=args.runs,
                               threads=args.threads)
    report, failures = harness.run_experiment(cfg, args.out)
    print(f"wrote {os.path.join(args.out, 'report.csv')} "
          f"({len(report.rows)} rows, {failures} failed runs)")
    if failures:
        print("some runs failed; the report is partial", file=sys.stderr)
        return 2
    return 0


def _cmd_plot(args) -> int:
    if not os.path.exists(args.report):
        raise ConfigError(f"report not found: {args.report}")
    rows = harness.read_report_csv(args.report)
    report = harness.ExperimentReport(rows=rows, provenance={})
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    harness.emit_boxplot_svg(report, args.group_key, args.metric, args.out,
                             title=args.title, xlabel=args.xlabel, ylabel=args.ylabel)
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "synth-gen": _cmd_synth_gen,
    "train": _cmd_train,
    "attribute": _cmd_attribute,
    "experiment": _cmd_experiment,
    "plot": _cmd_plot,
}


def main(argv=None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.debug("unhandled failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
