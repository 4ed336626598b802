import contextlib
import io
import json
import os
import shutil
import subprocess

import pytest

from shapaudit.cli import main
from shapaudit.harness import read_report_csv
from shapaudit.multiview import load_model

CONFIG = {
    "experiment": "compression",
    "seed": 7,
    "runs": 1,
    "dataset": {"synth": {"view_dims": [6, 5], "n_samples": 40, "n_classes": 2,
                          "informative": [2, 1], "effect_size": 3.0, "seed": 11}},
    "plan": {"hidden1": 6, "hidden2": 6, "embedding": 4,
             "fusion": "mean", "post_fusion": 6},
    "train": {"max_iterations": 30, "patience": 5, "dropout": 0.0,
              "learning_rate": 0.01},
    "compression": {"noise_levels": [0, 4], "schemes": ["static"], "floor_width": 2},
}


def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(list(argv))
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth-gen -> train -> attribute -> experiment -> plot, one shared tree."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(CONFIG))
    steps = {"root": root, "config": str(cfg_path)}

    steps["synth"] = run_cli("synth-gen", "--config", steps["config"],
                             "--out", str(root / "data"))
    steps["train"] = run_cli("train", "--config", steps["config"],
                             "--out", str(root / "model"))
    steps["attribute"] = run_cli("attribute", "--model", str(root / "model" / "model.json"),
                                 "--data", str(root / "data" / "manifest.json"),
                                 "--out", str(root / "attr"))
    steps["experiment"] = run_cli("experiment", "compression", "--config", steps["config"],
                                  "--out", str(root / "exp"))
    steps["plot"] = run_cli("plot", "--report", str(root / "exp" / "report.csv"),
                            "--metric", "tau_w", "--out", str(root / "fig" / "tau.svg"),
                            "--title", "tau")
    return steps


class TestPipeline:
    def test_synth_gen(self, pipeline):
        code, out, _ = pipeline["synth"]
        assert code == 0 and "wrote" in out
        manifest = pipeline["root"] / "data" / "manifest.json"
        assert manifest.exists()
        doc = json.loads(manifest.read_text())
        assert {v["view_id"] for v in doc["views"]} == {"view0", "view1"}

    def test_train(self, pipeline):
        code, out, _ = pipeline["train"]
        assert code == 0 and "plateau at iteration" in out
        model = load_model(pipeline["root"] / "model" / "model.json")
        assert model.plan.input_dims == (6, 5)

    def test_attribute(self, pipeline):
        code, out, _ = pipeline["attribute"]
        assert code == 0
        attr_csv = pipeline["root"] / "attr" / "attribution.csv"
        ranks_json = pipeline["root"] / "attr" / "ranks.json"
        assert attr_csv.exists() and ranks_json.exists()
        ranks = json.loads(ranks_json.read_text())
        assert len(ranks["labels"]) == 11

    def test_experiment(self, pipeline):
        code, out, _ = pipeline["experiment"]
        assert code == 0 and "0 failed" in out
        rows = read_report_csv(pipeline["root"] / "exp" / "report.csv")
        assert {r.condition for r in rows} == {"noise0|static", "noise4|static"}
        assert (pipeline["root"] / "exp" / "report.json").exists()
        assert (pipeline["root"] / "exp" / "figures" / "compression_tau.svg").exists()

    def test_plot(self, pipeline):
        code, out, _ = pipeline["plot"]
        assert code == 0
        svg = (pipeline["root"] / "fig" / "tau.svg").read_text()
        assert svg.startswith("<svg") and ">tau<" in svg


class TestExitCodes:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert "shapaudit" in capsys.readouterr().out

    def test_no_command_is_a_config_error(self):
        code, _, err = run_cli()
        assert code == 1 and "config error" in err

    def test_unknown_flag(self, pipeline):
        code, _, err = run_cli("train", "--config", pipeline["config"], "--frobnicate")
        assert code == 1 and "config error" in err

    def test_missing_config_file(self, tmp_path):
        code, _, err = run_cli("train", "--config", str(tmp_path / "nope.json"),
                               "--out", str(tmp_path))
        assert code == 1 and "not found" in err

    def test_experiment_kind_mismatch(self, pipeline, tmp_path):
        code, _, err = run_cli("experiment", "subset", "--config", pipeline["config"],
                               "--out", str(tmp_path))
        assert code == 1 and "config error" in err

    def test_plot_unknown_metric_is_runtime_failure(self, pipeline, tmp_path):
        code, _, err = run_cli("plot", "--report", str(pipeline["root"] / "exp" / "report.csv"),
                               "--metric", "nope", "--out", str(tmp_path / "f.svg"))
        assert code == 2 and "runtime failure" in err

    def test_attribute_on_mismatched_data_is_runtime_failure(self, pipeline, tmp_path):
        other = dict(CONFIG["dataset"]["synth"], view_dims=[4, 3], informative=[1, 1])
        cfg = tmp_path / "other.json"
        cfg.write_text(json.dumps({"dataset": {"synth": other}}))
        assert run_cli("synth-gen", "--config", str(cfg), "--out", str(tmp_path / "d"))[0] == 0
        code, _, err = run_cli("attribute", "--model", str(pipeline["root"] / "model" / "model.json"),
                               "--data", str(tmp_path / "d" / "manifest.json"),
                               "--out", str(tmp_path / "a"))
        assert code == 2 and "runtime failure" in err

    def test_partial_experiment_failure(self, tmp_path):
        # dynamic sizing cannot honor the default floor of 8 on 6-wide layers,
        # so those runs fail; the report is still written and the exit code is 2
        doc = json.loads(json.dumps(CONFIG))
        doc["compression"]["schemes"] = ["static", "dynamic"]
        del doc["compression"]["floor_width"]
        cfg = tmp_path / "partial.json"
        cfg.write_text(json.dumps(doc))
        code, out, err = run_cli("experiment", "compression", "--config", str(cfg),
                                 "--out", str(tmp_path / "exp"))
        assert code == 2 and "partial" in err
        rows = read_report_csv(tmp_path / "exp" / "report.csv")
        assert any(r.metric == "failure" for r in rows)
        assert any(r.metric == "tau_w" for r in rows)


class TestOverridesAndDeterminism:
    def test_seed_override_changes_the_report(self, pipeline, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli("experiment", "compression", "--config", pipeline["config"],
                       "--out", str(a), "--seed", "21")[0] == 0
        assert run_cli("experiment", "compression", "--config", pipeline["config"],
                       "--out", str(b), "--seed", "21")[0] == 0
        assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()
        base = (pipeline["root"] / "exp" / "report.csv").read_bytes()
        assert (a / "report.csv").read_bytes() != base

    def test_synth_gen_deterministic(self, pipeline, tmp_path):
        code, _, _ = run_cli("synth-gen", "--config", pipeline["config"],
                             "--out", str(tmp_path / "data2"))
        assert code == 0
        for name in ("view0.csv", "view1.csv", "labels.csv"):
            assert (tmp_path / "data2" / name).read_bytes() == \
                (pipeline["root"] / "data" / name).read_bytes(), name


@pytest.mark.skipif(shutil.which("shapaudit") is None,
                    reason="console script not on PATH")
def test_console_script_version():
    proc = subprocess.run(["shapaudit", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("shapaudit ")
