import csv
import json
import shutil

import numpy as np
import pytest

from fairprobe import nn
from fairprobe.cli import (EXIT_ADVISORY, EXIT_CONFIG, EXIT_OK, load_config, main, read_idis,
                           render_report)
from fairprobe.data import (Attribute, AttributeSchema, TabularDataset, is_valid_pair,
                            load_schema, save_csv, save_schema)
from fairprobe.metrics import gsr
from fairprobe.synthetic import adult_like

from conftest import constant_net

ARTIFACTS = ["model.json", "train_report.json", "interpret.json", "idis.csv", "provenance.json",
             "model_repaired.json", "retrain_report.json", "metrics.json", "report.md"]
PIPELINE = ["train", "interpret", "generate", "retrain", "evaluate", "report"]


def make_run(root, n=2000, seed=3, out="out", **extra):
    ds = adult_like(n, seed=seed)
    root.mkdir(parents=True, exist_ok=True)
    save_schema(ds.schema, root / "schema.json")
    save_csv(ds, root / "data.csv")
    doc = {"schema": "schema.json", "data": "data.csv", "output_dir": out, "rng_seed": seed,
           "train": {"hidden": [16, 8, 4], "epochs": 20, "batch_size": 64,
                     "learning_rate": 0.01},
           "generation": {"n_clusters": 2, "num_g": 40, "max_iter_g": 8, "max_iter_l": 8},
           "metrics": {"n_samples": 400, "repeats": 2, "retrain_epochs": 2}}
    doc.update(extra)
    (root / "run.json").write_text(json.dumps(doc))
    return root / "run.json"


def run_all(config, *flags):
    for cmd in PIPELINE:
        assert main([cmd, "-c", str(config), "-q", *flags]) == EXIT_OK, cmd


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    config = make_run(tmp_path_factory.mktemp("run"))
    run_all(config)
    return config, config.parent / "out"


class TestConfig:
    def test_missing_schema_names_path(self, tmp_path, capsys):
        config = make_run(tmp_path)
        (tmp_path / "schema.json").unlink()
        assert main(["train", "-c", str(config)]) == EXIT_CONFIG
        assert str(tmp_path / "schema.json") in capsys.readouterr().err

    def test_rng_seed_required(self, tmp_path):
        config = make_run(tmp_path)
        doc = json.loads(config.read_text())
        del doc["rng_seed"]
        config.write_text(json.dumps(doc))
        assert main(["train", "-c", str(config)]) == EXIT_CONFIG

    def test_unknown_generation_key(self, tmp_path):
        config = make_run(tmp_path, generation={"bogus": 1})
        assert main(["generate", "-c", str(config)]) == EXIT_CONFIG

    def test_bad_generation_value(self, tmp_path):
        config = make_run(tmp_path)
        assert main(["generate", "-c", str(config), "--p-r", "1.5"]) == EXIT_CONFIG

    def test_missing_config_and_subcommand(self, tmp_path):
        assert main(["train", "-c", str(tmp_path / "nope.json")]) == EXIT_CONFIG
        assert main([]) == EXIT_CONFIG

    def test_flag_overrides(self, tmp_path):
        config = make_run(tmp_path)
        cfg = load_config(config, {"mu_g": 0.3, "step_size_g": 2.0, "rng_seed": 9})
        assert cfg.generation.mu_g == 0.3 and cfg.generation.step_size_g == 2.0
        assert cfg.rng_seed == 9 and cfg.generation.rng_seed == 9
        assert cfg.model == tmp_path / "out" / "model.json"
        assert cfg.train["optimizer"] == "adam"

    def test_generate_needs_model(self, tmp_path):
        config = make_run(tmp_path)
        assert main(["generate", "-c", str(config), "-q"]) != EXIT_OK

    def test_malformed_csv(self, tmp_path):
        config = make_run(tmp_path)
        text = (tmp_path / "data.csv").read_text().splitlines()
        text[3] = "x" + text[3][1:]
        (tmp_path / "data.csv").write_text("\n".join(text) + "\n")
        assert main(["train", "-c", str(config), "-q"]) == EXIT_CONFIG


class TestPipeline:
    def test_artifacts(self, pipeline):
        _, out = pipeline
        for name in ARTIFACTS:
            assert (out / name).exists(), name

    def test_model_round_trips(self, pipeline):
        _, out = pipeline
        net = nn.load(out / "model.json")
        assert nn.to_json(nn.from_json(nn.to_json(net))) == nn.to_json(net)
        assert [layer.width for layer in net.layers[:-1]] == [16, 8, 4]

    def test_layer_count(self, pipeline):
        _, out = pipeline
        doc = json.loads((out / "interpret.json").read_text())
        assert len(doc["layers"]) == 3
        assert len(list((out / "curves").glob("layer_*.csv"))) == 3

    def test_idis_valid_and_gsr(self, pipeline):
        config, out = pipeline
        cfg = load_config(config)
        schema = load_schema(cfg.schema)
        net = nn.load(out / "model.json")
        idis = read_idis(out / "idis.csv", schema)
        for pair in idis.pairs:
            assert is_valid_pair(pair.a, pair.b, schema)
            assert net.predict(pair.a) != net.predict(pair.b)
        summary = json.loads((out / "provenance.json").read_text())["summary"]
        with open(out / "idis.csv") as fh:
            rows = sum(1 for _ in csv.reader(fh)) - 1
        # a local hit may repeat a global one; the merged file holds each once
        assert 0 < rows == summary["total"] <= summary["global"] + summary["local"]
        assert summary["gsr"] == gsr(rows, summary["n_generated"])

    def test_metrics_provenance(self, pipeline):
        _, out = pipeline
        doc = json.loads((out / "metrics.json").read_text())
        assert 0 <= doc["gsr"] <= 1
        assert doc["provenance"]["rng_seed"] == 3
        assert set(doc["gd"]) | set(doc["gd_infinite"]) <= {"rho=0.02", "rho=0.05"}
        assert doc["dm_rs_after"] is not None and doc["rho_s"] is not None

    def test_report(self, pipeline, capsys):
        config, out = pipeline
        text = render_report(out)
        for heading in ("## Model", "## Interpretation", "## Generation", "## Repair",
                        "## Metrics"):
            assert heading in text
        assert (out / "report.md").read_text() == text
        assert main(["report", "-c", str(config), "-q"]) == EXIT_OK
        assert capsys.readouterr().out == text

    def test_report_without_artifacts(self, tmp_path):
        assert "no artifacts found" in render_report(tmp_path)


class TestDeterminism:
    def test_rerun_byte_identical(self, pipeline, tmp_path):
        config, out = pipeline
        root = tmp_path / "again"
        shutil.copytree(config.parent, root, ignore=shutil.ignore_patterns("out"))
        run_all(root / "run.json", "--workers", "3")
        for name in ARTIFACTS + ["curves/layer_0.csv"]:
            assert (root / "out" / name).read_bytes() == (out / name).read_bytes(), name

    def test_timing_is_separate(self, pipeline, tmp_path):
        config, out = pipeline
        other = tmp_path / "t"
        shutil.copytree(out, other)
        (other / "idis.csv").unlink()
        assert main(["generate", "-c", str(config), "-q", "--timing",
                     "--output-dir", str(other)]) == EXIT_OK
        assert "generate_seconds" in json.loads((other / "timing.json").read_text())
        assert (other / "idis.csv").read_bytes() == (out / "idis.csv").read_bytes()
        assert (other / "provenance.json").read_bytes() == (out / "provenance.json").read_bytes()


class TestAdvisory:
    def test_constant_model_exit_3(self, tmp_path, capsys):
        config = make_run(tmp_path)
        (tmp_path / "out").mkdir()
        nn.save(constant_net(13, hidden=(8, 4)), tmp_path / "out" / "model.json")
        assert main(["interpret", "-c", str(config), "-q"]) == EXIT_ADVISORY
        assert "no discrimination" in capsys.readouterr().err

    def test_time_budget_zero(self, tmp_path):
        config = make_run(tmp_path)
        assert main(["train", "-c", str(config), "-q"]) == EXIT_OK
        assert main(["generate", "-c", str(config), "-q", "--time-budget", "0"]) == EXIT_OK
        summary = json.loads((tmp_path / "out" / "provenance.json").read_text())["summary"]
        assert summary["total"] == 0
        assert len((tmp_path / "out" / "idis.csv").read_text().splitlines()) == 1

    def test_injected_layer_reported(self, tmp_path):
        # the sensitive input reaches every unit of hidden layer 2 through a large weight
        schema = AttributeSchema((Attribute("x", 0, 10), Attribute("s", 0, 1, sensitive=True)))
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.integers(0, 11, 200), rng.integers(0, 2, 200)]).astype(float)
        save_schema(schema, tmp_path / "schema.json")
        save_csv(TabularDataset(schema, X, np.zeros(200, dtype=int)), tmp_path / "data.csv")
        w = [np.array([[1.0, 1, 1, 0], [0, 0, 0, 0.05]]), np.eye(4),
             np.vstack([np.eye(4)[:3], np.full((1, 4), 20.0)]), np.ones((4, 2))]
        layers = [nn.LayerSpec(4, "relu")] * 3 + [nn.LayerSpec(2, "softmax")]
        net = nn.Network(2, layers, w, [np.zeros(4)] * 3 + [np.zeros(2)])
        nn.save(net, tmp_path / "model.json")
        (tmp_path / "run.json").write_text(json.dumps(
            {"schema": "schema.json", "data": "data.csv", "model": "model.json",
             "output_dir": "out", "rng_seed": 0}))
        assert main(["interpret", "-c", str(tmp_path / "run.json"), "-q"]) == EXIT_OK
        doc = json.loads((tmp_path / "out" / "interpret.json").read_text())
        assert doc["most_biased_layer"] == 2
