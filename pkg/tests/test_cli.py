"""Command-line workflow on a tiny planted-bias table.

prepare/train run once into a shared workspace; the sample/evaluate/sweep
tests reuse those artifacts. Configs are deliberately small (T=10, two
epochs, 40-row samples) so the whole file stays fast.
"""

import csv
import json
import os

import numpy as np
import pytest

from fairdiff.cli import main

SAMPLE_COUNT = 40


def write_toy_inputs(root):
    rng = np.random.default_rng(17)
    n = 300
    y = (rng.random(n) < 0.5).astype(int)
    s = np.where(rng.random(n) < np.where(y == 1, 0.8, 0.2), 0, 1)
    x1 = 2.0 * y + rng.standard_normal(n)
    x2 = 1.5 * s + 0.5 * rng.standard_normal(n)
    data_csv = os.path.join(root, "toy.csv")
    with open(data_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x1", "x2", "grp", "outcome"])
        for i in range(n):
            writer.writerow([
                repr(float(x1[i])), repr(float(x2[i])),
                "u" if s[i] == 0 else "v",
                "pos" if y[i] == 1 else "neg",
            ])
    schema_json = os.path.join(root, "schema.json")
    with open(schema_json, "w") as fh:
        json.dump({
            "columns": [
                {"name": "x1", "kind": "numerical"},
                {"name": "x2", "kind": "numerical"},
                {"name": "grp", "kind": "categorical", "values": ["u", "v"]},
                {"name": "outcome", "kind": "categorical",
                 "values": ["neg", "pos"]},
            ],
            "target": "outcome",
            "sensitive": ["grp"],
        }, fh)
    return data_csv, schema_json


def write_config(root, data_csv, schema_json, **extra):
    raw = {
        "data_csv": data_csv,
        "schema_json": schema_json,
        "out_dir": os.path.join(root, "out"),
        "schedule": {"kind": "cosine", "T": 10},
        "denoiser": {
            "hidden": 16, "depth": 1, "t_embed_dim": 6, "cond_embed_dim": 4,
            "epochs": 2, "batch_size": 128, "seed": 0,
        },
        "sample_count": SAMPLE_COUNT,
        "sweep_levels": [0, 5],
    }
    raw.update(extra)
    path = os.path.join(root, "config.json")
    with open(path, "w") as fh:
        json.dump(raw, fh)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli"))
    data_csv, schema_json = write_toy_inputs(root)
    config = write_config(root, data_csv, schema_json)
    assert main(["prepare", "--config", config]) == 0
    assert main(["train", "--config", config]) == 0
    return root, config


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


class TestPrepareTrain:
    def test_artifacts_exist(self, workspace):
        root, _ = workspace
        out = os.path.join(root, "out")
        assert os.path.exists(os.path.join(out, "manifest.json"))
        assert os.path.exists(os.path.join(out, "checkpoint.json"))
        assert os.path.exists(os.path.join(out, "loss_curve.csv"))

    def test_manifest_contents(self, workspace):
        root, _ = workspace
        with open(os.path.join(root, "out", "manifest.json")) as fh:
            manifest = json.load(fh)
        assert manifest["kind"] == "manifest"
        assert manifest["row_count"] == 300
        splits = manifest["splits"]
        sizes = [len(splits[p]) for p in ("train", "val", "test")]
        assert sizes == [150, 75, 75]
        combined = sorted(splits["train"] + splits["val"] + splits["test"])
        assert combined == list(range(300))

    def test_loss_curve_format(self, workspace):
        root, _ = workspace
        with open(os.path.join(root, "out", "loss_curve.csv")) as fh:
            lines = fh.read().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == "epoch,loss"
        assert len(lines) == 2 + 2  # header lines + one per epoch

    def test_missing_required_key_fails(self, tmp_path, capsys):
        path = os.path.join(str(tmp_path), "bad.json")
        with open(path, "w") as fh:
            json.dump({"out_dir": str(tmp_path)}, fh)
        assert main(["prepare", "--config", path]) == 2
        err = capsys.readouterr().err
        assert err.startswith("fairdiff: error: ")
        assert "data_csv" in err

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        path = os.path.join(str(tmp_path), "bad.json")
        with open(path, "w") as fh:
            json.dump({"data_csv": "x", "schema_json": "y", "typo_key": 1}, fh)
        assert main(["prepare", "--config", path]) == 2
        assert "typo_key" in capsys.readouterr().err

    def test_missing_subcommand_exits(self):
        with pytest.raises(SystemExit):
            main([])


class TestSample:
    def test_writes_csv_with_provenance_columns(self, workspace):
        root, config = workspace
        assert main(["sample", "--config", config]) == 0
        path = os.path.join(root, "out", "synthetic_level0_seed0.csv")
        with open(path) as fh:
            lines = fh.read().splitlines()
        assert lines[0].startswith("# config_hash=")
        header = lines[1].split(",")
        assert header == ["x1", "x2", "grp", "outcome", "cond_label", "cond_grp"]
        body = [line.split(",") for line in lines[2:]]
        assert len(body) == SAMPLE_COUNT
        assert {row[4] for row in body} <= {"neg", "pos"}
        assert {row[5] for row in body} <= {"u", "v"}

    def test_rerun_is_byte_identical(self, workspace):
        root, config = workspace
        path = os.path.join(root, "out", "synthetic_level0_seed0.csv")
        assert main(["sample", "--config", config]) == 0
        first = read_bytes(path)
        assert main(["sample", "--config", config]) == 0
        assert read_bytes(path) == first

    def test_seed_and_level_flags_pick_output_name(self, workspace):
        root, config = workspace
        assert main(["sample", "--config", config, "--seed", "3",
                     "--level", "10"]) == 0
        path = os.path.join(root, "out", "synthetic_level10_seed3.csv")
        assert os.path.exists(path)

    def test_out_flag_points_at_missing_artifacts(self, workspace, tmp_path,
                                                  capsys):
        _, config = workspace
        out = str(tmp_path / "alt")
        # artifacts live in the original out_dir; an empty --out dir has no
        # manifest, so sampling refuses instead of silently retraining
        assert main(["sample", "--config", config, "--out", out]) == 2
        assert "manifest.json" in capsys.readouterr().err

    def test_sample_count_override_in_place(self, workspace):
        root, config = workspace
        assert main(["sample", "--config", config, "--seed", "8",
                     "--set", "sample_count=25"]) == 0
        path = os.path.join(root, "out", "synthetic_level0_seed8.csv")
        with open(path) as fh:
            lines = fh.read().splitlines()
        assert len(lines) == 2 + 25

    def test_bad_set_expression_fails(self, workspace, capsys):
        _, config = workspace
        assert main(["sample", "--config", config, "--set", "nonsense"]) == 2
        assert "KEY=VALUE" in capsys.readouterr().err


class TestEvaluate:
    def test_report_written(self, workspace):
        root, config = workspace
        assert main(["sample", "--config", config]) == 0
        assert main(["evaluate", "--config", config]) == 0
        path = os.path.join(root, "out", "report_level0_seed0.json")
        with open(path) as fh:
            body = json.load(fh)
        assert body["kind"] == "report"
        report = body["report"]
        for key in ("density_error", "correlation_error", "dcr_distance",
                    "dcr_closeness", "auc", "dpr", "eor", "composite"):
            assert key in report
        assert report["metadata"]["sensitive_attribute"] == "grp"
        assert report["metadata"]["dcr_holdout"] == "val"
        w = report["metadata"]["weights"]
        expect = w[0] * report["auc"] + w[1] * report["dpr"] + w[2] * report["eor"]
        assert report["composite"] == pytest.approx(expect, abs=1e-12)

    def test_explicit_synthetic_path(self, workspace):
        root, config = workspace
        synth = os.path.join(root, "out", "synthetic_level0_seed0.csv")
        assert main(["evaluate", "--config", config, "--synthetic", synth]) == 0

    def test_missing_synthetic_fails(self, workspace, capsys):
        _, config = workspace
        assert main(["evaluate", "--config", config, "--seed", "77"]) == 2
        assert "fairdiff: error:" in capsys.readouterr().err


class TestArtifactGuards:
    def test_config_change_orphans_artifacts(self, workspace, tmp_path, capsys):
        root, _ = workspace
        data_csv = os.path.join(root, "toy.csv")
        schema_json = os.path.join(root, "schema.json")
        # same out_dir, different model identity (T changed)
        tampered = write_config(str(tmp_path), data_csv, schema_json,
                                schedule={"kind": "cosine", "T": 12})
        with open(tampered) as fh:
            raw = json.load(fh)
        raw["out_dir"] = os.path.join(root, "out")
        with open(tampered, "w") as fh:
            json.dump(raw, fh)
        assert main(["train", "--config", tampered]) == 2
        assert "config hash mismatch" in capsys.readouterr().err

    def test_sampling_knobs_do_not_orphan(self, workspace):
        root, config = workspace
        # guidance and level are not part of the model identity
        assert main(["sample", "--config", config, "--seed", "9",
                     "--set", "guidance.w_s=2.0", "--level", "4"]) == 0
        assert os.path.exists(
            os.path.join(root, "out", "synthetic_level4_seed9.csv")
        )

    def test_corrupt_artifact_rejected(self, workspace, tmp_path, capsys):
        root, config = workspace
        manifest = os.path.join(root, "out", "manifest.json")
        backup = read_bytes(manifest)
        try:
            with open(manifest, "w") as fh:
                json.dump({"not": "an artifact"}, fh)
            assert main(["sample", "--config", config]) == 2
            assert "not a recognized artifact" in capsys.readouterr().err
        finally:
            with open(manifest, "wb") as fh:
                fh.write(backup)


class TestSweep:
    def test_sweep_outputs_and_jobs_identity(self, workspace):
        root, config = workspace
        csv_path = os.path.join(root, "out", "sweep.csv")
        svg_path = os.path.join(root, "out", "sweep.svg")
        assert main(["sweep", "--config", config]) == 0
        serial = read_bytes(csv_path)
        svg_first = read_bytes(svg_path)
        assert main(["sweep", "--config", config, "--jobs", "2"]) == 0
        assert read_bytes(csv_path) == serial
        assert read_bytes(svg_path) == svg_first

    def test_sweep_csv_shape(self, workspace):
        root, _ = workspace
        with open(os.path.join(root, "out", "sweep.csv")) as fh:
            lines = fh.read().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1].split(",")[0] == "level"
        assert [line.split(",")[0] for line in lines[2:]] == ["0", "5"]

    def test_sweep_svg_is_chart(self, workspace):
        root, _ = workspace
        with open(os.path.join(root, "out", "sweep.svg")) as fh:
            svg = fh.read()
        assert "<svg" in svg and "polyline" in svg


class TestLogging:
    def test_invalid_log_level_fails_fast(self, monkeypatch, capsys):
        monkeypatch.setenv("FAIRDIFF_LOG", "verbose")
        assert main([]) == 2
        err = capsys.readouterr().err
        assert err.startswith("fairdiff: error: ")
        assert "FAIRDIFF_LOG" in err

    def test_known_levels_accepted(self, workspace, monkeypatch):
        _, config = workspace
        monkeypatch.setenv("FAIRDIFF_LOG", "info")
        assert main(["sample", "--config", config, "--seed", "11"]) == 0
