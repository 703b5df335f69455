"""CLI tests: command wiring, exit codes, idempotent reruns."""

import json
import os

import numpy as np
import pytest

from fuseprobe.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from fuseprobe.store import load_manifest


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    cfg = {
        "name": "order-bench", "order_task": True, "f_total": 16,
        "proto_scale": 2.0, "noise_sigma": 0.02, "class_count": 3,
        "views": ["cam0", "cam1"], "trained_view": "cam0",
        "videos_per_class_per_view": 6, "tokens_per_frame": 2, "dim": 16,
        "train_frac": 0.5, "val_frac": 0.17, "seed": 2,
    }
    cfg_path = out / "synth.json"
    cfg_path.write_text(json.dumps(cfg))
    code = main(["synth", "--config", str(cfg_path), "--out", str(out / "data")])
    assert code == EXIT_OK
    return out / "data"


class TestValidate:
    def test_ok(self, synth_dir, capsys):
        assert main(["validate", "--manifest", str(synth_dir / "manifest.json")]) == EXIT_OK
        out = capsys.readouterr().out
        assert "view_counts" in out

    def test_missing_file_is_validation_failure(self, synth_dir, tmp_path):
        manifest_path = synth_dir / "manifest.json"
        doc = json.loads(manifest_path.read_text())
        doc["records"][0]["path"] = "embeddings/ghost.fpeb"
        broken = tmp_path / "broken.json"
        broken.write_text(json.dumps(doc))
        # paths resolve relative to the manifest's own directory
        code = main(["validate", "--manifest", str(broken)])
        assert code == EXIT_VALIDATION

    def test_unreadable_manifest(self):
        assert main(["validate", "--manifest", "/nonexistent.json"]) == EXIT_VALIDATION


class TestUsageErrors:
    def test_unknown_head(self, synth_dir, tmp_path):
        code = main([
            "train", "--manifest", str(synth_dir / "manifest.json"),
            "--head", "mega_pool", "--model-dim", "16", "--out", str(tmp_path),
        ])
        assert code == EXIT_USAGE

    def test_train_without_head(self, synth_dir, tmp_path):
        code = main([
            "train", "--manifest", str(synth_dir / "manifest.json"),
            "--model-dim", "16", "--out", str(tmp_path),
        ])
        assert code == EXIT_USAGE

    def test_synth_without_source(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path)]) == EXIT_USAGE


class TestTrainEvalExport:
    def test_full_cycle(self, synth_dir, tmp_path, capsys):
        run = tmp_path / "run"
        code = main([
            "train", "--manifest", str(synth_dir / "manifest.json"),
            "--head", "avg_pool", "--model-dim", "16",
            "--epochs", "4", "--batch-size", "8", "--lr", "0.003",
            "--out", str(run), "--quiet",
        ])
        assert code == EXIT_OK
        assert (run / "checkpoint_best.fpck").exists()
        assert (run / "run_config.json").exists()

        eval_dir = tmp_path / "eval"
        code = main([
            "eval", "--checkpoint", str(run / "checkpoint_best.fpck"),
            "--manifest", str(synth_dir / "manifest.json"), "--out", str(eval_dir),
        ])
        assert code == EXIT_OK
        report = json.loads((eval_dir / "report.json").read_text())
        assert "per_view" in report and "cross_view" in report
        assert (eval_dir / "report.csv").read_text().startswith("view,role,")

        export = tmp_path / "features.csv"
        code = main([
            "export", "--checkpoint", str(run / "checkpoint_best.fpck"),
            "--manifest", str(synth_dir / "manifest.json"), "--out", str(export),
        ])
        assert code == EXIT_OK
        manifest = load_manifest(synth_dir / "manifest.json")
        assert len(export.read_text().splitlines()) == 1 + len(manifest.split_records("test"))

    def test_eval_without_test_split_names_problem(self, synth_dir, tmp_path, capsys):
        run = tmp_path / "run2"
        main([
            "train", "--manifest", str(synth_dir / "manifest.json"),
            "--head", "avg_pool", "--model-dim", "16", "--epochs", "1",
            "--batch-size", "8", "--out", str(run), "--quiet",
        ])
        doc = json.loads((synth_dir / "manifest.json").read_text())
        doc["records"] = [r for r in doc["records"] if r["split"] != "test"]
        stripped = synth_dir / "stripped.json"
        stripped.write_text(json.dumps(doc))
        code = main([
            "eval", "--checkpoint", str(run / "checkpoint_best.fpck"),
            "--manifest", str(stripped), "--out", str(tmp_path / "e2"),
        ])
        assert code == EXIT_VALIDATION
        assert "test" in capsys.readouterr().err

    def test_rerun_is_idempotent(self, synth_dir, tmp_path):
        args = [
            "train", "--manifest", str(synth_dir / "manifest.json"),
            "--head", "max_pool", "--model-dim", "16", "--epochs", "2",
            "--batch-size", "8", "--out", str(tmp_path / "idem"), "--quiet",
        ]
        assert main(args) == EXIT_OK
        snap = {
            p.name: p.read_bytes()
            for p in (tmp_path / "idem").iterdir() if p.is_file()
        }
        assert main(args) == EXIT_OK
        for p in (tmp_path / "idem").iterdir():
            if p.is_file():
                assert snap[p.name] == p.read_bytes(), f"{p.name} changed on rerun"


class TestSweep:
    def test_row_shape(self, synth_dir, tmp_path):
        out = tmp_path / "sweep"
        code = main([
            "sweep", "--manifest", str(synth_dir / "manifest.json"),
            "--heads", "avg_pool,max_pool", "--model-dim", "16",
            "--epochs", "2", "--batch-size", "8", "--out", str(out),
        ])
        assert code == EXIT_OK
        rows = (out / "sweep.csv").read_text().splitlines()[1:]
        views = 2
        metrics = 3
        assert len(rows) == 2 * views * metrics
        per_metric = {}
        for row in rows:
            head, view, metric, value = row.split(",")
            per_metric.setdefault(metric, []).append((head, view))
        for metric, pairs in per_metric.items():
            assert len(pairs) == 2 * views

    def test_unknown_head_rejected(self, synth_dir, tmp_path):
        code = main([
            "sweep", "--manifest", str(synth_dir / "manifest.json"),
            "--heads", "avg_pool,warp_pool", "--model-dim", "16",
            "--out", str(tmp_path / "s2"),
        ])
        assert code == EXIT_USAGE


class TestGradcheckCommand:
    def test_single_seed_quick_pass(self, capsys):
        code = main(["gradcheck", "--seeds", "1"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("max_rel_err") == 13

    def test_impossible_tolerance_fails_numerically(self, capsys):
        code = main(["gradcheck", "--seeds", "1", "--tol", "1e-18"])
        assert code == EXIT_NUMERICAL
