"""Command-line interface: subcommands, config merging, exit codes."""

import json

import numpy as np
import pytest

from certsmooth.cli import EXIT_CONFIG, EXIT_OK, EXIT_PROTOCOL, main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestExitCodes:
    def test_bad_flag_value_is_config_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "cascade", "--sigmas", "0.5,0.25",
                           "--out", str(tmp_path))
        assert code == EXIT_CONFIG
        assert "config error" in err

    def test_missing_config_file_is_protocol_error(self, capsys, tmp_path):
        code, _, err = run(capsys, "cascade", "--config",
                           str(tmp_path / "nope.json"), "--out", str(tmp_path))
        assert code == EXIT_PROTOCOL

    def test_invalid_json_config(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{")
        code, _, _ = run(capsys, "cascade", "--config", str(bad),
                         "--out", str(tmp_path))
        assert code == EXIT_CONFIG


class TestBatchCommands:
    def test_cascade_smoke_produces_artifacts(self, capsys, tmp_path):
        out = tmp_path / "run"
        code, stdout, _ = run(
            capsys, "cascade", "--sigmas", "0.25,0.5,1.0", "--p0", "0.5",
            "--n", "200", "--n0", "40", "--seed", "1", "--out", str(out),
            "--dataset", str(self._tiny_dataset(tmp_path)), "--no-timing",
        )
        assert code == EXIT_OK
        assert (out / "records.csv").exists()
        assert (out / "summary.json").exists()
        assert (out / "curve.svg").exists()
        doc = json.loads((out / "summary.json").read_text())
        # flag overrides are echoed in the effective config
        assert doc["config"]["n"] == 200
        assert doc["config"]["sigmas"] == [0.25, 0.5, 1.0]
        assert doc["config"]["timing"] is False

    def test_flags_override_config_file(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "schema_version": 1, "method": "cascade", "sigmas": [0.25, 0.5],
            "n": 5000, "seed": 9,
        }))
        out = tmp_path / "run"
        code, _, _ = run(
            capsys, "cascade", "--config", str(cfg), "--n", "150",
            "--out", str(out), "--dataset", str(self._tiny_dataset(tmp_path)),
            "--no-timing",
        )
        assert code == EXIT_OK
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["n"] == 150      # flag wins
        assert doc["config"]["seed"] == 9     # file value preserved

    def test_certify_single_scale(self, capsys, tmp_path):
        out = tmp_path / "run"
        code, _, _ = run(
            capsys, "certify", "--sigma", "0.5", "--n", "150", "--n0", "30",
            "--out", str(out), "--dataset", str(self._tiny_dataset(tmp_path)),
            "--no-timing",
        )
        assert code == EXIT_OK
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["method"] == "single"

    @staticmethod
    def _tiny_dataset(tmp_path):
        from certsmooth.harness import default_dataset_spec

        path = tmp_path / "dataset.json"
        if not path.exists():
            path.write_text(json.dumps(default_dataset_spec(n_points=24, seed=3)))
        return path


class TestThreads:
    def test_env_var_mirrors_threads_flag(self, capsys, tmp_path, monkeypatch):
        ds = TestBatchCommands._tiny_dataset(tmp_path)
        out_env, out_flag = tmp_path / "env", tmp_path / "flag"
        monkeypatch.setenv("CERTSMOOTH_THREADS", "3")
        code, _, _ = run(capsys, "cascade", "--sigmas", "0.25,0.5", "--n", "120",
                         "--out", str(out_env), "--dataset", str(ds), "--no-timing")
        assert code == EXIT_OK
        monkeypatch.delenv("CERTSMOOTH_THREADS")
        code, _, _ = run(capsys, "cascade", "--sigmas", "0.25,0.5", "--n", "120",
                         "--threads", "1", "--out", str(out_flag),
                         "--dataset", str(ds), "--no-timing")
        assert code == EXIT_OK
        env_doc = json.loads((out_env / "summary.json").read_text())
        assert env_doc["config"]["threads"] == 3
        # thread count never changes the records
        assert (out_env / "records.csv").read_bytes() == \
            (out_flag / "records.csv").read_bytes()


class TestFocalCommand:
    def test_batch_mode_with_masks(self, capsys, tmp_path):
        out = tmp_path / "run"
        code, _, _ = run(
            capsys, "focal", "--masks", "[[1,0],[0,1]]", "--sigma0", "0.5",
            "--sigma1", "0.25", "--n", "150", "--n0", "30", "--sigmas", "0.5",
            "--out", str(out), "--dataset",
            str(TestBatchCommands._tiny_dataset(tmp_path)), "--no-timing",
        )
        assert code == EXIT_OK
        doc = json.loads((out / "summary.json").read_text())
        assert doc["config"]["method"] == "focal"
        assert doc["config"]["focal"]["masks"] == [[1, 0], [0, 1]]

    def test_instance_mode_prints_solution(self, capsys):
        code, stdout, _ = run(capsys, "focal", "--a", "1,1", "--t2", "3")
        assert code == EXIT_OK
        doc = json.loads(stdout)
        assert doc["b"] == pytest.approx([0.5, 0.5], abs=1e-9)
        assert doc["radius"] == pytest.approx(0.63246, abs=1e-4)

    def test_confidence_mode(self, capsys):
        code, stdout, _ = run(capsys, "focal", "--p", "0.8413447,0.8413447",
                              "--sigma0", "1.0", "--sigma1", "0.5")
        assert code == EXIT_OK
        doc = json.loads(stdout)
        assert doc["radius"] == pytest.approx(0.63246, abs=1e-3)
        assert doc["abstained"] is False

    def test_a_requires_t2(self, capsys):
        code, _, _ = run(capsys, "focal", "--a", "1,1")
        assert code == EXIT_CONFIG


class TestLossesCommand:
    def test_losses_from_csv(self, capsys, tmp_path):
        path = tmp_path / "preds.csv"
        rows = [
            "sample_id,noise_id,y,p_0,p_1",
            "0,0,0,0.6,0.4",
            "0,1,0,0.6,0.4",
            "1,0,0,0.1,0.9",
            "1,1,0,0.2,0.8",
        ]
        path.write_text("\n".join(rows) + "\n")
        code, stdout, _ = run(capsys, "losses", "--input", str(path),
                              "--lambda", "0.01", "--alpha-w", "1.0",
                              "--denoiser-loss", "1.0")
        assert code == EXIT_OK
        doc = json.loads(stdout)
        # sample 0: both rows correct -> brier 0.32; pair agrees on y -> ac 0
        # sample 1: both rows wrong+confident -> brier 0; pair wrong-agree -> 0.68
        assert doc["brier"] == pytest.approx(0.16)
        assert doc["anti_consistency"] == pytest.approx(0.34)
        assert doc["total"] == pytest.approx(1.0 + 0.01 * (0.16 + 0.34))

    def test_malformed_csv_is_protocol_error(self, capsys, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("wrong,header\n1,2\n")
        code, _, _ = run(capsys, "losses", "--input", str(path))
        assert code == EXIT_PROTOCOL


class TestScanSigma:
    def test_exact_scan(self, capsys, tmp_path):
        clf = tmp_path / "clf.json"
        clf.write_text(json.dumps({
            "kind": "grid", "boundaries": [[-1.0, 1.0]], "labels": [0, 1, 0],
            "num_classes": 2,
        }))
        code, stdout, _ = run(capsys, "scan-sigma", "--classifier", str(clf),
                              "--x", "0", "--y", "1", "--range", "0.5:2.0",
                              "--step", "0.05")
        assert code == EXIT_OK
        doc = json.loads(stdout)
        assert doc["above_range"] is False
        assert 1.4 < doc["critical_sigma"] < 1.6


class TestNoiseProtocolCommands:
    def test_emit_then_ingest(self, capsys, tmp_path):
        noise = tmp_path / "noise.bin"
        code, _, _ = run(capsys, "emit-noise", "--x", "0.5,0.5", "--sigma",
                         "0.5", "--n", "64", "--seed", "7", "--out", str(noise))
        assert code == EXIT_OK
        # classify the emitted rows with the default quadrant task
        from certsmooth.classifiers import load_noise_batch, write_prediction_dump
        from certsmooth.harness import default_classifier

        spec, pts = load_noise_batch(noise)
        labels = default_classifier().classify_batch(pts.astype(np.float64))
        preds = tmp_path / "preds.bin"
        write_prediction_dump(spec, labels, preds)
        code, stdout, _ = run(
            capsys, "ingest", "--predictions", str(preds), "--sigma", "0.5",
            "--n", "64", "--seed", "7", "--dim", "2", "--num-classes", "4",
        )
        assert code == EXIT_OK
        doc = json.loads(stdout)
        assert sum(doc["counts"]) == 64

    def test_ingest_wrong_spec_fails(self, capsys, tmp_path):
        noise = tmp_path / "noise.bin"
        run(capsys, "emit-noise", "--x", "0,0", "--sigma", "0.5", "--n", "8",
            "--seed", "7", "--out", str(noise))
        code, _, _ = run(
            capsys, "ingest", "--predictions", str(noise), "--sigma", "0.5",
            "--n", "8", "--seed", "7", "--dim", "2",
        )
        assert code == EXIT_PROTOCOL  # noise magic, not a prediction dump


class TestEvalCommand:
    def test_eval_recomputes_metrics(self, capsys, tmp_path):
        from certsmooth import harness

        ds = harness.make_gaussian_mixture(
            harness.default_dataset_spec(n_points=24, seed=3))
        config = harness.RunConfig(method="cascade", sigmas=(0.25, 0.5),
                                   n=200, n0=40, seed=1, timing=False)
        harness.run_batch(ds, harness.default_classifier(), config,
                          out_dir=tmp_path / "run")
        code, stdout, _ = run(capsys, "eval", "--records",
                              str(tmp_path / "run/records.csv"))
        assert code == EXIT_OK
        doc = json.loads(stdout)
        assert "acr" in doc["metrics"]
        ref = json.loads((tmp_path / "run/summary.json").read_text())
        assert doc["metrics"]["acr"] == pytest.approx(ref["metrics"]["acr"])
