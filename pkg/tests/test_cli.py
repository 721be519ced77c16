"""End-to-end CLI behavior: exit codes, determinism, output contracts."""

import json
from pathlib import Path

import numpy as np
import pytest

from l2p.cli import main
from l2p.io import load_weights

T, D = 30, 16


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    d = root / "data"
    code = main(["gen", "--kind", "smooth", "--seed", "0", "--count", "10",
                 "--steps", str(T), "--dim", str(D), "--out", str(d)])
    assert code == 0
    return d


@pytest.fixture(scope="module")
def weights_path(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("weights")
    w = root / "w.l2pw"
    code = main(["train", "--data", str(data_dir), "--epochs", "50", "--out", str(w)])
    assert code == 0
    return w


class TestGen:
    def test_writes_files_and_manifest(self, data_dir):
        files = sorted(p.name for p in data_dir.iterdir())
        assert "manifest.json" in files
        assert sum(1 for f in files if f.endswith(".l2pt")) == 10
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["base_seed"] == 0 and manifest["count"] == 10

    def test_rerun_identical_bytes(self, tmp_path, capsys):
        for d in ("a", "b"):
            code, _, _ = run(capsys, "gen", "--kind", "smooth", "--seed", "3",
                             "--count", "2", "--steps", "10", "--dim", "4",
                             "--out", str(tmp_path / d))
            assert code == 0
        for name in ("traj_000.l2pt", "traj_001.l2pt", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_zero_count_usage_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "gen", "--count", "0", "--out", str(tmp_path / "x"))
        assert code == 2
        assert "count" in err

    def test_denoiser_kind(self, tmp_path, capsys):
        code, _, _ = run(capsys, "gen", "--kind", "denoiser", "--seed", "5",
                         "--count", "2", "--steps", "12", "--dim", "6",
                         "--model-seed", "1", "--out", str(tmp_path / "dn"))
        assert code == 0
        manifest = json.loads((tmp_path / "dn" / "manifest.json").read_text())
        assert manifest["model_seed"] == 1


class TestTrain:
    def test_report_json_on_stdout(self, data_dir, weights_path, capsys):
        code, out, _ = run(capsys, "train", "--data", str(data_dir),
                           "--epochs", "50", "--out", str(weights_path))
        assert code == 0
        report = json.loads(out)
        assert set(report) == {"final_train_mse", "converged", "epochs", "wall_time_s"}
        assert report["epochs"] == 50

    def test_oracle_flag_writes_second_file(self, data_dir, tmp_path, capsys):
        w = tmp_path / "w.l2pw"
        code, _, _ = run(capsys, "train", "--data", str(data_dir), "--epochs", "20",
                         "--oracle", "--out", str(w))
        assert code == 0
        assert (tmp_path / "w.oracle.l2pw").exists()
        assert load_weights(tmp_path / "w.oracle.l2pw").num_steps == T

    def test_sidecar_records_manifest_hash(self, weights_path):
        sidecar = json.loads(Path(str(weights_path) + ".json").read_text())
        assert len(sidecar["provenance"]["dataset_manifest_sha256"]) == 64

    def test_missing_data_dir_usage_error(self, tmp_path, capsys):
        code, _, _ = run(capsys, "train", "--data", str(tmp_path / "absent"),
                         "--out", str(tmp_path / "w.l2pw"))
        assert code == 2


class TestEval:
    def test_csv_row_with_ideal_reduction(self, data_dir, capsys):
        code, out, _ = run(capsys, "eval", "--data", str(data_dir),
                           "--predictor", "taylor:2", "--interval", "5")
        assert code == 0
        header, row = out.strip().splitlines()
        cells = dict(zip(header.split(","), row.split(",")))
        assert cells["predictor"] == "taylor:2"
        assert float(cells["flops_reduction"]) == 5.0

    def test_interval_one_zero_mse(self, data_dir, capsys):
        code, out, _ = run(capsys, "eval", "--data", str(data_dir),
                           "--predictor", "naive", "--interval", "1",
                           "--format", "json")
        assert code == 0
        rec = json.loads(out)
        assert rec["aggregate_mse"] == 0.0
        assert rec["psnr_db"] == "inf"

    def test_learned_beats_taylor_on_held_out(self, weights_path, tmp_path, capsys):
        held = tmp_path / "held"
        run(capsys, "gen", "--kind", "smooth", "--seed", "500", "--count", "5",
            "--steps", str(T), "--dim", str(D), "--out", str(held))
        code, out, _ = run(capsys, "eval", "--data", str(held),
                           "--predictor", f"l2p:{weights_path}", "--interval", "5",
                           "--format", "json")
        l2p_mse = json.loads(out)["aggregate_mse"]
        code, out, _ = run(capsys, "eval", "--data", str(held),
                           "--predictor", "taylor:2", "--interval", "5",
                           "--format", "json")
        taylor_mse = json.loads(out)["aggregate_mse"]
        assert l2p_mse < taylor_mse

    def test_unknown_predictor_usage_error(self, data_dir, capsys):
        code, _, _ = run(capsys, "eval", "--data", str(data_dir),
                         "--predictor", "wizard")
        assert code == 2


class TestAnalyze:
    def test_profile_json(self, data_dir, tmp_path, capsys):
        out_file = tmp_path / "profile.json"
        traj_file = data_dir / "traj_000.l2pt"
        code, _, _ = run(capsys, "analyze", "--traj", str(traj_file),
                         "--out", str(out_file))
        assert code == 0
        rec = json.loads(out_file.read_text())
        assert rec["num_steps"] == T
        assert len(rec["fidelity"]) == T and len(rec["rank"]) == T
        assert rec["fidelity"][0] == 0.0

    def test_unreadable_file_runtime_error(self, tmp_path, capsys):
        code, _, err = run(capsys, "analyze", "--traj", str(tmp_path / "nope.l2pt"))
        assert code == 1


class TestCoeffs:
    def test_taylor_first_order(self, capsys):
        code, out, _ = run(capsys, "coeffs", "--method", "taylor", "--order", "1",
                           "--interval", "5", "--offset", "2")
        assert code == 0
        rec = json.loads(out)
        assert rec["terms"] == {"0": 0.6, "-5": 0.4}

    def test_taylor_order_zero(self, capsys):
        code, out, _ = run(capsys, "coeffs", "--method", "taylor", "--order", "0",
                           "--interval", "1", "--offset", "0")
        rec = json.loads(out)
        assert rec["terms"] == {"0": 1.0}

    def test_foca_six_terms(self, capsys):
        code, out, _ = run(capsys, "coeffs", "--method", "foca", "--interval", "5")
        rec = json.loads(out)
        assert list(rec["terms"].values()) == [1.75, -1.0, 0.25, 0.75, -1.0, 0.25]
        assert rec["weight_sum"] == 1.0

    def test_invalid_method(self, capsys):
        code, _, _ = run(capsys, "coeffs", "--method", "chebyshev")
        assert code == 2


class TestConvert:
    def test_roundtrip(self, weights_path, capsys):
        code, out, _ = run(capsys, "convert", "--weights", str(weights_path),
                           "--row", "8", "--inverse")
        assert code == 0
        rec = json.loads(out)
        w = np.array(rec["weights"])
        w2 = np.array(rec["weights_roundtrip"])
        assert np.abs(w - w2).max() < 1e-8
        assert len(rec["difference_coeffs"]) == 8

    def test_reuse_row_maps_to_order_zero(self, tmp_path, capsys):
        from l2p.io import save_weights
        from l2p.learner import init_weights
        p = tmp_path / "init.l2pw"
        save_weights(init_weights(12), p)
        code, out, _ = run(capsys, "convert", "--weights", str(p), "--row", "6")
        rec = json.loads(out)
        np.testing.assert_allclose(rec["difference_coeffs"], [1.0] + [0.0] * 5,
                                   atol=1e-12)

    def test_conditioning_gate(self, tmp_path, capsys):
        from l2p.io import save_weights
        from l2p.learner import init_weights
        p = tmp_path / "big.l2pw"
        save_weights(init_weights(50), p)
        code, _, err = run(capsys, "convert", "--weights", str(p), "--row", "40")
        assert code == 2
        assert "32" in err


class TestBench:
    def test_full_factorial_row_count_and_determinism(self, data_dir, weights_path,
                                                      capsys):
        argv = ["bench", "--data", str(data_dir), "--intervals", "1,5,7,10",
                "--predictors", f"naive,taylor:2,foca,l2p:{weights_path}",
                "--seeds", "0..9"]
        code, out1, _ = run(capsys, *argv)
        assert code == 0
        lines = out1.strip().splitlines()
        assert len(lines) == 1 + 4 * 4 * 10
        code, out2, _ = run(capsys, *argv)
        assert out1 == out2

    def test_naive_mse_monotone_in_interval_per_seed(self, data_dir, capsys):
        code, out, _ = run(capsys, "bench", "--data", str(data_dir),
                           "--intervals", "1,5,7,10", "--predictors", "naive",
                           "--seeds", "0..4")
        rows = out.strip().splitlines()[1:]
        by_seed = {}
        for r in rows:
            pred, N, seed, mse = r.split(",")[:4]
            by_seed.setdefault(int(seed), []).append((int(N), float(mse)))
        for seed, vals in by_seed.items():
            vals.sort()
            mses = [m for _, m in vals]
            assert mses == sorted(mses), (seed, mses)

    def test_missing_seed_usage_error(self, data_dir, capsys):
        code, _, _ = run(capsys, "bench", "--data", str(data_dir),
                         "--seeds", "90..95")
        assert code == 2

    def test_thread_cap_does_not_change_output(self, data_dir, capsys, monkeypatch):
        argv = ["bench", "--data", str(data_dir), "--intervals", "5",
                "--predictors", "naive,taylor:2", "--seeds", "0..3"]
        monkeypatch.setenv("L2P_THREADS", "1")
        _, serial, _ = run(capsys, *argv)
        monkeypatch.setenv("L2P_THREADS", "4")
        _, threaded, _ = run(capsys, *argv)
        assert serial == threaded


class TestConfigPrecedence:
    def test_flag_beats_config_beats_default(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"order": 1, "interval": 5, "offset": 2}))
        # config supplies everything
        code, out, _ = run(capsys, "--config", str(cfg), "coeffs", "--method", "taylor")
        assert json.loads(out)["terms"] == {"0": 0.6, "-5": 0.4}
        # explicit flag wins over config
        code, out, _ = run(capsys, "--config", str(cfg), "coeffs", "--method", "taylor",
                           "--order", "0")
        assert json.loads(out)["terms"] == {"0": 1.0}
