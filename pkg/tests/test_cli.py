import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from rfib.cli import main
from rfib.datasets import load_csv
from rfib.errors import CheckpointError
from rfib.io import load_checkpoint, save_checkpoint
from rfib.loss import RfibConfig
from rfib.model import ModelParams

SMALL_DATA = {
    "synthetic": {"p": 4, "n_per_cell": [40, 40, 80, 40], "signal_shift": [2, 0, 0, 0],
                  "bias_shift": [0, 0, 0, 1.5], "seed": 1},
    "test_per_cell": 25,
}
SMALL_TRAIN = {"lr": 0.01, "batch_size": 32, "max_epochs": 2, "patience": 2}


def write_config(path, model=None, sweep=None, data=None):
    doc = {"data": data or SMALL_DATA, "model": {"d": 3, **(model or {})}, "train": SMALL_TRAIN}
    if sweep is not None:
        doc["sweep"] = sweep
    path.write_text(json.dumps(doc))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestGenData:
    def test_default_spec(self, tmp_path, capsys):
        assert main(["gen-data", "--out-dir", str(tmp_path)]) == 0
        train, test = load_csv(tmp_path / "train.csv"), load_csv(tmp_path / "test.csv")
        assert train.cell_counts() == {(0, 0): 1000, (0, 1): 1000, (1, 0): 2000, (1, 1): 0}
        assert set(test.cell_counts().values()) == {250}
        assert train.p == 16
        assert "train: 4000 rows" in capsys.readouterr().out

    def test_rerun_identical(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SMALL_DATA))
        for name in ("a", "b"):
            assert main(["gen-data", "--spec", str(spec), "--out-dir", str(tmp_path / name)]) == 0
        for f in ("train.csv", "test.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_unknown_key(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"synthetic": {"p": 4, "flavour": 1}}))
        assert main(["gen-data", "--spec", str(spec), "--out-dir", str(tmp_path)]) == 2
        assert "flavour" in capsys.readouterr().err
        assert not (tmp_path / "train.csv").exists()

    def test_env_out_dir(self, tmp_path, monkeypatch):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(SMALL_DATA))
        monkeypatch.setenv("RFIB_OUT_DIR", str(tmp_path / "env"))
        assert main(["gen-data", "--spec", str(spec)]) == 0
        assert (tmp_path / "env" / "train.csv").exists()


class TestTrain:
    @pytest.mark.parametrize("model, method", [
        ({"alpha": 1.0, "beta1": 5, "beta2": 0}, "IB"),
        ({"alpha": 1.0, "beta1": 0, "beta2": 5}, "CFB"),
        ({"alpha": 0.5, "beta1": 5, "beta2": 5}, "RFIB"),
    ])
    def test_method_tag(self, tmp_path, model, method):
        cfg = write_config(tmp_path / "c.json", model)
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == 0
        doc = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert doc["method"] == method
        assert doc["schema"] == "rfib-metrics-v1"
        assert set(doc["metrics"]) >= {"acc", "acc_gap", "acc_min", "dp_gap", "eqodds_gap"}
        log_rows = read_rows(tmp_path / "out" / "train_log.csv")
        assert len(log_rows) == doc["final_epoch"]

    def test_checkpoint_round_trip(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"alpha": 0.5})
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
        params, model = load_checkpoint(tmp_path / "checkpoint.json")
        assert model == RfibConfig(alpha=0.5, d=3)
        assert (params.p, params.d) == (4, 3)

    def test_bad_config(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"model": {"alpha": 0.5, "lr": 1}}))
        assert main(["train", "--config", str(path), "--out-dir", str(tmp_path)]) == 2

    def test_csv_data(self, tmp_path):
        assert main(["gen-data", "--spec", _spec_file(tmp_path), "--out-dir", str(tmp_path)]) == 0
        cfg = write_config(tmp_path / "c.json", data={"train_csv": "train.csv", "test_csv": "test.csv"})
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == 0

    def test_missing_test_cell(self, tmp_path):
        rows = "a,y,s\n" + "".join(f"{i},{i % 2},0\n" for i in range(20))
        (tmp_path / "train.csv").write_text(rows)
        (tmp_path / "test.csv").write_text(rows)
        cfg = write_config(tmp_path / "c.json", data={"train_csv": "train.csv", "test_csv": "test.csv"})
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path / "out")]) == 5


def _spec_file(tmp_path):
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(SMALL_DATA))
    return str(path)


class TestSweep:
    def test_single_point_matches_train(self, tmp_path):
        sweep = {"alphas": [0.5], "beta1s": [5], "beta2s": [5], "include_baseline": False}
        cfg = write_config(tmp_path / "c.json", {"alpha": 0.5, "beta1": 5, "beta2": 5}, sweep)
        assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
        assert main(["train", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
        [row] = read_rows(tmp_path / "sweep.csv")
        doc = json.loads((tmp_path / "metrics.json").read_text())
        assert int(row["seed"]) == doc["run_seed"]
        for k in ("acc", "acc_gap", "dp_gap", "eqodds_gap"):
            assert float(row[k]) == doc["metrics"][k]

    def test_alpha_grid(self, tmp_path):
        sweep = {"alphas": [0, 0.5, 1], "beta1s": [5], "beta2s": [5], "include_baseline": False}
        cfg = write_config(tmp_path / "c.json", sweep=sweep)
        assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert sorted(float(r["alpha"]) for r in rows) == [0.0, 0.5, 1.0]
        assert all(r["error"] == "" for r in rows)

    def test_baseline_adds_cai(self, tmp_path):
        sweep = {"alphas": [0.5], "beta1s": [5], "beta2s": [5]}
        cfg = write_config(tmp_path / "c.json", {"beta1": 5}, sweep)
        assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert len(rows) == 2 and all(r["cai_05"] != "" for r in rows)

    def test_all_failing(self, tmp_path):
        sweep = {"alphas": [3.0], "beta1s": [5], "beta2s": [5], "include_baseline": False}
        cfg = write_config(tmp_path / "c.json", {"gamma2": 0.2}, sweep)
        assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path)]) == 4
        [row] = read_rows(tmp_path / "sweep.csv")
        assert "ValidityViolation" in row["error"]

    def test_requires_sweep_section(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["sweep", "--config", cfg, "--out-dir", str(tmp_path)]) == 2


class TestDivergence:
    def test_identical_is_zero(self, capsys):
        assert main(["divergence", "--mu", "0", "--var", "1", "--alpha", "0.5"]) == 0
        assert float(capsys.readouterr().out.strip()) == 0.0

    def test_validity_bound(self, capsys):
        assert main(["divergence", "--mu", "0", "--var", "3", "--alpha", "2"]) == 2
        assert "bound: 2" in capsys.readouterr().out

    def test_oracle(self, capsys):
        assert main(["divergence", "--mu", "1", "-0.5", "--var", "0.5", "1.2", "--alpha", "0.7", "--oracle"]) == 0
        lines = dict(line.split(": ") for line in capsys.readouterr().out.splitlines()[1:])
        assert float(lines["abs_diff"]) < 1e-6

    def test_mismatched_lengths(self):
        assert main(["divergence", "--mu", "1", "2", "--var", "1", "--alpha", "0.5"]) == 2


class TestEmbed:
    @pytest.fixture
    def checkpoint(self, tmp_path):
        params = ModelParams.initialize(4, 32, 0)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, params, RfibConfig(alpha=0.5))
        rng = np.random.default_rng(0)
        rows = "a,b,c,d,y,s\n" + "".join(
            ",".join(map(str, rng.normal(size=4))) + f",{i % 2},{(i // 2) % 2}\n" for i in range(100))
        (tmp_path / "data.csv").write_text(rows)
        return path

    def test_shape_and_determinism(self, tmp_path, checkpoint):
        for name in ("e1.csv", "e2.csv"):
            assert main(["embed", "--checkpoint", str(checkpoint), "--data", str(tmp_path / "data.csv"),
                         "--out", str(tmp_path / name)]) == 0
        rows = list(csv.reader(open(tmp_path / "e1.csv")))
        assert len(rows) == 101 and all(len(r) == 34 for r in rows)
        assert rows[0][:2] == ["mu_0", "mu_1"] and rows[0][-2:] == ["y", "s"]
        assert (tmp_path / "e1.csv").read_bytes() == (tmp_path / "e2.csv").read_bytes()

    def test_feature_mismatch(self, tmp_path, checkpoint):
        (tmp_path / "wide.csv").write_text("a,b,c,d,e,y,s\n1,2,3,4,5,0,1\n")
        assert main(["embed", "--checkpoint", str(checkpoint), "--data", str(tmp_path / "wide.csv"),
                     "--out", str(tmp_path / "e.csv")]) == 3
        assert not (tmp_path / "e.csv").exists()

    def test_corrupt_checkpoint(self, tmp_path):
        (tmp_path / "bad.json").write_text("{}")
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "bad.json")
        (tmp_path / "data.csv").write_text("a,y,s\n1,0,1\n")
        assert main(["embed", "--checkpoint", str(tmp_path / "bad.json"), "--data", str(tmp_path / "data.csv"),
                     "--out", str(tmp_path / "e.csv")]) == 3


class TestAudit:
    def test_hand_set(self, tmp_path, capsys):
        records = [(1, 1, 0), (1, 1, 0), (1, 0, 0), (0, 0, 0), (1, 1, 1), (1, 0, 1), (0, 0, 1), (0, 1, 1)]
        path = tmp_path / "pred.csv"
        path.write_text("y_hat,y,s\n" + "".join(f"{a},{b},{c}\n" for a, b, c in records))
        assert main(["audit", "--predictions", str(path), "--baseline-acc", "60", "--baseline-gap", "30"]) == 0
        m = json.loads(capsys.readouterr().out)["metrics"]
        assert (m["acc"], m["acc_gap"], m["dp_gap"]) == (62.5, 25.0, 25.0)
        assert m["cai_05"] == pytest.approx(3.75, abs=1e-12)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "pred.csv"
        path.write_text("y,s\n1,0\n")
        assert main(["audit", "--predictions", str(path)]) == 3


class TestCheckpoint:
    def test_round_trip_bits(self, tmp_path):
        params = ModelParams.initialize(5, 4, 3)
        cfg = RfibConfig(alpha=1.4, beta1=2.0, beta2=3.0, d=4)
        save_checkpoint(tmp_path / "c.json", params, cfg)
        back, back_cfg = load_checkpoint(tmp_path / "c.json")
        assert back.flat.tobytes() == params.flat.tobytes()
        assert back_cfg == cfg


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "rfib", "divergence", "--mu", "1", "--var", "1", "--alpha", "1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert float(proc.stdout) == pytest.approx(0.5, abs=1e-12)
