import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

import fedsparsify as fs
from fedsparsify.cli import main


def base_config(out_dir, **extra):
    cfg = {
        "seed": 4,
        "out_dir": str(out_dir),
        "model": {
            "input_shape": [6],
            "layers": [
                {"type": "dense", "in": 6, "out": 12},
                {"type": "relu"},
                {"type": "dense", "in": 12, "out": 1},
            ],
        },
        "data": {"synthetic": {"n_train": 96, "n_val": 16, "n_test": 16}},
        "federation": {
            "num_learners": 4,
            "rounds": 3,
            "local_epochs": 1,
            "lr": 0.001,
            "batch_size": 8,
        },
        "environment": {"amount": "uniform", "distribution": "iid"},
    }
    cfg.update(extra)
    return cfg


def write_config(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def runner():
    return CliRunner()


class TestValidation:
    def test_missing_required_field_exits_2(self, runner, tmp_path):
        cfg = base_config(tmp_path / "out")
        del cfg["data"]["synthetic"]["n_train"]
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 2
        assert "n_train" in result.output

    def test_unknown_key_exits_2(self, runner, tmp_path):
        cfg = base_config(tmp_path / "out")
        cfg["federation"]["num_lernrs"] = 8
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 2
        assert "num_lernrs" in result.output

    def test_bad_model_shape_exits_2(self, runner, tmp_path):
        cfg = base_config(tmp_path / "out")
        cfg["model"]["layers"][2]["in"] = 5
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 2
        assert "layer" in result.output

    def test_invalid_json_exits_2(self, runner, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 2

    def test_mode_conflict_exits_2(self, runner, tmp_path):
        cfg = base_config(tmp_path / "out", mode="centralized")
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 2
        assert "mode" in result.output


class TestRunFederated:
    def test_artifacts_and_reproducibility(self, runner, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            path = write_config(tmp_path, base_config(out), name=f"{name}.json")
            result = runner.invoke(main, ["run-federated", "--config", str(path)])
            assert result.exit_code == 0, result.output
            assert (out / "metrics.csv").exists()
            assert (out / "summary.json").exists()
            assert (out / "model.fspw").exists()
            outs.append(out)
        strip = lambda text: [line.rsplit(",", 1)[0] for line in text.splitlines()]
        a = strip((outs[0] / "metrics.csv").read_text())
        b = strip((outs[1] / "metrics.csv").read_text())
        assert a == b
        assert (outs[0] / "model.fspw").read_bytes() == (outs[1] / "model.fspw").read_bytes()

    def test_summary_contents(self, runner, tmp_path):
        out = tmp_path / "out"
        sched = {"final_sparsity": 0.8}
        path = write_config(tmp_path, base_config(out, schedule=sched))
        result = runner.invoke(main, ["run-federated", "--config", str(path)])
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        p = summary["param_count"]
        assert summary["final_nonzero_params"] == p - int(np.floor(p * 0.8))
        loaded = fs.load_model(out / "model.fspw")
        assert loaded.mask.nonzero_count == summary["final_nonzero_params"]

    def test_ledger_only_dense(self, runner, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out)
        cfg["federation"].update(num_learners=8, rounds=40)
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-federated", "--config", str(path), "--ledger-only"])
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["cumulative_comm_params"] == 2 * 8 * 40 * summary["param_count"]

    def test_flag_overrides(self, runner, tmp_path):
        out = tmp_path / "out"
        path = write_config(tmp_path, base_config(out))
        result = runner.invoke(
            main,
            ["run-federated", "--config", str(path), "--seed", "9",
             "--sparsity", "0.5", "--env", "skewed-noniid"],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        assert summary["seed"] == 9
        assert summary["environment"] == "skewed-noniid"
        assert summary["schedule"]["final_sparsity"] == 0.5


class TestRunCentralized:
    def test_end_to_end(self, runner, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, centralized={"epochs": 3, "lr": 0.001, "batch_size": 8,
                                            "prune_at": 2, "target_sparsity": 0.5})
        del cfg["federation"]
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["run-centralized", "--config", str(path)])
        assert result.exit_code == 0, result.output
        summary = json.loads((out / "summary.json").read_text())
        p = summary["param_count"]
        assert summary["final_nonzero_params"] == p - int(np.floor(0.5 * p))
        rows = (out / "metrics.csv").read_text().splitlines()
        assert len(rows) == 1 + 3  # header + one row per epoch


class TestAttack:
    def test_end_to_end_two_learners(self, runner, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, attack={"unseen_samples": 64})
        cfg["federation"].update(num_learners=2, rounds=2)
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["attack", "--config", str(path)])
        assert result.exit_code == 0, result.output
        report = json.loads((out / "attack_report.json").read_text())
        assert report["num_attacks"] == 2
        assert len(report["matrix"]) == 2
        assert 0.0 <= report["mean_accuracy"] <= 1.0


class TestBench:
    def test_end_to_end(self, runner, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, bench={"duration_s": 0.05, "warmup_s": 0.02, "sparsity": 0.9})
        path = write_config(tmp_path, cfg)
        result = runner.invoke(main, ["bench", "--config", str(path)])
        assert result.exit_code == 0, result.output
        payload = json.loads((out / "bench.json").read_text())
        assert payload["dense"]["total_items"] > 0
        assert payload["sparse"]["total_items"] > 0
        assert payload["sparsity"] == pytest.approx(0.9, abs=0.01)

    def test_saved_model_digest_checked(self, runner, tmp_path):
        out = tmp_path / "out"
        cfg = base_config(out, bench={"duration_s": 0.02, "warmup_s": 0.01})
        path = write_config(tmp_path, cfg)
        other_spec = fs.ModelSpec((3,), (fs.Dense(3, 2), fs.Relu(), fs.Dense(2, 1)))
        params = fs.build_model(other_spec, 0)
        model_path = tmp_path / "other.fspw"
        fs.save_model(model_path, params, fs.PruneMask.all_ones(len(params)), spec=other_spec)
        result = runner.invoke(
            main, ["bench", "--config", str(path), "--model", str(model_path)]
        )
        assert result.exit_code == 1
        assert "different model spec" in result.output


class TestInspectModel:
    def test_prints_header(self, runner, tmp_path):
        spec = fs.ModelSpec((3,), (fs.Dense(3, 2), fs.Relu(), fs.Dense(2, 1)))
        params = fs.build_model(spec, 1)
        mask = fs.magnitude_mask(params, 0.5, fs.PruneMask.all_ones(len(params)))
        path = tmp_path / "m.fspw"
        fs.save_model(path, params, mask, spec=spec)
        result = runner.invoke(main, ["inspect-model", str(path)])
        assert result.exit_code == 0, result.output
        info = json.loads(result.output)
        assert info["param_count"] == 11
        assert info["nonzero_params"] == 6

    def test_corrupt_magic_reports_error(self, runner, tmp_path):
        path = tmp_path / "bad.fspw"
        path.write_bytes(b"XXXX" + b"\0" * 60)
        result = runner.invoke(main, ["inspect-model", str(path)])
        assert result.exit_code == 1
        assert "bad magic" in result.output
