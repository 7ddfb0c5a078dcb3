"""Command-line behavior: happy paths, output modes, and exit codes."""

import json
import subprocess
import sys

import pytest

from fdibench import load_measurements, read_records
from fdibench.cli import run_cli


def run(capsys, *argv):
    code = run_cli(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTopLevel:
    def test_version(self, capsys):
        code, out, _ = run(capsys, "--version")
        assert code == 0
        assert "fdibench 0.1.0" in out

    def test_no_arguments_is_usage_error(self, capsys):
        code, _, _ = run(capsys)
        assert code == 2

    def test_unknown_subcommand_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "frobnicate")
        assert code == 2

    def test_installed_entry_point(self):
        proc = subprocess.run(
            ["fdibench", "--version"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        assert "fdibench" in proc.stdout


class TestPowerflow:
    def test_table_output(self, capsys):
        code, out, _ = run(capsys, "powerflow")
        assert code == 0
        assert "losses 4.641 MW" in out
        assert "slack" in out

    def test_json_output(self, capsys):
        code, out, _ = run(capsys, "powerflow", "--json")
        assert code == 0
        doc = json.loads(out)
        assert len(doc["buses"]) == 9
        assert doc["p_loss_mw"] == pytest.approx(4.641, abs=5e-3)

    def test_dc_method(self, capsys):
        code, out, _ = run(capsys, "powerflow", "--method", "dc", "--json")
        assert code == 0
        assert json.loads(out)["method"] == "dc"

    def test_unknown_case_is_domain_error(self, capsys):
        code, _, err = run(capsys, "powerflow", "--case", "ieee300")
        assert code == 1
        assert "error:" in err

    def test_writes_state_and_measurements(self, capsys, tmp_path):
        state = tmp_path / "state.json"
        meas = tmp_path / "meas.csv"
        code, _, _ = run(capsys, "powerflow", "--state-out", str(state),
                         "--measurements-out", str(meas))
        assert code == 0
        assert state.exists()
        assert len(load_measurements(meas)) == 48


class TestEstimateAndAttack:
    @pytest.fixture()
    def attack_dir(self, capsys, tmp_path):
        out = tmp_path / "atk"
        code, _, _ = run(capsys, "attack", "--delta", "1.0", "--out", str(out))
        assert code == 0
        return out

    def test_attack_manifest(self, capsys, attack_dir):
        doc = json.loads((attack_dir / "attack_manifest.json").read_text())
        assert doc["manipulated"] == 34
        assert len(doc["manipulated_ids"]) == 34
        assert doc["detector_passed"] is True
        assert sorted(doc["area_buses"]) == [1, 2, 4, 5, 6, 7, 8]

    def test_estimate_clean_on_corrupted_file(self, capsys, attack_dir):
        code, out, _ = run(capsys, "estimate", "--measurements",
                           str(attack_dir / "corrupted.csv"), "--json")
        assert code == 0
        doc = json.loads(out)
        assert doc["passed"] is True
        assert doc["flagged"] == []
        assert doc["residual_j"] < 1e-6

    def test_estimate_missing_file_is_domain_error(self, capsys):
        code, _, err = run(capsys, "estimate", "--measurements", "/no/such/file.csv")
        assert code == 1
        assert "error:" in err

    def test_attack_json_summary(self, capsys):
        code, out, _ = run(capsys, "attack", "--delta", "0.5", "--json")
        assert code == 0
        doc = json.loads(out)
        assert doc["manipulated"] == 34
        assert doc["constraint_residual"] < 1e-10

    def test_malformed_seed_variable_is_usage_error(self, capsys):
        code, _, _ = run(capsys, "attack", "--seed-variable", "bogus")
        assert code == 2


class TestDatasetAndAnalyze:
    @pytest.fixture()
    def dataset_dir(self, capsys, tmp_path):
        out = tmp_path / "ds"
        code, raw, _ = run(capsys, "dataset", "--out", str(out), "--points", "2", "--json")
        assert code == 0
        return out, json.loads(raw)

    def test_dataset_counts(self, dataset_dir):
        _, doc = dataset_dir
        assert doc["normal_records"] == 2
        assert doc["attack_records"] == 4
        assert doc["skipped"] == []

    def test_dataset_files_readable(self, dataset_dir):
        out, doc = dataset_dir
        for name in doc["files"]:
            records = read_records(out / name)
            assert records and all(len(r.rows) == 48 for r in records)

    def test_analyze_verdict(self, capsys, dataset_dir):
        out, _ = dataset_dir
        code, text, _ = run(capsys, "analyze",
                            "--normal", str(out / "normal_000.csv"),
                            "--attack", str(out / "attack_000.csv"))
        assert code == 0
        assert "indistinguishable" in text

    def test_analyze_json(self, capsys, dataset_dir):
        out, _ = dataset_dir
        code, raw, _ = run(capsys, "analyze",
                           "--normal", str(out / "normal_000.csv"),
                           "--attack", str(out / "attack_000.csv"),
                           "--attack-record", "attack-000001-2",
                           "--json")
        assert code == 0
        doc = json.loads(raw)
        assert doc["stealthy"] is True
        assert doc["attack"]["record_id"] == "attack-000001-2"

    def test_analyze_unknown_record_is_domain_error(self, capsys, dataset_dir):
        out, _ = dataset_dir
        code, _, err = run(capsys, "analyze",
                           "--normal", str(out / "normal_000.csv"),
                           "--attack", str(out / "attack_000.csv"),
                           "--normal-record", "normal-999999")
        assert code == 1
        assert "no record" in err

    def test_demand_and_points_conflict_is_usage_error(self, capsys, tmp_path):
        code, _, _ = run(capsys, "dataset", "--out", str(tmp_path / "x"),
                         "--demand", "a.csv", "--points", "5")
        assert code == 2


class TestDcBaseline:
    def test_small_run(self, capsys):
        code, raw, _ = run(capsys, "dc-baseline", "--trials", "5", "--json")
        assert code == 0
        doc = json.loads(raw)
        assert doc["trials"] == 5
        assert doc["diverged"] + doc["flagged"] + doc["bypassed"] == 5
        assert doc["bypassed"] == 0
