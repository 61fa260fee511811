"""Config validation, subcommand behavior, atomic persistence, and
byte-identical reruns through the CLI surface."""

import json
import os

import numpy as np
import pytest

from kdlab import results
from kdlab.cli import (ConfigError, build_parser, cmd_report, main, parse_config)
from kdlab.compression import RprRow, aggregate_rpr


class TestParseConfig:
    def test_empty_config_gets_paper_defaults(self):
        spec = parse_config({})
        assert spec.criterion.lam_feat == 3.0
        assert spec.criterion.lam_logit == 15.0
        assert spec.schedule.momentum == 0.9
        assert spec.schedule.batch_size == 64
        assert spec.seeds == [0, 1, 2, 3, 4]

    def test_override_honored(self):
        spec = parse_config({"criterion": {"lam_feat": 7.5},
                             "schedule": {"epochs": 3}})
        assert spec.criterion.lam_feat == 7.5
        assert spec.schedule.epochs == 3
        assert spec.schedule.momentum == 0.9  # untouched default

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="unknown key 'optimizer'"):
            parse_config({"optimizer": {}})

    def test_unknown_nested_key_reports_path(self):
        with pytest.raises(ConfigError, match="unknown key 'schedule.warmup'"):
            parse_config({"schedule": {"warmup": 5}})

    def test_type_error_reports_section(self):
        with pytest.raises(ConfigError, match="invalid section 'schedule'"):
            parse_config({"schedule": {"epochs": 0}})

    def test_malformed_json_reports_location(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{"dataset": ')
        with pytest.raises(ConfigError, match="malformed JSON"):
            parse_config(str(p))

    def test_bad_variant_rejected(self):
        with pytest.raises(ConfigError, match="criterion"):
            parse_config({"criterion": {"variant": "attention_transfer"}})

    def test_bad_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config({"seeds": ["a"]})

    def test_bad_incremental_method(self):
        with pytest.raises(ConfigError, match="incremental.method"):
            parse_config({"incremental": {"method": "rehearsal"}})


class TestVerifyCommand:
    def test_exit_zero_and_four_reports(self, capsys):
        assert main(["verify", "--seed", "0"]) == 0
        reports = json.loads(capsys.readouterr().out)
        assert len(reports) == 4
        assert all(r["passed"] for r in reports)

    def test_parser_knows_all_subcommands(self):
        parser = build_parser()
        for cmd in ["verify", "train-teacher", "distill", "sweep-width",
                    "incremental", "report"]:
            assert cmd in parser.format_help()


class TestAtomicWrites:
    def test_interrupted_write_leaves_no_partial_file(self, tmp_path):
        target = str(tmp_path / "out.csv")
        results.write_csv_atomic(target, ["a", "b"], [[1, 2]])
        original = open(target).read()

        class Explosive:
            def __str__(self):
                raise RuntimeError("killed mid-serialization")

        with pytest.raises(RuntimeError):
            results.write_csv_atomic(target, ["a", "b"], [[1, Explosive()]])
        assert open(target).read() == original
        assert [f for f in os.listdir(tmp_path) if f.startswith(".tmp")] == []

    def test_row_width_checked(self, tmp_path):
        with pytest.raises(ValueError, match="row width"):
            results.write_csv_atomic(str(tmp_path / "x.csv"), ["a"], [[1, 2]])

    def test_float_cells_round_trip_exactly(self, tmp_path):
        v = 0.1 + 0.2  # not representable prettily; repr must round-trip
        target = str(tmp_path / "f.csv")
        results.write_csv_atomic(target, ["value"], [[v]])
        _, rows = results.read_csv(target)
        assert float(rows[0][0]) == v


class TestRunId:
    def test_deterministic(self):
        a = results.run_id({"x": 1}, seed=0, code_version="1")
        b = results.run_id({"x": 1}, seed=0, code_version="1")
        assert a == b and len(a) == 12

    def test_sensitive_to_config_seed_and_version(self):
        base = results.run_id({"x": 1}, 0, "1")
        assert results.run_id({"x": 2}, 0, "1") != base
        assert results.run_id({"x": 1}, 1, "1") != base
        assert results.run_id({"x": 1}, 0, "2") != base


class TestExportPlotData:
    def test_cell_count(self, tmp_path):
        rows = []
        for width in [8, 16, 32]:
            for variant in ["a", "b", "c", "d"]:
                for base in ["vanilla", "hkd"]:
                    for seed in [0, 1]:
                        rows.append(RprRow(variant, width, seed, base,
                                           0.8, 0.7, 0.9, 0.5))
        summary = aggregate_rpr(rows)
        path = str(tmp_path / "plot.csv")
        results.export_plot_data(summary, path)
        header, data = results.read_csv(path)
        assert header == ["width", "variant", "rpr_mean", "rpr_std", "base"]
        assert len(data) == 3 * 4 * 2

    def test_empty_sweep_header_only(self, tmp_path):
        path = str(tmp_path / "plot.csv")
        results.export_plot_data([], path)
        header, data = results.read_csv(path)
        assert header == ["width", "variant", "rpr_mean", "rpr_std", "base"]
        assert data == []


TINY_CONFIG = {
    "dataset": {"classes": 4, "dim": 8, "n_per_class": 30, "separation": 3.0, "seed": 0},
    "model": {"teacher_widths": [16, 8], "student_widths": [8, 4]},
    "schedule": {"epochs": 2, "batch_size": 32, "lr": 0.05},
    "seeds": [0, 1],
}


@pytest.fixture()
def tiny_config_file(tmp_path):
    cfg = dict(TINY_CONFIG)
    cfg["output_dir"] = str(tmp_path / "out")
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path), cfg["output_dir"]


class TestEndToEnd:
    def test_teacher_then_distill_then_report(self, tiny_config_file, capsys):
        cfg_path, out_dir = tiny_config_file
        assert main(["train-teacher", "-c", cfg_path]) == 0
        assert os.path.exists(os.path.join(out_dir, "teacher.json"))
        assert main(["distill", "-c", cfg_path, "--variant", "logits_se"]) == 0
        csvs = [f for f in os.listdir(out_dir) if f.startswith("distill-")]
        assert len(csvs) == 1
        header, rows = results.read_csv(os.path.join(out_dir, csvs[0]))
        assert header == results.COMPRESSION_CSV_HEADER
        assert {r[3] for r in rows} == {"0", "1"}  # both seeds present
        assert main(["report", "--in", out_dir]) == 0
        assert any(f.endswith(".report.json") for f in os.listdir(out_dir))

    def test_distill_rerun_is_byte_identical(self, tiny_config_file):
        cfg_path, out_dir = tiny_config_file
        main(["train-teacher", "-c", cfg_path])
        main(["distill", "-c", cfg_path, "--variant", "logits_se"])
        name = [f for f in os.listdir(out_dir) if f.startswith("distill-")][0]
        first = open(os.path.join(out_dir, name), "rb").read()
        main(["distill", "-c", cfg_path, "--variant", "logits_se"])
        assert open(os.path.join(out_dir, name), "rb").read() == first

    def test_incremental_runs_and_reruns_identically(self, tmp_path):
        cfg = {
            "dataset": {"classes": 4, "dim": 4, "n_per_class": 30, "separation": 2.5,
                        "seed": 0},
            "model": {"student_widths": [8, 4]},
            "incremental": {"n_tasks": 2, "epochs_per_task": 2, "method": "ewc",
                            "lam": 10.0},
            "seeds": [0],
            "output_dir": str(tmp_path / "out"),
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert main(["incremental", "-c", str(path)]) == 0
        out_dir = cfg["output_dir"]
        name = [f for f in os.listdir(out_dir) if f.endswith(".csv")][0]
        header, rows = results.read_csv(os.path.join(out_dir, name))
        assert header == results.INCREMENTAL_CSV_HEADER
        assert len(rows) == 3  # tasks seen 1 -> 1 row, tasks seen 2 -> 2 rows
        first = open(os.path.join(out_dir, name), "rb").read()
        assert main(["incremental", "-c", str(path)]) == 0
        assert open(os.path.join(out_dir, name), "rb").read() == first

    def test_missing_config_is_clean_error(self, capsys):
        assert main(["distill", "-c", "/nonexistent.json", "--variant", "none"]) == 2
        assert "error:" in capsys.readouterr().err


class TestReportCommand:
    def test_regenerates_summary_from_raw_csv_only(self, tmp_path):
        rows = [
            ["rid1", "ewc", 2, 1, 0, 0.75],
            ["rid1", "ewc", 2, 2, 0, 0.85],
            ["rid1", "ewc", 1, 1, 0, 0.95],
        ]
        path = str(tmp_path / "incremental-ewc-x.csv")
        results.write_csv_atomic(path, results.INCREMENTAL_CSV_HEADER, rows)
        cmd_report(str(tmp_path))
        out = json.load(open(str(tmp_path / "incremental-ewc-x.report.json")))
        assert out["ewc"]["final_acc_mean"] == pytest.approx(0.80)
