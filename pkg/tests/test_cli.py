import csv
import io
import json
from pathlib import Path

import pytest

from outer_restart.cli import main
from outer_restart.config import ConfigError, ExperimentConfig, sweep_config_from_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


def base_config(**over):
    cfg = {
        "model": {"spectrum": {"sigmas": [0.95]}},
        "optimizer": {"kind": "HB", "nu": 1.0, "beta_out": 0.9},
        "schedule": {"variant": "none"},
        "horizon": 80,
    }
    cfg.update(over)
    return cfg


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_no_restart_panel(self, tmp_path, capsys):
        out = tmp_path / "traj.csv"
        assert main(["simulate", str(CONFIGS / "single_mode_no_restart.json"), "-o", str(out)]) == 0
        rows = read_rows(out)
        assert len(rows) == 81
        assert list(rows[0]) == ["round", "mode_or_dim", "x", "m", "loss", "restarted"]
        text = capsys.readouterr().out
        assert "final loss" in text and "restart rounds: []" in text

    def test_horizon_zero(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", base_config(horizon=0))
        out = tmp_path / "o.csv"
        assert main(["simulate", str(cfg), "-o", str(out), "-q"]) == 0
        rows = read_rows(out)
        assert len(rows) == 1 and rows[0]["round"] == "0" and float(rows[0]["loss"]) == 0.5

    def test_output_from_config(self, tmp_path):
        cfg = write_json(tmp_path / "c.json", base_config(horizon=3, output=str(tmp_path / "named.csv")))
        assert main(["simulate", str(cfg), "-q"]) == 0
        assert len(read_rows(tmp_path / "named.csv")) == 4

    def test_machine_summary(self, tmp_path, capsys):
        sched = {"variant": "global", "period": 5}
        cfg = write_json(tmp_path / "c.json", base_config(schedule=sched, horizon=12))
        assert main(["simulate", str(cfg), "-o", str(tmp_path / "o.csv"), "--csv"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "final_loss,diverged_at,restart_rounds"
        assert lines[1].endswith(",,5 10")

    @pytest.mark.parametrize(
        "bad",
        [
            '{"model": {"spectrum": {"sigmas": [0.95]}}, "optimizer": {"kind": "HB", "nu": 1.0}',
            json.dumps(base_config(optimizer={"kind": "HB", "nu": 1.0})),
            json.dumps(base_config(schedule={"variant": "weekly"})),
            json.dumps(base_config(optimizer={"kind": "HB", "nu": 1.0, "beta_out": 1.5})),
            json.dumps(base_config(schedule={"variant": "per_mode", "periods": [3, 4]})),
        ],
    )
    def test_malformed_config(self, tmp_path, capsys, bad):
        cfg = tmp_path / "bad.json"
        cfg.write_text(bad)
        out = tmp_path / "o.csv"
        assert main(["simulate", str(cfg), "-o", str(out)]) == 2
        assert not out.exists()
        assert capsys.readouterr().err.startswith("error: invalid config")

    def test_json_error_reports_position(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{\n  "horizon": 80,\n  oops\n}')
        assert main(["simulate", str(cfg)]) == 2
        assert "bad.json:3:" in capsys.readouterr().err

    def test_divergence(self, tmp_path, capsys):
        cfg = write_json(
            tmp_path / "c.json",
            base_config(model={"spectrum": {"sigmas": [1.0]}}, optimizer={"kind": "HB", "nu": 30.0, "beta_out": 0.5},
                        horizon=2000),
        )
        out = tmp_path / "o.csv"
        assert main(["simulate", str(cfg), "-o", str(out)]) == 3
        rows = read_rows(out)
        assert 0 < len(rows) < 2001
        assert "diverged" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "name",
        ["single_mode_restart.json", "six_modes_per_mode.json", "three_blocks_blockwise.json", "quadratic_diag.json"],
    )
    def test_shipped_configs_run(self, tmp_path, name):
        assert main(["simulate", str(CONFIGS / name), "-o", str(tmp_path / "o.csv"), "-q"]) == 0


class TestRegime:
    @pytest.mark.parametrize("beta,text", [(0.9, "(0.026, 38)"), (0.99, "(0.0025, 398)")])
    def test_printed_interval(self, capsys, beta, text):
        assert main(["regime", "--nu", "1", "--beta", str(beta)]) == 0
        out = capsys.readouterr().out
        assert text in out
        assert "Critical, Critical" in out

    def test_csv(self, capsys):
        assert main(["regime", "--nu", "1", "--beta", "0.5", "--csv"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        assert header == "sigma_lo,sigma_hi,covers_lo_to_1,endpoint_lo,endpoint_hi"
        lo, hi, covers, e1, e2 = row.split(",")
        assert float(lo) == pytest.approx((1 - 0.5**0.5) / (1 + 0.5**0.5), rel=1e-15)
        assert (covers, e1, e2) == ("1", "Critical", "Critical")

    def test_invalid(self):
        assert main(["regime", "--nu", "1", "--beta", "1.0"]) == 2
        assert main(["regime", "--nu", "1", "--beta", "0"]) == 2


class TestPeriod:
    def test_report(self, capsys):
        assert main(["period", "--sigma", "0.95", "--nu", "1", "--beta", "0.9", "--csv"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        rec = dict(zip(header.split(","), row.split(",")))
        assert rec["regime"] == "ComplexConjugate"
        assert int(rec["k_star"]) == 55
        assert float(rec["r_inf"]) == pytest.approx(0.052680, abs=1e-6)
        assert rec["crossover"] == "True"
        assert rec["k_phase"].split() == ["5", "15", "25"]

    def test_zero_sigma(self, capsys):
        assert main(["period", "--sigma", "0"]) == 4
        assert "no cancellation" in capsys.readouterr().err

    def test_real_regime_still_prints_k_star(self, capsys):
        assert main(["period", "--sigma", "0.01", "--beta", "0.9"]) == 4
        cap = capsys.readouterr()
        assert "k_star:" in cap.out and "RealDistinct" in cap.err
        assert main(["period", "--sigma", "0.01", "--beta", "0.9", "--no-phase"]) == 0

    def test_spectrum_file(self, capsys):
        assert main(["period", "--spectrum-file", str(CONFIGS / "six_modes.csv"), "--csv"]) == 0
        header, row = capsys.readouterr().out.splitlines()
        rec = dict(zip(header.split(","), row.split(",")))
        assert rec["modes"] == "6"
        assert 1 <= int(rec["k_star"]) <= 64

    def test_bad_inputs(self, tmp_path):
        assert main(["period"]) == 2
        assert main(["period", "--sigma", "0.5", "--kmin", "5", "--kmax", "2"]) == 2
        bad = tmp_path / "s.csv"
        bad.write_text("lambda\n0.5\n")
        assert main(["period", "--spectrum-file", str(bad)]) == 2


class TestSweep:
    def sweep_cfg(self, tmp_path, **over):
        cfg = {"beta_grid": [0.5, 0.9], "nu_grid": [0.5, 1.0, 1.5], "k_grid": [3, 5], "kinds": ["HB", "NAG"],
               "horizon": 40}
        cfg.update(over)
        return write_json(tmp_path / "sweep.json", cfg)

    def test_row_count(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        assert main(["sweep", str(self.sweep_cfg(tmp_path)), "-o", str(out)]) == 0
        assert len(read_rows(out)) == 2 * 3 * (2 + 1) * 2
        assert "cells written" in capsys.readouterr().out

    def test_byte_identical_repeat(self, tmp_path):
        cfg = str(self.sweep_cfg(tmp_path))
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["sweep", cfg, "-o", str(a), "-q"]) == 0
        assert main(["sweep", cfg, "-o", str(b), "-q"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_variant(self, tmp_path):
        cfg = self.sweep_cfg(tmp_path, schedule={"variant": "per_mode"})
        out = tmp_path / "s.csv"
        assert main(["sweep", str(cfg), "-o", str(out)]) == 2
        assert not out.exists()

    def test_default_grid_counts(self):
        cfg, _ = sweep_config_from_dict(json.loads((CONFIGS / "robustness_sweep.json").read_text()))
        assert len(cfg.beta_grid) == 12 and len(cfg.nu_grid) == 15 and len(cfg.k_grid) == 13


class TestValidate:
    def test_passes(self, capsys):
        assert main(["validate"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 6

    def test_detects_seeded_fault(self, capsys):
        assert main(["validate", "--inject-fault"]) == 1
        assert "[FAIL] recurrence vs matrix power" in capsys.readouterr().out


class TestConfigRoundTrip:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json") if "sweep" not in p.name))
    def test_round_trip(self, name):
        cfg = ExperimentConfig.load(CONFIGS / name)
        again = ExperimentConfig.from_dict(json.loads(cfg.dumps()), CONFIGS)
        assert again == cfg
        assert again.dumps() == cfg.dumps()

    def test_soft_schedule(self):
        d = base_config(schedule={"variant": "soft", "period": 4, "retain": 0.5, "inject": 0.1})
        cfg = ExperimentConfig.from_dict(d)
        sched = cfg.build_schedule()
        assert (sched.period, sched.retain, sched.inject) == (4, 0.5, 0.1)

    def test_unknown_field(self):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(base_config(horizn=3))
        assert "horizn" in str(exc.value)
