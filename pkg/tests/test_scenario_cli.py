import json
from pathlib import Path

import pytest

from oco_rg import ConfigError, ScenarioConfig, load_config
from oco_rg.cli import main

REPO = Path(__file__).resolve().parents[1]

FAST_CSTR = """
[tracking]
grid_points = 61

[run]
steps = 160

[schedule]
q_period = 160
ramp_end = 60
plateau_end = 120
"""


def write(tmp_path, text, name="scenario.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        cfg = load_config(write(tmp_path, ""))
        assert cfg == ScenarioConfig()

    def test_shipped_cstr_config_equals_defaults(self):
        cfg = load_config(REPO / "configs" / "cstr.ini")
        assert cfg == ScenarioConfig(out_dir="out")

    def test_shipped_memory_config_loads(self):
        cfg = load_config(REPO / "configs" / "oco_memory.ini")
        assert cfg.plant_kind == "shift_register"
        assert cfg.u_min == -1.0 and cfg.v_max == 0.9

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[nonsense]\na = 1\n"))

    def test_unknown_key_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, "[run]\nwalltime = 5\n"))

    def test_bad_value_names_key(self, tmp_path):
        with pytest.raises(ConfigError, match="steps"):
            load_config(write(tmp_path, "[run]\nsteps = soon\n"))

    def test_reference_outside_window_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="r0"):
            load_config(write(tmp_path, "[reference]\nr0 = 0.95\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.ini")


class TestSimulate:
    def test_writes_outputs_and_exits_zero(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR)
        out = tmp_path / "out"
        code = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["violations"] == 0
        assert (out / "trajectory.csv").exists()
        assert (out / "timings.json").exists()
        rows = (out / "trajectory.csv").read_text().strip().splitlines()
        assert len(rows) == 160 + 1

    def test_single_step_run(self, tmp_path):
        cfg = write(tmp_path, "[run]\nsteps = 1\n[tracking]\ngrid_points = 61\n")
        out = tmp_path / "one"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        rows = (out / "trajectory.csv").read_text().strip().splitlines()
        assert len(rows) == 2
        report = json.loads((out / "report.json").read_text())
        assert "closed_loop" in report["regrets"]

    def test_malformed_config_exits_two(self, tmp_path):
        cfg = write(tmp_path, "[run]\nsteps = never\n")
        assert main(["simulate", "--config", str(cfg)]) == 2

    def test_infeasible_start_exits_one(self, tmp_path):
        # start state far from the steady state of r0: initialization fails
        cfg = write(tmp_path, FAST_CSTR + "\n[plant]\nx0 = 0.9 0.45\n")
        assert main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "bad")]) == 1

    def test_literal_weight_period_option(self, tmp_path):
        cfg = load_config(write(tmp_path, "[schedule]\nq_period = 24000\n"))
        assert cfg.q_period == 24000
        from oco_rg import CstrCostSchedule
        sched = CstrCostSchedule(horizon=2400, q_period=cfg.q_period)
        q = [sched.weight(t) for t in range(2400)]
        # a tenth of a period: the weight stays inside its budget band
        assert 50.0 <= min(q) and max(q) <= 250.0
        assert max(q) - min(q) < 100.0

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR)
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
            outs.append(out)
        for fname in ("trajectory.csv", "report.json"):
            assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()

    def test_override_flags(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR)
        out = tmp_path / "ov"
        code = main(["simulate", "--config", str(cfg), "--out", str(out),
                     "--oco", "prev_opt", "--safe-set", "variable",
                     "--governor", "command"])
        assert code == 0
        report = json.loads((out / "report.json").read_text())
        assert report["scenario"]["oco"] == "prev_opt"
        assert report["scenario"]["safe_set"] == "variable"
        assert "q_linear" in report["checks"]


class TestTable:
    def test_four_rows_and_normalization(self, tmp_path, capsys):
        cfg = write(tmp_path, FAST_CSTR)
        out = tmp_path / "table"
        code = main(["table1", "--config", str(cfg), "--out", str(out), "--jobs", "2"])
        assert code == 0
        lines = (out / "table.csv").read_text().strip().splitlines()
        assert len(lines) == 5
        pcts = [float(row.split(",")[2]) for row in lines[1:]]
        assert max(pcts) == pytest.approx(100.0)
        header = lines[0].split(",")
        assert "rg_median_us" in header


class TestVerify:
    def test_fast_scenario_passes(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR + "\n[safeset]\nkind = variable\n")
        assert main(["verify", "--config", str(cfg)]) == 0

    def test_inflated_level_fails_soundness(self, tmp_path, capsys):
        cfg = write(tmp_path, FAST_CSTR + "\n[safeset]\nlevel_scale = 100.0\n")
        code = main(["verify", "--config", str(cfg)])
        assert code == 1
        assert "FAIL" in capsys.readouterr().out

    def test_memory_scenario_passes(self, tmp_path):
        text = (REPO / "configs" / "oco_memory.ini").read_text()
        text = text.replace("steps = 600", "steps = 200")
        text = text.replace("dir = out_memory", f"dir = {tmp_path / 'm'}")
        cfg = write(tmp_path, text, name="mem.ini")
        assert main(["verify", "--config", str(cfg)]) == 0


class TestConstants:
    def test_emits_levels_and_gains(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR)
        out = tmp_path / "consts"
        assert main(["constants", "--config", str(cfg), "--out", str(out)]) == 0
        cert = json.loads((out / "certificate.json").read_text())
        assert 0.0 < cert["lam_tilde"] < 1.0
        table = (out / "constants.csv").read_text().strip().splitlines()
        header = table[0].split(",")
        assert header[:4] == ["v", "gamma", "V_max", "delta"]
        assert "K11" in header and "P12" in header
        first = [float(tok) for tok in table[1].split(",")]
        assert first[2] > 0.0  # V_max

    def test_reruns_identical(self, tmp_path):
        cfg = write(tmp_path, FAST_CSTR)
        blobs = []
        for name in ("c1", "c2"):
            out = tmp_path / name
            assert main(["constants", "--config", str(cfg), "--out", str(out)]) == 0
            blobs.append((out / "certificate.json").read_bytes()
                         + (out / "constants.csv").read_bytes())
        assert blobs[0] == blobs[1]


class TestLogging:
    def test_log_env_smoke(self, tmp_path, monkeypatch):
        monkeypatch.setenv("OCO_RG_LOG", "INFO")
        cfg = write(tmp_path, "[run]\nsteps = 2\n[tracking]\ngrid_points = 61\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "log")]) == 0
