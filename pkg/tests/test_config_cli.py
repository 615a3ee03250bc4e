import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from fcrbess.bess import simulate
from fcrbess.cli import main
from fcrbess.config import ConfigError, RunConfig, example_config_text
from fcrbess.degradation import rainflow

FAST = {
    "seed": 5,
    "data": {"synthetic_frequency": {"days": 2}},
    "optimizer": {"n_c": 1500, "n_c_prime": 1600, "n_D": 2, "population_size": 5, "max_iterations": 2,
                  "max_years": 1, "box_lower": [1.0, 0.45, 0.0, 0.1], "box_upper": [2.0, 0.5, 0.05, 0.2]},
}


def write_cfg(tmp_path, extra=None, name="cfg.yaml"):
    raw = dict(FAST)
    for k, v in (extra or {}).items():
        raw[k] = v
    p = tmp_path / name
    p.write_text(yaml.safe_dump(raw))
    return p


class TestConfig:
    def test_example_is_valid(self):
        cfg = RunConfig.from_dict(yaml.safe_load(example_config_text()))
        assert cfg.bess().e_rated_mwh == 1.6
        assert cfg.optimizer().n_c == 10_000
        assert cfg.sweep_grid()[2] == (500.0, 400.0, 300.0)

    def test_problems_collected(self):
        with pytest.raises(ConfigError) as exc:
            RunConfig.from_dict({"seed": -1, "bogus": 1, "controller": {"o_d": 0.5}})
        text = str(exc.value)
        assert "bogus" in text

    def test_all_builder_errors_reported(self):
        with pytest.raises(ConfigError) as exc:
            RunConfig.from_dict({"seed": -1, "controller": {"o_d": 0.5}, "market": {"r_mw": 5.0}})
        assert len(exc.value.problems) >= 3

    def test_missing_data_file(self, tmp_path):
        p = write_cfg(tmp_path, {"data": {"frequency_csv": "nope.csv"}})
        with pytest.raises(ConfigError, match="nope.csv"):
            RunConfig.load(p)

    def test_relative_paths(self, tmp_path):
        (tmp_path / "sub").mkdir()
        f = tmp_path / "sub" / "f.csv"
        f.write_text("timestamp,frequency\n" + "".join(f"{t},50.0\n" for t in range(0, 2 * 86400, 10)))
        p = write_cfg(tmp_path, {"data": {"frequency_csv": "sub/f.csv"}})
        cfg = RunConfig.load(p)
        assert len(cfg.frequency()) == 2 * 8640

    def test_custom_ageing(self):
        ageing = {"alpha_cap": {"soc_poly": [1e-4]}, "alpha_res": {"soc_poly": [0.0]},
                  "beta_cap": {"coeffs": [[1e-4]]}, "beta_res": {"coeffs": [[0.0]]}}
        cfg = RunConfig.from_dict({"ageing": ageing})
        assert cfg.ageing().alpha_cap(0.5, 25.0) == pytest.approx(1e-4)

    def test_hash_stable(self):
        a = RunConfig.from_dict({"seed": 1})
        b = RunConfig.from_dict({"seed": 1})
        assert a.hash() == b.hash()
        assert a.hash() != RunConfig.from_dict({"seed": 2}).hash()


class TestCli:
    def test_check_bound(self, capsys):
        assert main(["check-bound", "--m", "29", "--n", "10000", "--beta", "0.001"]) == 0
        assert float(capsys.readouterr().out) <= 0.005
        assert main(["check-bound", "--m", "30", "--n", "10000"]) == 0
        assert float(capsys.readouterr().out) > 0.005

    def test_bad_bound_args(self):
        assert main(["check-bound", "--m", "5", "--n", "4"]) == 2

    def test_config_error_exit(self, tmp_path):
        p = write_cfg(tmp_path, {"controller": {"soc_0": 2.0}})
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2

    def test_data_error_exit(self, tmp_path):
        f = tmp_path / "gap.csv"
        f.write_text("timestamp,frequency\n0,50\n1,50\n2,50\n40,50\n")
        p = write_cfg(tmp_path, {"data": {"frequency_csv": str(f)}})
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 3

    def test_too_few_days_is_data_error(self, tmp_path):
        p = write_cfg(tmp_path)
        assert main(["simulate", "--config", str(p), "--days", "5", "--out", str(tmp_path / "o")]) == 3

    def test_infeasible_exit(self, tmp_path):
        p = write_cfg(tmp_path, {"bess": {"e_rated_mwh": 0.9, "c_rate": 1.5}})
        assert main(["optimize", "--config", str(p), "--out", str(tmp_path / "o")]) == 4

    def test_simulate_deterministic(self, tmp_path):
        p = write_cfg(tmp_path)
        for d in ("a", "b"):
            assert main(["simulate", "--config", str(p), "--days", "1", "--svg", "--out", str(tmp_path / d)]) == 0
        for name in ("trace.csv", "cycles.csv", "summary.json", "manifest.json", "soc.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_simulate_consistency(self, tmp_path):
        p = write_cfg(tmp_path)
        assert main(["simulate", "--config", str(p), "--days", "1", "--out", str(tmp_path / "o")]) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        rows = list(csv.reader(open(tmp_path / "o" / "cycles.csv")))
        assert summary["n_cycles"] == len(rows) - 1
        cfg = RunConfig.load(p)
        bess = cfg.bess()
        tr = simulate(bess, cfg.rules(bess), cfg.controller(), cfg.frequency().values[:8640])
        assert summary["n_cycles"] == len(rainflow(tr.soc, bess.cell.capacity_ah))

    def test_flat_frequency(self, tmp_path):
        f = tmp_path / "flat.csv"
        f.write_text("timestamp,frequency\n" + "".join(f"{t},50.000\n" for t in range(0, 86400, 10)))
        p = write_cfg(tmp_path, {"data": {"frequency_csv": str(f)}, "controller": {"k_p": 2.0, "soc_0": 0.5,
                                                                                   "o_d": 0.1, "db_p": 0.2}})
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["penalty_fraction"] == 0.0
        assert summary["energy_in_kwh"] == 0.0 and summary["energy_out_kwh"] == 0.0

    def test_rainflow_command(self, tmp_path):
        f = tmp_path / "soc.csv"
        f.write_text("t,soc\n0,0.5\n1,0.7\n2,0.5\n")
        assert main(["rainflow", str(f), "--capacity-ah", "1.0", "--out", str(tmp_path / "o")]) == 0
        rows = list(csv.reader(open(tmp_path / "o" / "cycles.csv")))
        assert len(rows) == 3 and rows[1][3] == "half"

    def test_sweep_matches_optimize(self, tmp_path):
        p = write_cfg(tmp_path, {"data": {"synthetic_frequency": {"days": 2, "std": 0.005, "excursion_rate": 0}}})
        assert main(["optimize", "--config", str(p), "--out", str(tmp_path / "opt")]) == 0
        life = json.loads((tmp_path / "opt" / "lifetime.json").read_text())
        assert main(["sweep", "--config", str(p), "--energies", "1.6", "--c-rates", "1.0",
                     "--out", str(tmp_path / "sw")]) == 0
        (pt,) = json.loads((tmp_path / "sw" / "sweep.json").read_text())
        for level in ("500.0", "400.0", "300.0"):
            assert float(pt["npv"][level]) == pytest.approx(life["npv_by_cost_level"][f"{float(level):g}"])

    def test_sweep_infeasible_point(self, tmp_path):
        p = write_cfg(tmp_path)
        assert main(["sweep", "--config", str(p), "--energies", "1.0", "--c-rates", "0.6",
                     "--out", str(tmp_path / "sw")]) == 0
        (pt,) = json.loads((tmp_path / "sw" / "sweep.json").read_text())
        assert not pt["feasible"]
        assert {float(k): v for k, v in pt["npv"].items()} == {500.0: -500e3, 400.0: -400e3, 300.0: -300e3}

    def test_console_script(self, tmp_path):
        out = subprocess.run([sys.executable, "-m", "fcrbess.cli", "check-bound", "--m", "0", "--n", "10000"],
                             capture_output=True, text=True, check=True)
        assert float(out.stdout) == pytest.approx(1 - 0.001 ** (1 / 10000), abs=1e-8)
