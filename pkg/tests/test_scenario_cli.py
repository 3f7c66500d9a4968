import csv
import json

import numpy as np
import pytest
import yaml

from piic.cli import EXIT_CONFIG, main
from piic.dynamics import MultiUnicycleModel, QuadcopterWindModel
from piic.scenario import BUNDLED, ConfigError, bundled_scenarios, load_scenario


def _raw(name):
    with open(BUNDLED / f"{name}.yaml") as fh:
        return yaml.safe_load(fh)


def _read_runs(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestScenarioLoading:
    @pytest.mark.parametrize("name", bundled_scenarios())
    def test_bundled_validate(self, name):
        sc = load_scenario(name)
        assert sc.horizon >= 1 and sc.mc_runs >= 1

    def test_missing_radius_names_key(self):
        raw = _raw("unicycle_obstacle")
        del raw["obstacles"][1]["radius"]
        with pytest.raises(ConfigError) as info:
            load_scenario(raw)
        assert any(k == "obstacles.1.radius" for k, _ in info.value.problems)

    def test_all_problems_reported(self):
        raw = _raw("unicycle_obstacle")
        del raw["obstacles"][0]["radius"]
        raw["horizon"] = 0
        raw["cost"]["R"] = {"shape": [2, 2], "data": [1.0, 0.0]}
        with pytest.raises(ConfigError) as info:
            load_scenario(raw)
        keys = {k for k, _ in info.value.problems}
        assert {"obstacles.0.radius", "horizon", "cost.R"} <= keys

    def test_override(self):
        sc = load_scenario("unicycle_obstacle", {"algorithm": "ilqg", "barrier.gamma": 10.0})
        assert sc.algorithm == "ilqg"
        assert all(c.gamma == 10.0 for c in sc.spec.constraints)

    def test_formation_structure(self):
        sc = load_scenario("formation_2agent")
        assert isinstance(sc.model, MultiUnicycleModel)
        mask = sc.options.mask
        assert mask is not None
        # agent 1 controls (0, 1) read agents 1 and 3 plus the bias row
        rows = set(mask.selector(0).tolist())
        assert rows == {0, 1, 2, 6, 7, 8, 12}
        assert load_scenario("formation_centralized").options.mask is None

    def test_quadcopter_radius_enlarged(self):
        sc = load_scenario("quadcopter_oa")
        assert isinstance(sc.model, QuadcopterWindModel)
        for a, b in zip(sc.spec.constraints, sc.eval_spec.constraints):
            x = np.zeros(sc.model.n_x + sc.model.n_u)
            assert b.value(x) < a.value(x)


class TestCli:
    def test_validate(self, capsys):
        assert main(["validate", "--config", "lqg"]) == 0
        assert "ok" in capsys.readouterr().out

    def test_config_error_exit_code(self, tmp_path, capsys):
        raw = _raw("unicycle_obstacle")
        del raw["obstacles"][0]["radius"]
        path = tmp_path / "bad.yaml"
        path.write_text(yaml.safe_dump(raw))
        assert main(["validate", "--config", str(path)]) == EXIT_CONFIG
        report = json.loads(capsys.readouterr().err)
        assert report["error"] == "config"
        assert any(p["key"] == "obstacles.0.radius" for p in report["problems"])

    def test_run_emits_files_and_is_consistent(self, tmp_path):
        out = tmp_path / "run"
        assert main(["run", "--config", "lqg", "--mc-runs", "5", "--out", str(out), "--emit-plots"]) == 0
        for f in ("summary.json", "runs.csv", "iterations.csv", "trajectory_mean.csv", "trajectory.svg"):
            assert (out / f).exists(), f
        summary = json.loads((out / "summary.json").read_text())
        rows = _read_runs(out / "runs.csv")
        costs = {}
        for r in rows:
            costs[r["run"]] = costs.get(r["run"], 0.0) + float(r["stage_cost"])
        vals = np.array(list(costs.values()))
        assert len(vals) == 5
        np.testing.assert_allclose(vals.mean(), summary["mean_cost"], rtol=1e-9)
        np.testing.assert_allclose(vals.std(ddof=1), summary["std_cost"], rtol=1e-9)

    def test_algorithm_override(self, tmp_path):
        out = tmp_path / "ilqg"
        assert main(["run", "--config", "lqg", "--algorithm", "ilqg", "--mc-runs", "2", "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["algorithm"] == "ilqg"
        header = (out / "iterations.csv").read_text().splitlines()[0]
        assert header == "iteration,cost"

    def test_runs_byte_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["run", "--config", "lqg", "--mc-runs", "3", "--seed", "4",
                         "--out", str(tmp_path / d)]) == 0
        assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()

    def test_sweep(self, tmp_path):
        assert main(["sweep", "--config", "lqg", "--param", "em.threshold", "--values", "1e-2,1e-3",
                     "--mc-runs", "2", "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "sweep.csv").read_text().splitlines()
        assert len(lines) == 3
        assert (tmp_path / "em.threshold_0.01" / "summary.json").exists()

    def test_unicycle_obstacle_smoke(self, tmp_path):
        out = tmp_path / "uni"
        assert main(["run", "--config", "unicycle_obstacle", "--mc-runs", "2", "--out", str(out)]) == 0
        rows = _read_runs(out / "runs.csv")
        assert {"K_obstacle1", "K_obstacle2"} <= set(rows[0])
        assert len(rows) == 2 * 201
