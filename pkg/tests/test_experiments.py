import csv
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import MAZE_CONFIG
from riftlab import experiments as ex
from riftlab.mdp import TabularMdp

GOLDEN = Path(__file__).parent / "data" / "golden_small_metrics.csv"


def small(**kw):
    cfg = replace(ex.load_config(MAZE_CONFIG), rounds=2, episodes_per_round=5, eval_episodes=50,
                  seeds=(0, 1), omega_list=(0.0, 0.001), B_list=(0.03129,))
    return replace(cfg, **kw)


def read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_load_shipped_config():
    cfg = ex.load_config(MAZE_CONFIG)
    assert cfg.omega == 0.001 and cfg.gamma == 0.95 and len(cfg.seeds) == 5
    assert cfg.grid_path().exists()
    env = ex.build_environment(cfg)
    assert isinstance(env.mdp, TabularMdp) and env.mdp.num_actions == 4


@pytest.mark.parametrize("data, word", [
    ({}, "grid_file"),
    ({"grid_file": "maze.txt", "env": {"gama": 0.9}}, "gama"),
    ({"grid_file": "maze.txt", "prior": {"demo": 3}}, "demo"),
    ({"grid_file": "maze.txt", "extra": 1}, "extra"),
    ({"grid_file": "maze.txt", "sweep": {"seeds": []}}, "seeds"),
    ({"grid_file": "maze.txt", "env": {"gamma": 1.0}}, "gamma"),
    ({"grid_file": "maze.txt", "sweep": {"omega_list": [-1.0]}}, "omega"),
    ({"grid_file": "maze.txt", "prior": {"kind": "oracle"}}, "kind"),
    ({"grid_file": "maze.txt", "train": {"bootstrap_mode": "sideways"}}, "bootstrap_mode"),
])
def test_config_errors(data, word):
    with pytest.raises(ex.ConfigError, match=word):
        ex.config_from_dict(data)


def test_missing_grid_and_bad_toml(tmp_path):
    with pytest.raises(ex.ConfigError):
        ex.config_from_dict({"grid_file": "nowhere.txt"}).grid_path()
    bad = tmp_path / "bad.toml"
    bad.write_text("grid_file = \n")
    with pytest.raises(ex.ConfigError):
        ex.load_config(bad)


def test_sweep_cross_product_and_rows():
    cfg = replace(small(), B_list=(0.01242, 0.07882))
    res = ex.run_experiment(cfg)
    assert len(res.final_rows()) == 2 * 2 * 2
    keys = {(r.omega, r.B, r.seed, r.round) for r in res.rows}
    assert len(keys) == len(res.rows) == 8 * 3
    assert res.rows[0].run_id == "w0-B0.01242-s0"


def test_rlif_column_only():
    res = ex.run_experiment(small(omega_list=(0.0,), seeds=(0,)))
    assert {r.omega for r in res.rows} == {0.0} and len(res.final_rows()) == 1


def test_determinism_and_jobs(tmp_path):
    a = ex.report(ex.run_experiment(small()), tmp_path / "a")[0].read_bytes()
    b = ex.report(ex.run_experiment(small()), tmp_path / "b")[0].read_bytes()
    c = ex.report(ex.run_experiment(small(), jobs=2), tmp_path / "c")[0].read_bytes()
    assert a == b == c


def test_golden_metrics(tmp_path):
    out = ex.report(ex.run_experiment(small()), tmp_path)[0]
    if not GOLDEN.exists():
        GOLDEN.parent.mkdir(exist_ok=True)
        GOLDEN.write_bytes(out.read_bytes())
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_empty_result_header_only(tmp_path):
    paths = ex.report(ex.SweepResult(), tmp_path)
    for p in paths:
        assert len(read(p)) == 1
    assert tuple(read(paths[0])[0]) == ex.METRICS_HEADER


def test_summary_stderr_two_seeds(tmp_path):
    rows = [ex.MetricRow("w1-B1-s0", 0, 1.0, 1.0, 0, 0.2, -1.0, 0.5, 0.1, 10),
            ex.MetricRow("w1-B1-s1", 1, 1.0, 1.0, 0, 0.6, -3.0, 0.5, 0.3, 10)]
    paths = ex.report(ex.SweepResult(rows), tmp_path)
    header, row = read(paths[2])
    rec = dict(zip(header, row))
    assert float(rec["success_rate_mean"]) == pytest.approx(0.4)
    assert float(rec["success_rate_stderr"]) == pytest.approx(np.std([0.2, 0.6], ddof=1) / math.sqrt(2))
    assert float(rec["intervention_rate_stderr"]) == 0.0
    one = ex.report(ex.SweepResult(rows[:1]), tmp_path / "one")
    assert dict(zip(*read(one[2])))["success_rate_stderr"] == "nan"


def test_learning_curves_layout(tmp_path):
    res = ex.run_experiment(small(seeds=(0,)))
    header, *body = read(ex.report(res, tmp_path)[1])
    assert header[:5] == ["run_id", "seed", "omega", "B", "metric"] and header[-1] == "round_2"
    assert len(body) == 2 * len(ex.METRIC_FIELDS)


def test_cell_errors_are_tagged(tmp_path):
    grid = tmp_path / "broken.txt"
    grid.write_text("S?G\n")
    with pytest.raises(RuntimeError, match=r"omega=0.001, B=0.03, seed=4\).*column 1"):
        ex.run_cell(small(grid_file=str(grid)), 0.001, 0.03, 4)
    with pytest.raises(ex.ConfigError):
        ex.run_cell(small(), -1.0, 0.03, 0)


def test_priors_by_kind():
    cfg = small()
    env = ex.build_environment(cfg)
    for kind in ex.PRIOR_KINDS:
        pi = ex.build_prior(replace(cfg, prior=replace(cfg.prior, kind=kind)), 0.03129)
        assert pi.shape == env.mdp.reward.shape and pi.min() > 0


def test_calibration_degenerate_expert(tmp_path):
    grid = tmp_path / "flat.txt"
    grid.write_text("S.\n.G\n")
    cfg = replace(small(), grid_file=str(grid), goal_reward=0.0, step_reward=0.0, hazard_reward=0.0)
    with pytest.raises(ex.CalibrationError):
        ex.calibrate_thresholds(cfg)


def test_config_summary_round_trip():
    d = ex.config_summary(small())
    assert d["prior"]["kind"] == "demos" and d["omega"] == 0.001
