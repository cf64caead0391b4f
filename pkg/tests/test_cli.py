import json

import pytest

from visservo.cli import main
from visservo.dqn.network import QNetwork

SMALL = {"episodes": 2, "feature_noise": [], "ibvs_max_steps": 20,
         "train": {"iterations": 3, "batch": 4, "warmup": 8, "eval_every": 3, "replay_capacity": 32},
         "train_eval_episodes": 2, "sigmas": [0, 32], "coverages": [1.0, 0.5]}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL))
    return p


@pytest.fixture
def checkpoint(tmp_path):
    p = tmp_path / "net.qnet"
    QNetwork(seed=0).save(p)
    return p


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"episodes": -1}')
    assert main(["ablate-ibvs", "--config", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert main(["ablate-ibvs", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 1
    assert main(["sweep-noise", "--out", str(tmp_path / "o")]) == 1  # no checkpoint


def test_ablate_ibvs_deterministic(tmp_path, config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["ablate-ibvs", "--config", str(config), "--seed", "3", "--out", str(a)]) == 0
    assert main(["ablate-ibvs", "--config", str(config), "--seed", "3", "--out", str(b)]) == 0
    assert read_all(a) == read_all(b)
    assert {"config.json", "table.csv", "table.json", "run.json"} <= set(read_all(a))


def test_assert_orderings_exit_code(tmp_path, config, monkeypatch):
    from visservo import bench
    from visservo.bench import ResultTable, Row

    def fake(cfg, ckpt=None, include_lvs=False):
        return ResultTable("x", [Row("GtCorr+GtDepth", 0, 2, 1, 1), Row("GtCorr+ConstantDepth", 2, 2, 1, 1),
                                 Row("GtCorr+NoDepth", 1, 2, 1, 1)])
    monkeypatch.setattr(bench, "run_ibvs_ablation", fake)
    out = tmp_path / "o"
    assert main(["ablate-ibvs", "--config", str(config), "--out", str(out)]) == 0
    assert main(["ablate-ibvs", "--config", str(config), "--out", str(out), "--assert-orderings"]) == 2


@pytest.mark.parametrize("cmd", ["simulate", "eval", "sweep-noise", "hardcase", "train"])
def test_commands_run(tmp_path, config, checkpoint, cmd):
    out = tmp_path / cmd
    code = main([cmd, "--config", str(config), "--checkpoint", str(checkpoint), "--out", str(out)])
    assert code == 0
    meta = json.loads((out / "run.json").read_text())
    assert meta["command"] == cmd
    for name in meta["files"]:
        assert (out / name).exists()


def test_eval_no_smoothing(tmp_path, config, checkpoint):
    out = tmp_path / "raw"
    assert main(["eval", "--config", str(config), "--checkpoint", str(checkpoint), "--out", str(out),
                 "--no-smoothing"]) == 0
    assert "LVS(raw)" in (out / "table.csv").read_text()


def test_plot_trace_and_table(tmp_path, config):
    run = tmp_path / "sim"
    assert main(["simulate", "--config", str(config), "--out", str(run)]) == 0
    out = tmp_path / "plots"
    assert main(["plot", "--input", str(run / "trace.csv"), "--out", str(out)]) == 0
    assert (out / "trace.svg").read_text().startswith("<svg")
    abl = tmp_path / "abl"
    assert main(["ablate-ibvs", "--config", str(config), "--out", str(abl)]) == 0
    assert main(["plot", "--input", str(abl / "table.csv"), "--out", str(out)]) == 0
    assert main(["plot", "--out", str(out)]) == 1
