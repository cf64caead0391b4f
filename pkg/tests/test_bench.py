import json

import numpy as np
import pytest

from visservo import bench
from visservo.bench import ConfigError, ExperimentConfig, ResultTable, Row
from visservo.dqn.network import QNetwork, dump_checkpoint
from visservo.dqn.train import TrainConfig
from visservo.env import EpisodeSpec
from visservo.geom import Pose2D
from visservo.servo import DepthPolicy
from visservo.worldsim import generate_scene

TINY = ExperimentConfig(episodes=3, feature_noise=(), ibvs_max_steps=40,
                        train=TrainConfig(iterations=4, batch=4, warmup=8, eval_every=2, replay_capacity=64),
                        train_eval_episodes=2, sigmas=(0.0, 32.0), coverages=(1.0, 0.5))


class TestConfig:
    def test_round_trip(self):
        cfg = ExperimentConfig(seed=4, episodes=7, feature_noise=((1.0, 0.5),))
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg

    @pytest.mark.parametrize("doc", ['{"bogus": 1}', '{"episodes": 0}', '[1, 2]', '{"kind": "dance"}',
                                     'not json', '{"train": {"gamma": 1.5}}', '{"smoothing": 4}'])
    def test_errors(self, doc):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json(doc)

    def test_suite_is_paired_and_seeded(self):
        a = TINY.suite()
        b = TINY.suite()
        assert [s for _, s in a] == [s for _, s in b]
        c = ExperimentConfig(episodes=3, seed=1).suite()
        assert [s for _, s in a] != [s for _, s in c]


class TestTable:
    def test_exact_rate_and_csv(self):
        t = ResultTable("t", [Row("a", 1, 3, 4.0, 0.5), Row("b", 2, 3, 5.0, 0.25)])
        assert t.rate("a") == 1 / 3
        lines = t.to_csv().splitlines()
        assert lines[0].startswith("label,success_rate")
        assert lines[1].startswith("a,0.3333,1,3")
        assert json.loads(t.to_json())["rows"][1]["successes"] == 2
        assert ResultTable.from_csv(t.to_csv()).rows == t.rows

    def test_unpaired_rejected(self):
        with pytest.raises(ValueError):
            ResultTable("t", [Row("a", 1, 3, 1, 1), Row("b", 1, 4, 1, 1)])


class TestIbvsAblation:
    def test_easy_suite_all_succeed(self, monkeypatch):
        sc = generate_scene(8, 8, 0, seed=0)
        easy = [(sc, EpisodeSpec(0, Pose2D(2, 4 + 0.5 * i, 0), Pose2D(2.5, 4 + 0.5 * i, 0))) for i in range(3)]
        monkeypatch.setattr(ExperimentConfig, "suite", lambda self, n=None: easy)
        t = bench.run_ibvs_ablation(TINY)
        assert t.rate(bench.ibvs_label(DepthPolicy.ground_truth())) == 1.0
        assert len(t.rows) == 4

    def test_rows_and_determinism(self):
        cfg = ExperimentConfig(episodes=2, feature_noise=((2.0, 0.5),), ibvs_max_steps=20)
        a = bench.run_ibvs_ablation(cfg)
        assert len(a.rows) == 8
        assert {r.episodes for r in a.rows} == {2}
        assert a.to_csv() == bench.run_ibvs_ablation(cfg).to_csv()

    def test_lvs_row_needs_checkpoint(self):
        with pytest.raises(ConfigError):
            bench.run_ibvs_ablation(TINY, None, include_lvs=True)

    def test_parallel_matches_serial(self):
        cfg = ExperimentConfig(episodes=4, feature_noise=(), ibvs_max_steps=15)
        assert bench.run_ibvs_ablation(cfg).to_csv() == \
            bench.run_ibvs_ablation(ExperimentConfig(episodes=4, feature_noise=(), ibvs_max_steps=15, jobs=2)).to_csv()


class TestLearnedRows:
    ckpt = dump_checkpoint(QNetwork(seed=0))

    def test_sweep_identity_row_equals_clean_eval(self):
        t = bench.run_noise_sweep(TINY, self.ckpt)
        assert [r.label for r in t.rows] == ["sigma=0,coverage=1", "sigma=32,coverage=1", "sigma=0,coverage=0.5"]
        clean = bench.run_eval(TINY, self.ckpt).row("LVS")
        first = t.rows[0]
        assert (first.successes, first.mean_steps, first.mean_final_d_polar) == \
            (clean.successes, clean.mean_steps, clean.mean_final_d_polar)

    def test_reward_ablation_three_rows(self):
        t, results = bench.run_reward_ablation(TINY)
        assert [r.label for r in t.rows] == ["DistMinimize+Polar", "Progress+Polar", "Progress+Pose"]
        assert {r.episodes for r in t.rows} == {3}

    def test_diverged_row_is_flagged(self, monkeypatch):
        def boom(*a, **k):
            raise bench.TrainingDiverged("nan")
        monkeypatch.setattr(bench, "train_policy", boom)
        t, _ = bench.run_reward_ablation(TINY)
        assert all(r.flag.startswith("diverged") for r in t.rows)

    def test_hardcase_pairs_start(self):
        hc = bench.run_hardcase(TINY, self.ckpt)
        assert hc.ibvs.trace[0].x == hc.lvs.poses[0].x and hc.ibvs.trace[0].y == hc.lvs.poses[0].y
        assert hc.lvs_trace_csv().splitlines()[0].startswith("step,x,y,theta,action")
