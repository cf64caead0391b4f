"""Run every desk-scale table against one checkpoint and print them.

Usage: python scripts/run_ablations.py CHECKPOINT [EPISODES]
"""
import sys
from dataclasses import replace

from visservo import bench
from visservo.bench import ExperimentConfig


def main(argv):
    ckpt = open(argv[0], "rb").read()
    cfg = ExperimentConfig()
    if len(argv) > 1:
        cfg = replace(cfg, episodes=int(argv[1]))
    print("# IBVS ablation (with the learned policy)")
    print(bench.run_ibvs_ablation(cfg, ckpt, include_lvs=True).to_csv())
    print("# learned vs random")
    print(bench.run_eval(cfg, ckpt).to_csv())
    print("# noise sweep")
    print(bench.run_noise_sweep(cfg, ckpt).to_csv())
    hc = bench.run_hardcase(cfg, ckpt)
    print("# hard case")
    print(f"IBVS {hc.ibvs.outcome} d_polar {hc.ibvs_final_d_polar:.3f}; learned {hc.lvs.outcome} "
          f"d_polar {hc.lvs_final_d_polar:.3f}, {hc.lvs_steps_after_loss} actions after overlap loss")


if __name__ == "__main__":
    main(sys.argv[1:])
