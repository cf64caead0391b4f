"""Scan seeded episodes for a case where IBVS loses the shared view but the learned policy keeps going.

Usage: python scripts/find_hardcase.py CHECKPOINT [N]
Prints candidate HardCase literals; the chosen one is frozen in visservo.bench.HARDCASE.
"""
import sys

from visservo.bench import ExperimentConfig, HardCase, run_hardcase


def main(argv):
    ckpt = open(argv[0], "rb").read()
    n = int(argv[1]) if len(argv) > 1 else 400
    cfg = ExperimentConfig(seed=12345)
    src = cfg.source()
    for i, (scene, spec) in enumerate(src.suite(n, cfg.seed)):
        seed = cfg.scene_seeds[[id(x) for x in src.scenes].index(id(scene))]
        case = HardCase(seed, cfg.clutter, (spec.start.x, spec.start.y, spec.start.theta),
                        (spec.goal.x, spec.goal.y, spec.goal.theta))
        hc = run_hardcase(cfg, ckpt, case)
        if hc.ibvs.outcome != "CorrespondenceLost" or hc.lvs_steps_after_loss < 1:
            continue
        gain = hc.ibvs_final_d_polar - hc.lvs_final_d_polar
        print(i, case, hc.lvs.outcome, "after_loss=%d" % hc.lvs_steps_after_loss,
              "ibvs=%.3f lvs=%.3f" % (hc.ibvs_final_d_polar, hc.lvs_final_d_polar), "gain=%.3f" % gain, flush=True)


if __name__ == "__main__":
    main(sys.argv[1:])
