"""Train the desk-scale Q-network and save it next to its learning curve.

Usage: python scripts/train_desk.py [OUT_DIR] [SEED]
"""
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from visservo.bench import ExperimentConfig, train_policy
from visservo.dqn.network import dump_checkpoint


def main(argv):
    out = Path(argv[0]) if argv else Path("runs/desk")
    cfg = replace(ExperimentConfig(), seed=int(argv[1])) if len(argv) > 1 else ExperimentConfig()
    out.mkdir(parents=True, exist_ok=True)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    t = time.perf_counter()
    res = train_policy(cfg)
    (out / "checkpoint.qnet").write_bytes(dump_checkpoint(res.net))
    (out / "curve.csv").write_text(res.curve_csv())
    print(res.curve_csv())
    print(f"trained in {time.perf_counter() - t:.0f} s -> {out / 'checkpoint.qnet'}")


if __name__ == "__main__":
    main(sys.argv[1:])
