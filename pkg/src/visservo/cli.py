"""Command-line entry point: ``python -m visservo <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 ordering assertion failed
(only with ``--assert-orderings``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import bench
from .bench import ConfigError, ExperimentConfig, ResultTable
from .dqn.network import dump_checkpoint
from .geom import Pose2D
from .plot import sweep_svg, trajectory_svg
from .servo import DepthPolicy, ibvs_episode, trace_to_csv

COMMANDS = ("simulate", "train", "eval", "ablate-ibvs", "ablate-reward", "sweep-noise", "hardcase", "plot")
KIND = {"ablate-ibvs": "ibvs-ablation", "ablate-reward": "reward-ablation", "sweep-noise": "noise-sweep"}
ORDERING_TOLERANCE = 0.15


class AssertionFailed(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="visservo", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")
    p.add_argument("--jobs", type=int, help="worker processes for episode suites")
    p.add_argument("--checkpoint", type=Path, help="trained Q-network (QNET file)")
    p.add_argument("--episodes", type=int, help="episode count (overrides the config)")
    p.add_argument("--assert-orderings", action="store_true",
                   help="exit 2 if the experiment's expected ordering does not hold")
    p.add_argument("--no-smoothing", action="store_true", help="feed raw correspondence maps to the policy")
    p.add_argument("--input", type=Path, help="CSV to render (plot command)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        cfg = ExperimentConfig.from_json(text)
    over = {"kind": KIND.get(args.command, cfg.kind if args.command == "plot" else args.command)}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.jobs is not None:
        over["jobs"] = args.jobs
    if args.episodes is not None:
        over["episodes"] = args.episodes
    if args.checkpoint is not None:
        over["checkpoint"] = str(args.checkpoint)
    try:
        return replace(cfg, **over)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def read_checkpoint(cfg: ExperimentConfig) -> bytes:
    if cfg.checkpoint is None:
        raise ConfigError("this command needs --checkpoint (or 'checkpoint' in the config)")
    try:
        return Path(cfg.checkpoint).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read checkpoint: {e}") from e


class Run:
    """Output directory of one command; every file is a pure function of the config."""

    def __init__(self, out: Path, cfg: ExperimentConfig, command: str):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files: List[str] = []
        self.write("config.json", cfg.to_json() + "\n")
        self.meta = {"command": command, "seed": cfg.seed}

    def write(self, name: str, text: str):
        (self.out / name).write_text(text)
        self.files.append(name)

    def table(self, t: ResultTable, stem: str = "table"):
        self.write(f"{stem}.csv", t.to_csv())
        self.write(f"{stem}.json", t.to_json() + "\n")

    def finish(self, **extra):
        self.meta.update(extra)
        self.meta["files"] = sorted(self.files + ["run.json"])
        (self.out / "run.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")


def check(cond: bool, message: str, failures: List[str]):
    if not cond:
        failures.append(message)


# --- commands -------------------------------------------------------------------

def cmd_simulate(cfg, args, run: Run, failures):
    scene, spec = cfg.suite(1)[0]
    res = ibvs_episode(scene, spec.start, spec.goal, cfg.camera, cfg.ibvs_config(DepthPolicy.ground_truth()))
    run.write("trace.csv", trace_to_csv(res.trace))
    trajs = {"IBVS": [Pose2D(r.x, r.y, r.theta) for r in res.trace]}
    summary = {"ibvs_outcome": res.outcome, "ibvs_steps": res.steps}
    if cfg.checkpoint is not None:
        from .dqn.network import load_checkpoint
        from .dqn.train import greedy_policy, run_policy_episode
        from .env import EnvConfig

        k = 1 if args.no_smoothing else cfg.smoothing
        lvs = run_policy_episode(greedy_policy(load_checkpoint(read_checkpoint(cfg))), scene,
                                 replace(spec, smoothing=k), cfg.camera, EnvConfig())
        trajs["LVS"] = lvs.poses
        summary.update(lvs_outcome=lvs.outcome, lvs_steps=lvs.steps)
    run.write("trajectory.svg", trajectory_svg(trajs, spec.goal, scene, title="simulate") + "\n")
    return summary


def cmd_train(cfg, args, run: Run, failures):
    tc = cfg.train if not args.no_smoothing else replace(cfg.train, smoothing=1)
    res = bench.train_policy(cfg, tc)
    (run.out / "checkpoint.qnet").write_bytes(dump_checkpoint(res.net))
    run.files.append("checkpoint.qnet")
    run.write("curve.csv", res.curve_csv())
    if res.curve:
        pts = [(p.iteration, p.eval_success_rate) for p in res.curve if p.eval_success_rate == p.eval_success_rate]
        if pts:
            run.write("curve.svg", sweep_svg({"held-out success": pts}, xlabel="iteration") + "\n")
    final = res.curve[-1].eval_success_rate if res.curve else None
    return {"iterations": cfg.train.iterations, "final_eval_success_rate": final}


def cmd_eval(cfg, args, run: Run, failures):
    t = bench.run_eval(cfg, read_checkpoint(cfg), smoothing=1 if args.no_smoothing else None)
    run.table(t)
    return {r.label: r.success_rate for r in t.rows}


def cmd_ablate_ibvs(cfg, args, run: Run, failures):
    ckpt = read_checkpoint(cfg) if cfg.checkpoint is not None else None
    t = bench.run_ibvs_ablation(cfg, ckpt, include_lvs=ckpt is not None)
    run.table(t)
    gt, const, none = (t.rate(bench.ibvs_label(d)) for d in
                       (DepthPolicy.ground_truth(), DepthPolicy.constant(cfg.constant_depth), DepthPolicy.none()))
    check(gt >= const, f"GtDepth {gt:.3f} < ConstantDepth {const:.3f}", failures)
    check(const >= none, f"ConstantDepth {const:.3f} < NoDepth {none:.3f}", failures)
    return {r.label: r.success_rate for r in t.rows}


def cmd_ablate_reward(cfg, args, run: Run, failures):
    t, results = bench.run_reward_ablation(cfg)
    run.table(t)
    for label, res in results.items():
        run.write(f"curve_{label}.csv", res.curve_csv())
    rows = {r.label: r for r in t.rows}
    a, b = rows["DistMinimize+Polar"], rows["Progress+Pose"]
    check(a.success_rate >= b.success_rate,
          f"DistMinimize+Polar {a.success_rate:.3f} < Progress+Pose {b.success_rate:.3f}", failures)
    return {r.label: r.success_rate for r in t.rows}


def cmd_sweep_noise(cfg, args, run: Run, failures):
    t = bench.run_noise_sweep(cfg, read_checkpoint(cfg), smoothing=1 if args.no_smoothing else None)
    run.table(t)
    clean = t.rate(bench.sweep_label(0.0, 1.0))
    sig = [(s, t.rate(bench.sweep_label(s, 1.0))) for s in cfg.sigmas]
    cov = [(c, t.rate(bench.sweep_label(0.0, c))) for c in sorted(set(cfg.coverages) | {1.0})]
    run.write("sweep_sigma.svg", sweep_svg({"offset noise": sig}, xlabel="sigma (px)") + "\n")
    run.write("sweep_coverage.svg", sweep_svg({"coverage": cov}, xlabel="coverage") + "\n")
    for s, r in sig:
        if s == max(cfg.sigmas):
            check(r >= clean - ORDERING_TOLERANCE, f"sigma={s:g}: {r:.3f} < clean {clean:.3f} - 0.15", failures)
    for c, r in cov:
        if c == min(cfg.coverages):
            check(r >= clean - ORDERING_TOLERANCE, f"coverage={c:g}: {r:.3f} < clean {clean:.3f} - 0.15", failures)
    return {r.label: r.success_rate for r in t.rows}


def cmd_hardcase(cfg, args, run: Run, failures):
    hc = bench.run_hardcase(cfg, read_checkpoint(cfg))
    run.write("ibvs_trace.csv", trace_to_csv(hc.ibvs.trace))
    run.write("lvs_trace.csv", hc.lvs_trace_csv())
    trajs = {"IBVS": [Pose2D(r.x, r.y, r.theta) for r in hc.ibvs.trace], "LVS": hc.lvs.poses}
    run.write("hardcase.svg", trajectory_svg(trajs, hc.goal, hc.scene, title="hard case") + "\n")
    check(hc.ibvs.outcome == "CorrespondenceLost", f"IBVS outcome {hc.ibvs.outcome}", failures)
    check(hc.lvs_steps_after_loss >= 1, "LVS took no action after losing overlap", failures)
    check(hc.lvs_final_d_polar < hc.ibvs_final_d_polar,
          f"LVS final d_polar {hc.lvs_final_d_polar:.3f} >= IBVS {hc.ibvs_final_d_polar:.3f}", failures)
    return {"ibvs_outcome": hc.ibvs.outcome, "lvs_outcome": hc.lvs.outcome,
            "ibvs_final_d_polar": hc.ibvs_final_d_polar, "lvs_final_d_polar": hc.lvs_final_d_polar,
            "lvs_steps_after_loss": hc.lvs_steps_after_loss}


def cmd_plot(cfg, args, run: Run, failures):
    if args.input is None:
        raise ConfigError("plot needs --input <csv>")
    try:
        text = args.input.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read input: {e}") from e
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ConfigError("input CSV has no rows")
    stem = args.input.stem
    if {"x", "y", "theta"} <= set(rows[0]):
        poses = [Pose2D(float(r["x"]), float(r["y"]), float(r["theta"])) for r in rows]
        run.write(f"{stem}.svg", trajectory_svg({stem: poses}, title=stem) + "\n")
    elif {"label", "success_rate"} <= set(rows[0]):
        pts = [(float(i), float(r["success_rate"])) for i, r in enumerate(rows)]
        run.write(f"{stem}.svg", sweep_svg({stem: pts}, xlabel="row") + "\n")
    else:
        raise ConfigError("input CSV is neither a trace nor a result table")
    return {"input": str(args.input)}


HANDLERS = {
    "simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "ablate-ibvs": cmd_ablate_ibvs,
    "ablate-reward": cmd_ablate_reward, "sweep-noise": cmd_sweep_noise, "hardcase": cmd_hardcase,
    "plot": cmd_plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        run = Run(args.out, cfg, args.command)
        failures: List[str] = []
        summary = HANDLERS[args.command](cfg, args, run, failures)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    run.finish(summary=summary, assertion_failures=failures if args.assert_orderings else [])
    print(json.dumps(summary, indent=2, sort_keys=True))
    if args.assert_orderings and failures:
        for f in failures:
            print(f"ordering violated: {f}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
