"""Command-line entry point.

Subcommands: solve | diffusion | compare | simulate | prune. Every run
writes a plain-text manifest before its results so outputs can be
reproduced bit-exactly from (config, seed).
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .model import ModelError, load_instance, prune_dominated
from .policies import OptimalPolicy
from .presets import (build_diffusion_policies, run_benchmarks, run_example1,
                      run_example2, run_regret, run_stopping_value, run_tables2)
from .sim import SimConfig, run_policy, trajectories_to_csv
from .solver import BeliefGrid, solve


def _write_manifest(out_dir: Path, command: str, args: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "manifest.txt"
    lines = [
        f"command: {command}",
        f"code_version: {__version__}",
        f"timestamp: {datetime.datetime.now(datetime.timezone.utc).isoformat()}",
    ]
    for k, v in sorted(args.items()):
        lines.append(f"{k}: {v}")
    path.write_text("\n".join(lines) + "\n")
    return path


def cmd_solve(args) -> int:
    inst = load_instance(args.config)
    grid = BeliefGrid(args.mesh)
    _write_manifest(Path(args.out_dir), "solve",
                    {"config": args.config, "mesh": args.mesh, "tol": args.tol})
    vf, report = solve(inst, grid, args.tol)
    out = Path(args.out_dir)
    vf.to_csv(out / "value.csv")
    with open(out / "intervals.csv", "w") as fh:
        fh.write("lo,hi\n")
        for lo, hi in report.continuation_intervals:
            fh.write(f"{lo:.12g},{hi:.12g}\n")
    print(f"solved in {report.iterations} iterations, "
          f"residual {report.final_residual:.12g}, "
          f"wall time {report.wall_time:.3f}s")
    for lo, hi in report.continuation_intervals:
        print(f"continuation interval: ({lo:.12g}, {hi:.12g})")
    return 0


def cmd_diffusion(args) -> int:
    inst = load_instance(args.config)
    _write_manifest(Path(args.out_dir), "diffusion",
                    {"config": args.config, "mesh": args.mesh})
    pol = build_diffusion_policies(inst)
    out = Path(args.out_dir)
    pol.dv.pair_table_csv(out / "pairs.csv")
    pol.dv.to_csv(out / "diffusion_value.csv", mesh=args.mesh)
    print(f"selected experiment {pol.model.selected_experiment}, "
          f"sigma2 {pol.model.sigma2:.12g}, gamma {pol.model.gamma:.12g}")
    for p in pol.dv.pairs:
        print(f"pair ({p.i},{p.j}): lo {p.lo:.12g} hi {p.hi:.12g} "
              f"degenerate {p.degenerate}")
    return 0


def cmd_prune(args) -> int:
    inst = load_instance(args.config)
    _write_manifest(Path(args.out_dir), "prune", {"config": args.config})
    kept, eliminated = prune_dominated(inst.experiments)
    print("kept:", ",".join(str(e.id) for e in kept))
    print("eliminated:", ",".join(str(e.id) for e in eliminated))
    out = Path(args.out_dir) / "prune.csv"
    with open(out, "w") as fh:
        fh.write("experiment,status\n")
        for e in kept:
            fh.write(f"{e.id},kept\n")
        for e in eliminated:
            fh.write(f"{e.id},eliminated\n")
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance(args.config)
    grid = BeliefGrid(args.mesh)
    _write_manifest(Path(args.out_dir), "simulate",
                    {"config": args.config, "seed": args.seed,
                     "replications": args.replications, "policy": args.policy,
                     "delta0": args.delta0})
    policy = _make_policy(args.policy, inst, grid, args.tol)
    cfg = SimConfig(seed=args.seed, replications=args.replications,
                    horizon_votes=args.horizon, record_events=True,
                    threads=args.threads)
    recs = run_policy(inst, policy, args.delta0, cfg)
    out = Path(args.out_dir)
    trajectories_to_csv(recs, out / "trajectories.csv")
    rt = np.array([r.discounted_reward_true for r in recs])
    rb = np.array([r.discounted_reward_belief for r in recs])
    print(f"replications: {len(recs)}")
    print(f"mean discounted reward (true hypothesis): {rt.mean():.12g}")
    print(f"mean discounted reward (belief): {rb.mean():.12g}")
    print(f"mean stop votes: {np.mean([r.stop_votes for r in recs]):.12g}")
    return 0


def _make_policy(name, inst, grid, tol):
    from .policies import AlwaysStopPolicy, FullDisplayPolicy, LookAheadPolicy
    name = name.lower()
    if name == "optimal":
        return OptimalPolicy.from_solve(inst, grid, tol)
    if name in ("a", "mv", "mr"):
        pols = build_diffusion_policies(inst, want_maxrange=(name == "mr"))
        return {"a": pols.asymptotic, "mv": pols.maxvol, "mr": pols.maxrange}[name]
    if name == "la":
        return LookAheadPolicy(inst)
    if name == "f":
        full = max(inst.experiments, key=lambda e: e.n_outcomes)
        return FullDisplayPolicy(inst, full, grid)
    if name == "stop":
        return AlwaysStopPolicy(inst)
    raise ModelError(f"unknown policy {name!r} (use optimal|a|mv|mr|la|f|stop)")


_PRESETS = ("example1", "example2", "tables2", "benchmarks", "stopping-value", "regret")


def cmd_compare(args) -> int:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    preset = args.preset or cfg.get("preset")
    if preset not in _PRESETS:
        raise ModelError(f"unknown preset {preset!r}; choose from {_PRESETS}")
    out = Path(args.out_dir)
    _write_manifest(out, f"compare:{preset}",
                    {"config": args.config or "", "seed": args.seed,
                     "threads": args.threads, "mesh": args.mesh, "tol": args.tol,
                     **{k: v for k, v in cfg.items() if k != "preset"}})

    def progress(*a):
        if not args.quiet:
            print("progress:", *a, file=sys.stderr)

    if preset == "example1":
        inst, vf, report = run_example1(args.mesh, args.tol)
        vf.to_csv(out / "example1_value.csv")
        with open(out / "example1_intervals.csv", "w") as fh:
            fh.write("lo,hi\n")
            for lo, hi in report.continuation_intervals:
                fh.write(f"{lo:.12g},{hi:.12g}\n")
        print("continuation intervals:", report.continuation_intervals)
        return 0
    if preset == "example2":
        k = float(cfg.get("k", 1e4))
        table, inst, vf, report, winner = run_example2(k, args.mesh, args.tol)
        table.to_csv(out / "example2_volatilities.csv")
        vf.to_csv(out / "example2_value.csv")
        print(f"max-volatility winner: experiment {winner}")
        return 0
    if preset == "tables2":
        table = run_tables2(
            n_instances=int(cfg.get("instances", 100)),
            ks=tuple(cfg.get("ks", (1.0, 1e2, 1e4))),
            seed=args.seed, mesh=args.mesh, tol=args.tol, progress=progress)
        table.to_csv(out / "tables2_gaps.csv")
    elif preset == "benchmarks":
        table = run_benchmarks(
            n_instances=int(cfg.get("instances", 100)),
            seed=args.seed, n=int(cfg.get("n", 10)),
            mesh=args.mesh, tol=args.tol, progress=progress)
        table.to_csv(out / "benchmark_errors.csv")
    elif preset == "stopping-value":
        table = run_stopping_value(
            n_instances=int(cfg.get("instances", 100)),
            seed=args.seed, Ts=tuple(cfg.get("budgets", (5, 10, 20, 40, 60, 80, 120, 200))),
            mesh=args.mesh, tol=args.tol, progress=progress)
        table.to_csv(out / "stopping_value.csv")
    else:
        table, _, _ = run_regret(
            Ts=tuple(cfg.get("budgets", (100, 1000, 10000))),
            replications=int(cfg.get("replications", 500)),
            seed=args.seed, threads=args.threads, progress=progress)
        table.to_csv(out / "regret.csv")
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="seqexp")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default="out")
        p.add_argument("--mesh", type=float, default=1e-3)
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("solve", help="solve an instance config by value iteration")
    common(p)
    p.set_defaults(fn=cmd_solve, need_config=True)

    p = sub.add_parser("diffusion", help="closed-form diffusion solution of an instance")
    common(p)
    p.set_defaults(fn=cmd_diffusion, need_config=True)

    p = sub.add_parser("prune", help="convex-order dominance pruning of experiments")
    common(p)
    p.set_defaults(fn=cmd_prune, need_config=True)

    p = sub.add_parser("simulate", help="seeded Monte-Carlo trajectories")
    common(p)
    p.add_argument("--policy", default="optimal")
    p.add_argument("--delta0", type=float, default=0.5)
    p.add_argument("--replications", type=int, default=100)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(fn=cmd_simulate, need_config=True)

    p = sub.add_parser("compare", help="run a named experiment preset")
    common(p)
    p.add_argument("--preset", choices=_PRESETS, default=None)
    p.set_defaults(fn=cmd_compare, need_config=False)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "need_config", False) and not args.config:
        print("error: --config is required", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (ModelError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
