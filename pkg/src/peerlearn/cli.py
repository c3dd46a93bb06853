"""Command-line entry point.

  peerlearn run <config.toml> [--out DIR] [--seed N] [--agents N]
                [--mapper gmmc|maha] [--bb] [--h2t] [--alpha A]
                [--byte-mode exact|paper]
  peerlearn validate <config.toml>
  peerlearn synth <spec.toml> <outdir>
  peerlearn report <rundir>
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import parse_config
from .dataset import synth_task, write_task
from .errors import PeerlearnError
from .runner import run_experiment


def _apply_overrides(cfg, args) -> None:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.agents is not None:
        cfg.agents = args.agents
        from .config import _round_robin

        cfg.assignment = _round_robin(len(cfg.tasks), cfg.agents)
    if args.mapper is not None:
        cfg.mapper = args.mapper
    if args.bb:
        cfg.bb = True
    if args.h2t:
        cfg.head2toe = True
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.byte_mode is not None:
        cfg.byte_mode = args.byte_mode


def cmd_run(args) -> int:
    cfg, errors = parse_config(args.config)
    if errors or cfg is None:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    _apply_overrides(cfg, args)
    config_path = Path(args.config)
    out = Path(args.out) if args.out else config_path.parent / (config_path.stem + "_out")
    result = run_experiment(cfg, out)
    print(f"report bundle written to {out}")
    final = result.history.checkpoints[-1]
    print(f"tasks={len(result.tasks)} agents={cfg.agents} mapper={cfg.mapper}")
    print(f"mapper accuracy:   {final.mapper_accuracy:.4f}")
    print(f"averaged accuracy: {final.averaged_accuracy:.4f}")
    print(f"end-to-end:        {result.end_to_end_accuracy:.4f}")
    sp = result.ledger.speedup_report()
    print(f"parallel efficiency: {sp['efficiency']:.6f} (speedup {sp['speedup']:.2f})")
    return 0


def cmd_validate(args) -> int:
    cfg, errors = parse_config(args.config)
    if errors or cfg is None:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    print(f"ok: {len(cfg.tasks)} tasks, {cfg.agents} agents, mapper={cfg.mapper}")
    return 0


def cmd_synth(args) -> int:
    cfg, errors = parse_config(args.spec)
    if errors or cfg is None:
        for e in errors:
            print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.outdir)
    for task_id, ref in enumerate(cfg.tasks):
        if ref.kind != "synth":
            print(f"skipping task {task_id}: not synthetic", file=sys.stderr)
            continue
        ds = synth_task(ref.synth, task_id)
        manifest = write_task(ds, out / f"task_{task_id:03d}")
        print(manifest)
    return 0


def cmd_report(args) -> int:
    rundir = Path(args.rundir)
    summary_path = rundir / "summary.json"
    if not summary_path.exists():
        print(f"error: {summary_path} not found", file=sys.stderr)
        return 2
    summary = json.loads(summary_path.read_text())
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="peerlearn",
        description="Simulate parallel lifelong learners sharing task heads "
        "and anchors over a broadcast network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--agents", type=int, default=None)
    p_run.add_argument("--mapper", choices=["gmmc", "maha"], default=None)
    p_run.add_argument("--bb", action="store_true")
    p_run.add_argument("--h2t", action="store_true")
    p_run.add_argument("--alpha", type=float, default=None)
    p_run.add_argument("--byte-mode", choices=["exact", "paper"], default=None)
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a config, list every problem")
    p_val.add_argument("config")
    p_val.set_defaults(func=cmd_validate)

    p_synth = sub.add_parser("synth", help="write EMB1 fixtures for synth tasks")
    p_synth.add_argument("spec")
    p_synth.add_argument("outdir")
    p_synth.set_defaults(func=cmd_synth)

    p_rep = sub.add_parser("report", help="print the summary of a finished run")
    p_rep.add_argument("rundir")
    p_rep.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PeerlearnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
