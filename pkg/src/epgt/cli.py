"""Command-line entry points.

Subcommands:

* ``train --config cfg.json [--seeds ...] [--out DIR]``: run the experiment
  matrix from a JSON config, one subdirectory per (config, seed) run.
* ``verify [--full]``: re-check core properties against the built-in oracles
  and print one pass/fail line each.
* ``inspect-memory PATH [--csv OUT]``: summarize a memory snapshot and
  optionally export its (key, action, value) table.
* ``replay --config cfg.json --seed N [--out DIR]``: re-run a single seed and
  print the SHA-256 of its metrics stream, for determinism checks.

``EPGT_OUT_DIR`` overrides output directories; ``EPGT_PARALLEL`` sets how
many seeds run concurrently.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from .harness import ExperimentConfig, inspect_memory, run_experiment, run_single
from .oracle import run_verification


def _add_train(sub):
    p = sub.add_parser("train", help="run an experiment from a config file")
    p.add_argument("--config", required=True, help="path to the JSON config")
    p.add_argument("--seeds", type=int, nargs="*", default=None,
                   help="override the config's seed list")
    p.add_argument("--out", default=None, help="override the output directory")


def _add_verify(sub):
    p = sub.add_parser("verify", help="run the oracle property report")
    p.add_argument("--full", action="store_true",
                   help="acceptance-sized fuzz instead of the quick pass")


def _add_inspect(sub):
    p = sub.add_parser("inspect-memory", help="summarize a memory snapshot")
    p.add_argument("path", help="memory snapshot file")
    p.add_argument("--csv", default=None, help="export (key, action, value) rows")


def _add_replay(sub):
    p = sub.add_parser("replay", help="re-run one seed and hash its metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None,
                   help="run directory (default <out_dir>/replay-seed<N>)")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="epgt")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_train(sub)
    _add_verify(sub)
    _add_inspect(sub)
    _add_replay(sub)
    args = parser.parse_args(argv)

    if args.command in ("train", "replay"):
        try:
            args.loaded_config = ExperimentConfig.load(args.config)
        except (OSError, ValueError) as exc:
            print(f"invalid config {args.config}: {exc}", file=sys.stderr)
            return 2

    if args.command == "train":
        cfg = args.loaded_config
        summaries = run_experiment(cfg, seeds=args.seeds, out_dir=args.out)
        crashed = 0
        for s in summaries:
            if s.get("crashed"):
                crashed += 1
                print(f"seed {s['seed']}: CRASHED")
            else:
                solved = s.get("solved_at_env_step")
                note = f"solved at {solved}" if solved else "budget exhausted"
                print(f"{s['run_id']}: {s['env_steps']} env steps, "
                      f"{s['update_steps']} updates, {note}")
        return 1 if crashed else 0

    if args.command == "verify":
        results = run_verification(quick=not args.full)
        failed = 0
        for name, passed, detail in results:
            status = "PASS" if passed else "FAIL"
            line = f"[{status}] {name}"
            if detail:
                line += f" ({detail})"
            print(line)
            failed += 0 if passed else 1
        print(f"{len(results) - failed}/{len(results)} properties passed")
        return 1 if failed else 0

    if args.command == "inspect-memory":
        try:
            inspect_memory(args.path, csv_path=args.csv)
        except (OSError, ValueError) as exc:
            print(f"cannot inspect {args.path}: {exc}", file=sys.stderr)
            return 2
        return 0

    if args.command == "replay":
        cfg = args.loaded_config
        out = Path(args.out) if args.out else Path(cfg.out_dir) / f"replay-seed{args.seed}"
        summary = run_single(cfg, args.seed, out)
        digest = hashlib.sha256((out / "metrics.jsonl").read_bytes()).hexdigest()
        print(f"run {summary['run_id']}: {summary['env_steps']} env steps")
        print(f"metrics sha256 {digest}")
        print(f"metrics path {out / 'metrics.jsonl'}")
        return 0

    parser.error(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
