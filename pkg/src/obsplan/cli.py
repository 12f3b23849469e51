"""Command-line entry point for the experiment harness.

Subcommands: ``bundling``, ``timing``, ``pareto``, ``trial`` (single-instance
debug), ``validate`` (built-in oracle/property checks), and
``write-config`` (emit a documented template).  Exit code 0 on success;
failures print a machine-readable error JSON to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config, write_template


def _common_flags(p):
    p.add_argument("--config", default=None, help="config file path")
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out-dir", default="results", help="output directory")
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded, scheduling-independent outputs")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads (and BLAS thread cap)")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="obsplan",
        description="Covariance-prediction and trajectory-refinement "
                    "experiment harness")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("bundling", "single-interval bundling-fidelity sweep"),
            ("timing", "wall-clock scaling over landmark count"),
            ("pareto", "seeded refinement batch over the rho sweep"),
            ("trial", "run one trial end to end and dump details"),
            ("validate", "run built-in oracle and property checks")):
        p = sub.add_parser(name, help=help_text)
        _common_flags(p)
        if name == "trial":
            p.add_argument("--index", type=int, default=0,
                           help="trial index within the generated batch")
        if name == "pareto":
            p.add_argument("--trials", type=int, default=None,
                           help="override trial count")

    p = sub.add_parser("write-config", help="emit a documented config template")
    p.add_argument("path", help="where to write the template")
    return ap


def _run(args):
    if args.command == "write-config":
        write_template(args.path)
        print(f"template written to {args.path}")
        return 0

    cfg = load_config(args.config)
    if args.command == "validate":
        from .selfcheck import run_selfcheck
        checks = run_selfcheck(seed=args.seed)
        failed = [c for c in checks if not c["passed"]]
        for c in checks:
            mark = "PASS" if c["passed"] else "FAIL"
            print(f"[{mark}] {c['name']}: {c['detail']}")
        os.makedirs(args.out_dir, exist_ok=True)
        with open(os.path.join(args.out_dir, "validate.json"), "w") as fh:
            json.dump({"checks": checks, "n_failed": len(failed)}, fh, indent=2)
        return 1 if failed else 0

    from . import harness
    threads = 1 if args.deterministic else max(1, args.threads)
    harness._limit_threads(threads)
    if args.command == "bundling":
        path = harness.run_bundling_experiment(cfg, args.out_dir, seed=args.seed)
    elif args.command == "timing":
        path = harness.run_timing_experiment(cfg, args.out_dir, seed=args.seed,
                                             threads=1)
    elif args.command == "pareto":
        path = harness.run_pareto_batch(cfg, args.out_dir, seed=args.seed,
                                        deterministic=args.deterministic,
                                        threads=threads, count=args.trials)
    elif args.command == "trial":
        path = harness.run_single_trial(cfg, args.out_dir, seed=args.seed,
                                        trial_index=args.index)
    else:  # pragma: no cover - argparse enforces the choices
        raise ValueError(f"unknown command {args.command}")
    print(f"results written to {path}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except Exception as exc:
        err = {"error": str(exc), "type": type(exc).__name__,
               "command": getattr(args, "command", None)}
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
