"""Command line interface: ``ipman <subcommand> --config FILE [--seed N] [--out DIR]``.

Each subcommand runs one pipeline segment and reads/writes files in the run
directory ``DIR/<config-hash>-seed<N>``, so the stages can be repeated
independently (for example stage 2 with a new barrier schedule against a
fixed stage-1 model). ``--config`` also accepts the name of a packaged
config: linear, quadratic, bilinear, rosenbrock or toy_dose.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex
from .errors import IpmanError

SUBCOMMANDS = ("sample", "stage1", "stage2", "oracle", "evaluate", "plot", "run")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipman", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "sample": "draw the feasible and infeasible training sets",
        "stage1": "train the GAN on the training sets",
        "stage2": "retrain the generator against objective + barrier",
        "oracle": "compute the ground-truth optimum",
        "evaluate": "draw samples from the stage-2 generator; metrics and certificate",
        "plot": "SVG scatter of training data and generated samples (2-D only)",
        "run": "all of the above in order",
    }
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", required=True, help="YAML config path or packaged config name")
        s.add_argument("--seed", type=int, default=None, help="overrides the seed in the config")
        s.add_argument("--out", default=None, help="parent directory for run directories")
        s.add_argument("-v", "--verbose", action="store_true")
        if name in ("stage1", "run"):
            s.add_argument("--stage1-cache", default=None,
                           help="directory for reusing stage-1 models across runs")
        if name == "plot":
            s.add_argument("--no-trim", action="store_true",
                           help="plot all generated samples instead of the best 90%%")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config, seed=args.seed, output_dir=args.out)
        run_dir = cfg.run_dir()
        if args.command == "run":
            summary = ex.run_full(cfg, stage1_cache=args.stage1_cache)
            print(json.dumps({"run_dir": str(run_dir), "metrics": summary.metrics,
                              "certificate": summary.certificate}, indent=2))
            return 0
        run_dir.mkdir(parents=True, exist_ok=True)
        ex.write_json(run_dir / "config.json", cfg.to_dict())
        if args.command == "sample":
            ex.stage_sample(cfg, run_dir)
            result = {"feasible": str(run_dir / "feasible.csv"),
                      "infeasible": str(run_dir / "infeasible.csv")}
        elif args.command == "stage1":
            res = ex.stage_stage1(cfg, run_dir, cache_dir=args.stage1_cache)
            result = {k: v for k, v in res.items() if k != "model"}
        elif args.command == "stage2":
            res = ex.stage_stage2(cfg, run_dir)
            result = {k: v for k, v in res.items() if k not in ("model", "tail")}
        elif args.command == "oracle":
            result = ex.stage_oracle(cfg, run_dir)
            result.pop("argmin_points", None)
        elif args.command == "evaluate":
            result = ex.stage_evaluate(cfg, run_dir)
        else:
            path = ex.stage_plot(cfg, run_dir, trim=not args.no_trim)
            result = {"plot": str(path) if path else None}
        print(json.dumps(result, indent=2, sort_keys=True, default=ex._jsonable))
        return 0
    except IpmanError as exc:
        print(f"ipman {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
