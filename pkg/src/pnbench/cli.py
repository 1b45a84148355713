"""Command line entry point: ``pnbench <command> [--config FILE] [--seed N] [--out-dir DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import harness
from .config import BLACKBOX, EVADE_BLACKBOX, EVADE_WHITEBOX, ExperimentConfig
from .exceptions import PnbenchError

logger = logging.getLogger("pnbench")

COMMANDS = ("train", "attack", "transfer", "evade", "evaluate", "report", "run-all", "config")


def _parser():
    p = argparse.ArgumentParser(prog="pnbench", description="Uncertainty-based adversarial detection bench.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML experiment config (defaults are used when omitted)")
    p.add_argument("--seed", type=int, help="run only this model seed")
    p.add_argument("--out-dir", help="output directory (overrides the config)")
    p.add_argument("--retrain", action="store_true", help="ignore cached model weights")
    p.add_argument("--workers", type=int, help="size of the cell work pool")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    if args.workers:
        cfg.workers = args.workers
    return cfg


def _summarise(cells, failures):
    ok = sum(c.ok for c in cells)
    print(f"{ok}/{len(cells)} cells succeeded")
    for f in failures:
        print(f"FAILED {f}", file=sys.stderr)
    return 0 if not failures else 1


def run(args):
    cfg = load_config(args)
    if args.command == "config":
        sys.stdout.write(cfg.dumps())
        return 0
    if args.command == "report":
        cells = harness.load_cells(cfg.out_dir)
        paths = harness.report(cells, cfg.out_dir, cfg.histogram_bins)
        print(f"wrote {len(paths)} files under {cfg.out_dir}/report")
        return 0 if all(c.ok for c in cells) else 1
    if args.command == "run-all":
        cfg.save(harness.Workspace(cfg.out_dir).path("config.yaml"))
        return _summarise(*harness.run_all(cfg, retrain=args.retrain))

    roster, failures = harness.train_roster(cfg, retrain=args.retrain)
    if args.command == "train":
        print(f"{len(roster.networks)} networks ready under {cfg.out_dir}/models")
        for f in failures:
            print(f"FAILED {f}", file=sys.stderr)
        return 0 if not failures else 1
    if args.command == "attack":
        cells = harness.run_whitebox(cfg, roster)
    elif args.command == "evade":
        cells = harness.run_detection_evading(cfg, roster)
    elif args.command == "transfer":
        cells = []
        if BLACKBOX in cfg.threat_models:
            cells += harness.run_blackbox(cfg, roster, threat=BLACKBOX)
        if EVADE_BLACKBOX in cfg.threat_models or EVADE_WHITEBOX in cfg.threat_models:
            cells += harness.run_blackbox(cfg, roster, threat=EVADE_BLACKBOX)
    else:
        cells = harness.evaluate(cfg, roster)
    return _summarise(cells, failures + [f"{c.cell_id}: {c.error}" for c in cells if not c.ok])


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except PnbenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
