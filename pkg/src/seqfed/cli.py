"""Command-line entry point.

Verbs:
  seqfed run <config>                execute an experiment config
  seqfed compare <dir> [<dir>...]    tabulate persisted runs side by side
  seqfed partition-preview <config>  print per-client class histograms

Output directory precedence: --output flag, then the SEQFED_OUTPUT_DIR
environment variable, then the config's output_dir. Exits 0 on success;
on failure prints one machine-readable JSON line to stderr and exits 2.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import load_config
from .errors import SeqFedError
from .experiment import emit_comparison, materialize, run_experiment


def _build_parser():
    parser = argparse.ArgumentParser(prog="seqfed")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute an experiment config")
    runp.add_argument("config_path", nargs="?", default=None)
    runp.add_argument("--config", dest="config_flag", default=None)
    runp.add_argument("--output", default=None)
    runp.add_argument("--seed-override", type=int, default=None)
    runp.add_argument("--repeats", type=int, default=None)

    cmp = sub.add_parser("compare", help="compare persisted run directories")
    cmp.add_argument("dirs", nargs="+")
    cmp.add_argument("--output", default=None)

    prev = sub.add_parser("partition-preview",
                          help="print per-client class histograms")
    prev.add_argument("config_path", nargs="?", default=None)
    prev.add_argument("--config", dest="config_flag", default=None)
    return parser


def _config_from(args):
    path = args.config_flag or args.config_path
    if path is None:
        raise SeqFedError("no config given (positional path or --config)")
    return load_config(path)


def _resolve_output(flag_value, cfg_output):
    if flag_value:
        return flag_value
    env = os.environ.get("SEQFED_OUTPUT_DIR")
    if env:
        return env
    return cfg_output


def _cmd_run(args) -> int:
    cfg = _config_from(args)
    if args.seed_override is not None:
        cfg = replace(cfg, hp=replace(cfg.hp, seed=args.seed_override))
    if args.repeats is not None:
        cfg = replace(cfg, repeats=args.repeats)
    outdir = _resolve_output(args.output, cfg.output_dir)
    results = run_experiment(cfg, outdir)
    accs = [r.global_test_accuracy for r in results]
    print(f"{cfg.protocol}: {len(results)} run(s) -> {outdir}")
    print(f"accuracy mean {np.mean(accs):.4f}"
          + (f" std {np.std(accs, ddof=1):.4f}" if len(accs) > 1 else ""))
    print(f"ledger bytes per run: {results[0].ledger.total_bytes}")
    return 0


def _cmd_compare(args) -> int:
    outdir = _resolve_output(args.output, args.dirs[0])
    rows = emit_comparison(args.dirs, outdir)
    header = f"{'protocol':<24}{'runs':>5}{'acc_mean':>10}{'acc_std':>9}{'MB':>10}"
    print(header)
    for r in rows:
        print(f"{r['protocol']:<24}{r['runs']:>5}{r['accuracy_mean']:>10.4f}"
              f"{r['accuracy_std']:>9.4f}{r['ledger_bytes'] / 1e6:>10.2f}")
    print(f"wrote comparison.csv and plotdata.csv to {outdir}")
    return 0


def _cmd_preview(args) -> int:
    cfg = _config_from(args)
    _, clients, _, _ = materialize(cfg, cfg.hp.seed)
    classes = clients[0].dataset.class_count
    head = "client  split " + " ".join(f"c{c:<4}" for c in range(classes))
    print(head)
    for i, cd in enumerate(clients):
        for split, labels in (("train", cd.train_y), ("val", cd.val_y),
                              ("test", cd.test_y)):
            counts = np.bincount(labels, minlength=classes)
            print(f"{i:<7} {split:<5} " + " ".join(f"{c:<5}" for c in counts))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_preview(args)
    except SeqFedError as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}),
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": str(exc), "type": "OSError"}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
