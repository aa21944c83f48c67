"""Command-line entry point: ``ademi <command> [--config F] [--set k=v ...] [--out DIR]``.

Exit codes: 0 ok, 2 config error, 3 insufficient capacity, 4 numerical error,
1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .channel import REFERENCE_DIMS, SNR_SWEEP_DB, latency_sweep
from .config import load_config
from .errors import ConfigError, ConvergenceError, DomainError, InsufficientCapacityError, NumericalError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 1, 2, 3, 4


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train_device.epochs=5")
    common.add_argument("--out", default="runs/default", help="run directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ademi", description="Capacity-aware multi-view WiFi sensing experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="synthesize CSI, extract spectrograms, split")
    td = sub.add_parser("train-device", parents=[common], help="local training and one-shot upload")
    td.add_argument("--device", type=int, required=True)
    sub.add_parser("train-server", parents=[common], help="train the server on uploaded latents")
    sub.add_parser("eval", parents=[common], help="evaluate server, local decoders and baselines")
    sub.add_parser("run", parents=[common], help="all stages end to end")
    si = sub.add_parser("sweep-interval", parents=[common], help="accuracy vs sampling interval")
    si.add_argument("--intervals", default="0.001,0.002,0.004", help="seconds, comma-separated")
    su = sub.add_parser("sweep-upload", parents=[common], help="accuracy vs upload budget")
    su.add_argument("--budgets", default="1e-4,3.16e-4,1e-3,3.16e-3,1e-2,3.16e-2,0.1,0.316,1,3.16,10")
    su.add_argument("--schemes", default="ade-mi,multi,single")
    lt = sub.add_parser("latency-table", parents=[common], help="upload latency per scheme and SNR")
    lt.add_argument("--dims", default=f"{REFERENCE_DIMS[0]},{REFERENCE_DIMS[1]}", help="S_T,S_F of the payload")
    lt.add_argument("--snrs", default=",".join(f"{s:g}" for s in SNR_SWEEP_DB))
    return p


def _config(args):
    snapshot = Path(args.out) / "config.yaml"
    path = args.config
    if path is None and args.command in ("train-device", "train-server", "eval") and snapshot.exists():
        path = snapshot
    return load_config(path, args.set)


def _run(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if args.command == "synth":
        ex.stage_synth(cfg, out)
    elif args.command == "train-device":
        ex.stage_train_device(cfg, out, args.device)
    elif args.command == "train-server":
        ex.stage_train_server(cfg, out)
    elif args.command in ("eval", "run"):
        rep = ex.stage_eval(cfg, out) if args.command == "eval" else ex.run_experiment(cfg, out)
        print(json.dumps({"accuracy": rep.accuracy, "local_accuracy": rep.local_accuracy,
                          "per_class_recall": rep.per_class_recall}, sort_keys=True))
    elif args.command == "sweep-interval":
        rows = ex.sweep_interval(cfg, _floats(args.intervals), out)
        _emit(out, "sweep_interval", rows)
    elif args.command == "sweep-upload":
        schemes = [s.strip() for s in args.schemes.split(",") if s.strip()]
        rows = ex.sweep_upload_time(cfg, _floats(args.budgets), out, schemes)
        _emit(out, "sweep_upload", rows)
    elif args.command == "latency-table":
        dims = [int(v) for v in _floats(args.dims)]
        if len(dims) != 2:
            raise ConfigError("--dims needs S_T,S_F")
        table = latency_sweep(cfg.channel, tuple(dims), _floats(args.snrs))
        out.mkdir(parents=True, exist_ok=True)
        (out / "latency_table.csv").write_text(table.to_csv())
        print(table.to_text(), end="")
    return EXIT_OK


def _emit(out: Path, name: str, rows):
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.csv").write_text(ex.rows_to_csv(rows))
    with open(out / f"{name}.jsonl", "w") as fh:
        for r in rows:
            line = json.dumps(r, sort_keys=True)
            fh.write(line + "\n")
            print(line)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except Exception as exc:
        tag = getattr(exc, "stage", args.command)
        print(f"ademi: error [{tag}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError):
            return EXIT_CONFIG
        if isinstance(exc, InsufficientCapacityError):
            return EXIT_CAPACITY
        if isinstance(exc, (NumericalError, ConvergenceError, FloatingPointError)):
            return EXIT_NUMERICAL
        if isinstance(exc, DomainError):
            return EXIT_CONFIG
        if isinstance(exc, (OSError, KeyError)):
            return EXIT_OTHER
        raise


if __name__ == "__main__":
    sys.exit(main())
