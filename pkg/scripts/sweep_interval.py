"""Accuracy vs CSI sampling interval; writes sweep_interval.csv under --out."""
import argparse
import logging
from pathlib import Path

from ademi.config import load_config
from ademi.experiment import rows_to_csv, sweep_interval


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--intervals", default="0.001,0.002,0.004")
    ap.add_argument("--out", default="runs/sweep_interval")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config, args.set)
    rows = sweep_interval(cfg, [float(v) for v in args.intervals.split(",")], args.out)
    text = rows_to_csv(rows)
    Path(args.out, "sweep_interval.csv").write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()
