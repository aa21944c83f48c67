"""Accuracy vs training-upload budget for ADE-MI and the raw baselines.

Reuses the device artifacts in --out when present, otherwise trains them.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from ademi.config import load_config
from ademi.experiment import budget_to_reach, rows_to_csv, sweep_upload_time


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--out", default="runs/default")
    ap.add_argument("--schemes", default="ade-mi,multi,single")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config, args.set)
    budgets = np.logspace(-5, 1, 13)
    schemes = args.schemes.split(",")
    rows = sweep_upload_time(cfg, budgets, args.out, schemes)
    text = rows_to_csv(rows)
    Path(args.out, "sweep_upload.csv").write_text(text)
    print(text, end="")
    for s in schemes:
        print(f"{s}: 90% of final accuracy at {budget_to_reach(rows, s):.3g} s")


if __name__ == "__main__":
    main()
