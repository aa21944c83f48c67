"""Full desk-scale run: synth, device training, one-shot upload, server, baselines.

    python scripts/run_default.py --out runs/default [--config configs/default.yaml] [--set k=v ...]
"""
import argparse
import json
import logging
import time

from ademi.config import load_config
from ademi.experiment import run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config")
    ap.add_argument("--set", action="append", default=[])
    ap.add_argument("--out", default="runs/default")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = load_config(args.config, args.set)
    t0 = time.perf_counter()
    rep = run_experiment(cfg, args.out)
    print(json.dumps({"accuracy": rep.accuracy, "local_accuracy": rep.local_accuracy,
                      "per_class_recall": rep.per_class_recall}, indent=1, sort_keys=True))
    print(f"confusion (rows = true class):\n" + "\n".join(" ".join(f"{v:3d}" for v in r) for r in rep.confusion))
    print(f"wall clock {time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
