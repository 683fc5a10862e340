#!/usr/bin/env python3
"""Run the synthetic multi-task benchmark and print the arm comparison.

Three arms share one generated corpus:
  * two-headed training on refined traces, beta = 0.5
  * the same dataset with beta = 0 (answer supervision only)
  * joint-target training on the original, unrefined traces

Each arm trains once per seed; the table reports per-seed eval accuracy and
means, next to the input-only accuracy ceiling for the process.
"""

import argparse
import json
import time

from reasforge.metrics import format_accuracy_human
from reasforge.synthbench import BenchmarkConfig, run_benchmark


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=5, help="number of training seeds")
    parser.add_argument("--json", action="store_true")
    parser.add_argument("--out", help="optional path for the JSON result")
    args = parser.parse_args(argv)

    config = BenchmarkConfig()
    started = time.time()
    result = run_benchmark(config, train_seeds=tuple(range(args.seeds)))
    elapsed = time.time() - started

    payload = result.to_dict()
    payload["runtime_seconds"] = round(elapsed, 1)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    if args.json:
        print(json.dumps(payload))
        return 0

    print(f"accuracy ceiling (input only): {format_accuracy_human(config.bayes_accuracy())}")
    print()
    print(f"{'arm':<22} {'mean':>6}  per seed")
    for arm in (result.mtl_beta05, result.mtl_beta0, result.stl_original):
        per_seed = " ".join(format_accuracy_human(a) for a in arm.per_seed)
        print(f"{arm.name:<22} {format_accuracy_human(arm.mean):>6}  {per_seed}")
    print()
    print(f"beta 0.5 over beta 0:      {100 * result.beta_gap:+.1f} points")
    print(f"refined over original:     {100 * result.refinement_gap:+.1f} points")
    print(f"runtime:                   {elapsed:.0f}s")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
