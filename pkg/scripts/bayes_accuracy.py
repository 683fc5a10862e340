#!/usr/bin/env python3
"""Brute-force the accuracy ceiling of the synthetic benchmark.

The benchmark's generative process, restated independently of the library
code that trains on it:

    gold y ~ uniform{0, 1}
    cue class z = y with probability 1 - eta, else 1 - y
    cue token   ~ uniform over the class-z cue vocabulary
    the question (the only input an answering model sees) names the cue

This script enumerates the full joint distribution over (y, z, cue) in exact
rational arithmetic, computes the best achievable accuracy of ANY decision
rule that maps inputs to answers (sum over inputs of the larger posterior
mass), and cross-checks it against a plain Monte Carlo simulation of the
sampler the benchmark actually uses. No closed-form shortcut is trusted:
the ceiling is summed case by case.
"""

import argparse
import json
import sys
from collections import Counter
from fractions import Fraction

from reasforge.synthbench import BenchmarkConfig, cue_class, cue_sets, make_samples


def enumerate_ceiling(eta: Fraction, cues_per_class: int) -> Fraction:
    """Sum over every observable input of max_y P(y, input)."""
    half = Fraction(1, 2)
    per_cue = Fraction(1, cues_per_class)
    sets = cue_sets(cues_per_class)
    # joint[cue][y] = P(gold = y and the question shows this cue)
    joint: dict[str, dict[int, Fraction]] = {}
    for y in (0, 1):
        for z in (0, 1):
            p_z = (1 - eta) if z == y else eta
            for cue in sets[z]:
                row = joint.setdefault(cue, {0: Fraction(0), 1: Fraction(0)})
                row[y] += half * p_z * per_cue
    total = Fraction(0)
    for row in joint.values():
        total += max(row[0], row[1])
    return total


def monte_carlo(config: BenchmarkConfig, n: int) -> float:
    """Simulate the benchmark's own sampler and apply the optimal rule
    (answer the cue's class, since eta < 1/2)."""
    samples = make_samples(config, "bayescheck", n)
    hits = 0
    for sample in samples:
        cue = sample.question.split("after the ")[1].split(" flash")[0]
        if cue_class(cue) == sample.gold_index:
            hits += 1
    return hits / n


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--eta", default="0.25", help="cue noise as a decimal or fraction")
    parser.add_argument("--cues-per-class", type=int, default=16)
    parser.add_argument("--mc-samples", type=int, default=40000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    args = parser.parse_args(argv)

    eta = Fraction(args.eta)
    if not (0 <= eta < Fraction(1, 2)):
        parser.error("eta must be in [0, 1/2)")
    ceiling = enumerate_ceiling(eta, args.cues_per_class)
    config = BenchmarkConfig(cue_noise=float(eta), cues_per_class=args.cues_per_class,
                             seed=args.seed)
    mc = monte_carlo(config, args.mc_samples)

    if args.json:
        print(json.dumps({
            "eta": str(eta),
            "cues_per_class": args.cues_per_class,
            "bayes_accuracy_exact": str(ceiling),
            "bayes_accuracy": float(ceiling),
            "mc_estimate": mc,
            "mc_samples": args.mc_samples,
        }))
    else:
        print(f"cue noise eta          {eta}")
        print(f"accuracy ceiling       {ceiling} = {float(ceiling):.6f}")
        print(f"monte carlo estimate   {mc:.4f}  ({args.mc_samples} samples)")
    # the simulation should sit within a few standard errors of the ceiling
    stderr = (float(ceiling) * (1 - float(ceiling)) / args.mc_samples) ** 0.5
    if abs(mc - float(ceiling)) > 6 * stderr:
        print("warning: simulation disagrees with enumeration", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
