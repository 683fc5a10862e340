"""End-to-end demo on the bundled 200-sample corpus.

Splits the corpus into train and held-out parts, then drives every pipeline
stage through the command-line entry points: mock-generate -> classify ->
refine -> stats -> build -> train -> eval. The held-out evaluation passes the
training manifest, so train/eval overlap would fail loudly. The whole run is
seeded and finishes in well under a minute.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from reasforge.cli import main as cli
from reasforge.records import load_samples, write_jsonl

BUNDLED = Path(__file__).resolve().parent.parent / "tests" / "data" / "pipeline_samples.jsonl"


def run(out_dir: Path, samples_path: Path, error_rate: float, seed: int,
        hold_out: int, epochs: int, learning_rate: float, batch: int,
        init_scale: float) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    samples = load_samples(samples_path)
    if not (0 < hold_out < len(samples)):
        print(f"hold-out {hold_out} must split {len(samples)} samples", file=sys.stderr)
        return 1
    train_samples = out_dir / "train_samples.jsonl"
    eval_samples = out_dir / "eval_samples.jsonl"
    write_jsonl(train_samples, samples[:-hold_out])
    write_jsonl(eval_samples, samples[-hold_out:])
    print(f"split {len(samples)} samples into {len(samples) - hold_out} train / "
          f"{hold_out} held out")

    traces = out_dir / "traces.jsonl"
    classified = out_dir / "classified.jsonl"
    refined = out_dir / "refined.jsonl"
    dataset = out_dir / "dataset"
    run_dir = out_dir / "run"
    stages = [
        ["mock-generate", "--samples", str(train_samples), "--out", str(traces),
         "--error-rate", str(error_rate), "--seed", str(seed)],
        ["classify", "--in", str(traces), "--samples", str(train_samples),
         "--out", str(classified)],
        ["refine", "--in", str(classified), "--samples", str(train_samples),
         "--out", str(refined)],
        ["stats", "--traces", str(classified), "--samples", str(train_samples),
         "--refined", str(refined)],
        ["build", "--samples", str(train_samples), "--traces", str(classified),
         "--refined", str(refined), "--out", str(dataset), "--mode", "mtl-all",
         "--seed", str(seed)],
        ["train", "--dataset", str(dataset), "--samples", str(train_samples),
         "--out-dir", str(run_dir), "--epochs", str(epochs), "--seed", str(seed),
         "--learning-rate", str(learning_rate), "--batch", str(batch),
         "--init-scale", str(init_scale)],
        ["eval", "--model", str(run_dir / "model.bin"), "--vocab", str(run_dir / "vocab.json"),
         "--samples", str(eval_samples), "--manifest", str(dataset / "manifest.json")],
    ]
    started = time.perf_counter()
    for argv in stages:
        print(f"\n$ reasforge {' '.join(argv)}")
        code = cli(argv)
        if code != 0:
            print(f"stage {argv[0]} failed with exit code {code}", file=sys.stderr)
            return code
    print(f"\npipeline finished in {time.perf_counter() - started:.1f}s; "
          f"artifacts in {out_dir}")
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--samples", default=str(BUNDLED), help="sample JSONL corpus")
    parser.add_argument("--out", default="pipeline_out", help="output directory")
    parser.add_argument("--error-rate", type=float, default=0.33)
    parser.add_argument("--seed", type=int, default=42)
    parser.add_argument("--hold-out", type=int, default=40,
                        help="samples reserved for evaluation")
    # settings at which the bundled corpus trains to high held-out accuracy:
    # small batches and a wide init matter more than width for tiny nets
    parser.add_argument("--epochs", type=int, default=250)
    parser.add_argument("--learning-rate", type=float, default=1.0)
    parser.add_argument("--batch", type=int, default=8)
    parser.add_argument("--init-scale", type=float, default=0.2)
    args = parser.parse_args()
    return run(Path(args.out), Path(args.samples), args.error_rate, args.seed,
               args.hold_out, args.epochs, args.learning_rate, args.batch,
               args.init_scale)


if __name__ == "__main__":
    raise SystemExit(main())
