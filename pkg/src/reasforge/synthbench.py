"""Synthetic benchmark with a computable accuracy ceiling.

Generative process, per sample:

  1. gold answer  y  ~ uniform over {0, 1}; options are CLASS_WORDS.
  2. cue class    z  = y with probability 1 - cue_noise, else 1 - y.
  3. cue token       ~ uniform over the class-z cue vocabulary.
  4. the question names the cue token; the cue token determines z exactly.

The input therefore reveals z, and y agrees with z with probability
1 - cue_noise: the best possible accuracy from the input alone is
max(cue_noise, 1 - cue_noise). scripts/bayes_accuracy.py re-derives that
ceiling by brute-force enumeration in exact rational arithmetic and
cross-checks it by simulation; nothing here is taken on faith.

Each sample also gets a reasoning trace from a deterministic reader that
always concludes z. Its body states which turn the cue marks (the signal a
reasoning head can learn), its conclusion names the predicted option, and
wrong traces additionally mention the gold option among the hints. Wrong
traces are exactly the flipped samples, so the trace corpus has accuracy
1 - cue_noise as well.

Why the two training comparisons come out the way they do:

  * beta = 0.5 vs beta = 0 on the same refined two-headed dataset: the
    reasoning targets supervise h -> z, a deterministic function of the
    input shared by many rare cue tokens, while QA supervision alone sees
    each cue only a few times under label noise.
  * refined two-headed vs original joint-target: original trace text names
    the gold option in every trace (via the conclusion when the trace is
    right, via the hint sentence when it is wrong), so its targets leak the
    per-sample label and reward memorizing noise; refinement removes the
    conclusion and scrubs the leaked gold word, leaving only the
    generalizable cue-class signal.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .builder import BuildConfig, BuildMode, DatasetManifest, ReasoningSource, build
from .metrics import eval_model
from .records import (
    Classification,
    LossWeights,
    RawSample,
    ReasoningTrace,
    TrainingExample,
    ValidationError,
)
from .refinery import classify_prediction, refine_corpus
from .answers import extract_predicted_answer
from .rng import SplitMix64, derive_stream_seed
from .trainer import Tokenizer, TrainConfig, ToyModel, train

CLASS_WORDS = ("eastward", "westward")
GENERATOR_ID = "synthbench-reader"

# short templates on purpose: bag-of-token features dilute every token by
# text length, so boilerplate directly weakens the learnable signal
_QUESTION = "Which way after the {cue} flash?"
_BODY_SIGNAL = "The {cue} flash marks {word} motion."
_GOLD_HINT = "The hints also list {word} as a choice."
_CONCLUSION = "Thus, the correct answer is ({letter}) {word}."


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train: int = 320
    n_eval: int = 400
    cues_per_class: int = 16
    cue_noise: float = 0.25
    seed: int = 0

    def validate(self) -> "BenchmarkConfig":
        if self.n_train < 1 or self.n_eval < 1:
            raise ValidationError("n_train", "both splits must be non-empty")
        if self.cues_per_class < 1:
            raise ValidationError("cues_per_class", "must be >= 1")
        if not (0.0 <= self.cue_noise < 0.5):
            raise ValidationError("cue_noise", "must be in [0, 0.5) so the cue stays informative")
        return self

    def bayes_accuracy(self) -> float:
        """Ceiling of input-only accuracy; see scripts/bayes_accuracy.py for
        the independent enumeration this must agree with."""
        return 1.0 - self.cue_noise


def cue_sets(cues_per_class: int) -> tuple[tuple[str, ...], tuple[str, ...]]:
    return (
        tuple(f"glyph{i:02d}" for i in range(cues_per_class)),
        tuple(f"rune{i:02d}" for i in range(cues_per_class)),
    )


def cue_class(cue: str) -> int:
    return 0 if cue.startswith("glyph") else 1


@dataclass(frozen=True)
class _Draw:
    gold: int
    cue_klass: int
    cue: str


def _draw(config: BenchmarkConfig, sample_id: str) -> _Draw:
    rng = SplitMix64(derive_stream_seed(config.seed, sample_id))
    gold = rng.randrange(2)
    flipped = rng.next_float() < config.cue_noise
    klass = 1 - gold if flipped else gold
    cues = cue_sets(config.cues_per_class)[klass]
    return _Draw(gold=gold, cue_klass=klass, cue=cues[rng.randrange(len(cues))])


def make_samples(config: BenchmarkConfig, split: str, n: int) -> list[RawSample]:
    """The split name is part of each sample's RNG stream, so train and eval
    are decorrelated but individually reproducible."""
    config.validate()
    samples = []
    for i in range(n):
        sample_id = f"{split}{i:04d}"
        draw = _draw(config, sample_id)
        samples.append(
            RawSample(
                sample_id=sample_id,
                video_ref=f"synt://{split}/{i:04d}",
                question=_QUESTION.format(cue=draw.cue),
                options=CLASS_WORDS,
                gold_index=draw.gold,
                category="synthetic",
            )
        )
    return samples


def make_traces(config: BenchmarkConfig, samples: Sequence[RawSample]) -> list[ReasoningTrace]:
    """Deterministic reader: reads the cue, reasons about its class, answers
    it. Wrong answers happen exactly when the cue class differs from gold."""
    traces = []
    for sample in samples:
        draw = _draw(config, sample.sample_id)
        z = draw.cue_klass
        lines = [
            _BODY_SIGNAL.format(cue=draw.cue, word=CLASS_WORDS[z]),
        ]
        if z != draw.gold:
            lines.append(_GOLD_HINT.format(word=CLASS_WORDS[draw.gold]))
        lines.append(_CONCLUSION.format(letter=chr(ord("A") + z), word=CLASS_WORDS[z]))
        text = " ".join(lines)
        predicted, method = extract_predicted_answer(text, sample.options)
        traces.append(
            ReasoningTrace(
                sample_id=sample.sample_id,
                raw_text=text,
                predicted_index=predicted,
                extraction_method=method,
                classification=classify_prediction(predicted, sample.gold_index),
                generator_id=GENERATOR_ID,
            )
        )
    return traces


# --- experiment arms ----------------------------------------------------------


@dataclass(frozen=True)
class ArmResult:
    name: str
    per_seed: tuple[float, ...]

    @property
    def mean(self) -> float:
        return sum(self.per_seed) / len(self.per_seed)


@dataclass(frozen=True)
class BenchmarkResult:
    config: BenchmarkConfig
    train_seeds: tuple[int, ...]
    mtl_beta05: ArmResult
    mtl_beta0: ArmResult
    stl_original: ArmResult

    @property
    def beta_gap(self) -> float:
        return self.mtl_beta05.mean - self.mtl_beta0.mean

    @property
    def refinement_gap(self) -> float:
        return self.mtl_beta05.mean - self.stl_original.mean

    def to_dict(self) -> dict:
        return {
            "bayes_accuracy": self.config.bayes_accuracy(),
            "train_seeds": list(self.train_seeds),
            "arms": {
                arm.name: {"per_seed": list(arm.per_seed), "mean": round(arm.mean, 4)}
                for arm in (self.mtl_beta05, self.mtl_beta0, self.stl_original)
            },
            "beta_gap": round(self.beta_gap, 4),
            "refinement_gap": round(self.refinement_gap, 4),
        }


def _train_config(seed: int, weights: LossWeights) -> TrainConfig:
    # tuned so the representation takes off within budget across seeds; small
    # batches and a large step matter more than width for these tiny nets
    return TrainConfig(
        weights=weights,
        learning_rate=1.0,
        epochs=250,
        batch=8,
        seed=seed,
        init_scale=0.2,
        hidden=64,
    )


def _run_arm(
    examples: Sequence[TrainingExample],
    samples_by_id: Mapping[str, RawSample],
    eval_samples: Sequence[RawSample],
    manifest: DatasetManifest,
    weights: LossWeights,
    seeds: Sequence[int],
) -> tuple[float, ...]:
    accs = []
    for seed in seeds:
        model, tokenizer, _ = train(examples, samples_by_id, _train_config(seed, weights))
        report = eval_model(model, tokenizer, eval_samples, manifest=manifest)
        accs.append(report.accuracy)
    return tuple(accs)


def run_benchmark(
    config: BenchmarkConfig = BenchmarkConfig(),
    train_seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> BenchmarkResult:
    """Generate one corpus, then train the three arms over the given seeds."""
    train_samples = make_samples(config, "train", config.n_train)
    eval_samples = make_samples(config, "eval", config.n_eval)
    traces = make_traces(config, train_samples)
    by_id = {s.sample_id: s for s in train_samples}
    refined, _ = refine_corpus(traces, by_id)

    mtl_examples, mtl_manifest = build(
        train_samples,
        traces,
        BuildConfig(mode=BuildMode.MTL_ALL, reasoning_source=ReasoningSource.REFINED),
        refined=refined,
    )
    stl_examples, stl_manifest = build(
        train_samples,
        traces,
        BuildConfig(mode=BuildMode.STL_ALL, reasoning_source=ReasoningSource.ORIGINAL),
    )

    mtl_beta05 = _run_arm(mtl_examples, by_id, eval_samples, mtl_manifest,
                          LossWeights(0.5, 0.5), train_seeds)
    mtl_beta0 = _run_arm(mtl_examples, by_id, eval_samples, mtl_manifest,
                         LossWeights(1.0, 0.0), train_seeds)
    stl_original = _run_arm(stl_examples, by_id, eval_samples, stl_manifest,
                            LossWeights(1.0, 0.0), train_seeds)

    return BenchmarkResult(
        config=config,
        train_seeds=tuple(train_seeds),
        mtl_beta05=ArmResult("mtl_refined_beta05", mtl_beta05),
        mtl_beta0=ArmResult("mtl_refined_beta0", mtl_beta0),
        stl_original=ArmResult("stl_original", stl_original),
    )
