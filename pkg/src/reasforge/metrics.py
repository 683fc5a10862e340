"""Corpus statistics and model evaluation.

Accuracy here always means: Correct divided by all traces, with
Unclassifiable counted as wrong (a trace whose answer cannot be read is a
failure of the generator, not a missing data point). Machine-facing output
carries four decimal places; human tables show percentages with one, the
convention used for multiple-choice VideoQA benchmarks.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .builder import DatasetManifest, render_input, sample_id_digest
from .records import (
    Classification,
    RawSample,
    ReasoningTrace,
    RefinedTrace,
    ValidationError,
)
from .trainer import Tokenizer, ToyModel, forward, unigram_distribution

UNCATEGORIZED = "uncategorized"


class EmptyCorpusError(Exception):
    """No traces to score."""


@dataclass(frozen=True)
class CategoryCount:
    total: int
    correct: int

    def to_dict(self) -> dict:
        return {"total": self.total, "correct": self.correct}


@dataclass(frozen=True)
class RefinementStats:
    sentences_removed_per_pattern: Mapping[int, int]
    traces_fully_emptied: int
    scrub_events: int

    def to_dict(self) -> dict:
        return {
            "sentences_removed_per_pattern": {
                str(k): v for k, v in sorted(self.sentences_removed_per_pattern.items())
            },
            "traces_fully_emptied": self.traces_fully_emptied,
            "scrub_events": self.scrub_events,
        }


@dataclass(frozen=True)
class CorpusStats:
    total: int
    correct: int
    incorrect: int
    unclassifiable: int
    per_category: Mapping[str, CategoryCount]
    refinement: RefinementStats | None = None

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyCorpusError("no traces to score")
        return self.correct / self.total

    def to_dict(self) -> dict:
        out = {
            "total": self.total,
            "correct": self.correct,
            "incorrect": self.incorrect,
            "unclassifiable": self.unclassifiable,
            "accuracy": round(self.accuracy, 4),
            "per_category": {
                name: c.to_dict() for name, c in sorted(self.per_category.items())
            },
        }
        if self.refinement is not None:
            out["refinement"] = self.refinement.to_dict()
        return out


def generator_accuracy(traces: Sequence[ReasoningTrace]) -> float:
    """Fraction of traces classified Correct; Unclassifiable counts as wrong."""
    if not traces:
        raise EmptyCorpusError("no traces to score")
    correct = sum(1 for t in traces if t.classification is Classification.CORRECT)
    return correct / len(traces)


def refinement_stats(refined: Sequence[RefinedTrace]) -> RefinementStats:
    per_pattern: Counter[int] = Counter()
    emptied = 0
    scrubbed = 0
    for r in refined:
        for _sentence, pattern_id in r.removed_sentences:
            per_pattern[pattern_id] += 1
        if r.refined_text == "":
            emptied += 1
        scrubbed += len(r.scrubbed_tokens)
    return RefinementStats(
        sentences_removed_per_pattern=dict(per_pattern),
        traces_fully_emptied=emptied,
        scrub_events=scrubbed,
    )


def corpus_stats(
    traces: Sequence[ReasoningTrace],
    samples_by_id: Mapping[str, RawSample],
    refined: Sequence[RefinedTrace] | None = None,
) -> CorpusStats:
    if not traces:
        raise EmptyCorpusError("no traces to score")
    tally = Counter(t.classification for t in traces)
    per_category: dict[str, list[int]] = {}
    for t in traces:
        sample = samples_by_id.get(t.sample_id)
        if sample is None:
            raise ValidationError("sample_id", f"trace for {t.sample_id!r} has no sample record")
        name = sample.category if sample.category is not None else UNCATEGORIZED
        bucket = per_category.setdefault(name, [0, 0])
        bucket[0] += 1
        if t.classification is Classification.CORRECT:
            bucket[1] += 1
    return CorpusStats(
        total=len(traces),
        correct=tally[Classification.CORRECT],
        incorrect=tally[Classification.INCORRECT],
        unclassifiable=tally[Classification.UNCLASSIFIABLE],
        per_category={k: CategoryCount(v[0], v[1]) for k, v in per_category.items()},
        refinement=refinement_stats(refined) if refined is not None else None,
    )


# --- evaluation ----------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    total: int
    correct: int
    predictions: tuple[tuple[str, int], ...]  # (sample_id, predicted index)

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            raise EmptyCorpusError("no samples to evaluate")
        return self.correct / self.total


def check_train_eval_disjoint(
    manifest: DatasetManifest, eval_samples: Sequence[RawSample]
) -> None:
    """Refuse evaluation samples whose ids were in the training dataset.

    The manifest records a digest per training id, so the check needs no
    access to the training files themselves.
    """
    trained = set(manifest.sample_id_digests)
    if not trained:
        return
    overlap = [s.sample_id for s in eval_samples if sample_id_digest(s.sample_id) in trained]
    if overlap:
        shown = ", ".join(repr(i) for i in sorted(overlap)[:3])
        raise ValidationError(
            "eval_samples",
            f"{len(overlap)} evaluation sample(s) were in the training set: {shown}",
        )


def eval_model(
    model: ToyModel,
    tokenizer: Tokenizer,
    eval_samples: Sequence[RawSample],
    manifest: DatasetManifest | None = None,
) -> EvalReport:
    """Accuracy of the answer head on held-out samples.

    Each sample is rendered exactly as at training time and featurized the
    same way; the prediction is the argmax of the answer logits restricted
    to the sample's own option count, ties resolved toward the lowest index.
    Passing the training manifest enforces train/eval disjointness.
    """
    if manifest is not None:
        check_train_eval_disjoint(manifest, eval_samples)
    correct = 0
    predictions: list[tuple[str, int]] = []
    for sample in eval_samples:
        x = unigram_distribution(render_input(sample), tokenizer)
        qa_logits, _ = forward(model, x, len(sample.options))
        pred = int(np.argmax(qa_logits))
        predictions.append((sample.sample_id, pred))
        if pred == sample.gold_index:
            correct += 1
    return EvalReport(total=len(eval_samples), correct=correct, predictions=tuple(predictions))


# --- formatting ----------------------------------------------------------------


def format_accuracy(value: float) -> str:
    """Machine form: fraction with four decimals, e.g. ``0.6700``."""
    return f"{value:.4f}"


def format_accuracy_human(value: float) -> str:
    """Table form: percentage with one decimal, e.g. ``67.0``."""
    return f"{100.0 * value:.1f}"


def render_stats_table(stats: CorpusStats) -> str:
    """Aligned plain-text summary, one metric per line."""
    lines = [
        f"traces          {stats.total}",
        f"correct         {stats.correct}",
        f"incorrect       {stats.incorrect}",
        f"unclassifiable  {stats.unclassifiable}",
        f"accuracy        {format_accuracy_human(stats.accuracy)}",
    ]
    if stats.per_category:
        lines.append("")
        lines.append("category            total  correct  accuracy")
        for name, c in sorted(stats.per_category.items()):
            acc = format_accuracy_human(c.correct / c.total) if c.total else "-"
            lines.append(f"{name:<18}  {c.total:>5}  {c.correct:>7}  {acc:>8}")
    if stats.refinement is not None:
        r = stats.refinement
        lines.append("")
        lines.append(f"sentences removed   {sum(r.sentences_removed_per_pattern.values())}")
        for pid, n in sorted(r.sentences_removed_per_pattern.items()):
            lines.append(f"  pattern {pid:<2}        {n}")
        lines.append(f"traces emptied      {r.traces_fully_emptied}")
        lines.append(f"tokens scrubbed     {r.scrub_events}")
    return "\n".join(lines) + "\n"
