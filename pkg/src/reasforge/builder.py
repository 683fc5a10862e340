"""Emit training datasets from refined traces, in five experiment modes.

Single-task modes fold reasoning and answer into one joint target per
sample; multi-task modes emit a QA example and a reasoning example per
covered sample. Coverage follows the mode: *Cr modes use only traces
classified Correct, *All modes use every trace, and a seeded subsample can
shrink the Correct pool to a fraction. Samples left uncovered still emit a
plain QA example (QA supervision is never dropped) unless the caller opts
into dropping them.

Outputs are ``train.jsonl`` plus ``manifest.json``; example order is keyed
by (sample_id, task) so identical inputs and config produce byte-identical
files, regardless of input order or worker scheduling.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .records import (
    Classification,
    LossWeights,
    RawSample,
    ReasoningTrace,
    RefinedTrace,
    Task,
    TrainingExample,
    ValidationError,
    encode_line,
    read_jsonl,
    decode_example,
)
from .rng import SplitMix64


class JoinError(Exception):
    """Traces reference sample ids that do not exist in the sample set."""

    def __init__(self, orphan_ids: Sequence[str], what: str = "sample"):
        preview = ", ".join(sorted(orphan_ids)[:5])
        more = "" if len(orphan_ids) <= 5 else f" (+{len(orphan_ids) - 5} more)"
        super().__init__(f"{len(orphan_ids)} trace(s) have no matching {what}: {preview}{more}")
        self.orphan_ids = tuple(sorted(orphan_ids))


class EmptyInputError(Exception):
    """An operation that needs at least one record received none."""


class BuildMode(enum.Enum):
    STL_QA = "StlQa"
    STL_CR = "StlCr"
    STL_ALL = "StlAll"
    MTL_CR = "MtlCr"
    MTL_ALL = "MtlAll"

    @property
    def is_multi_task(self) -> bool:
        return self in (BuildMode.MTL_CR, BuildMode.MTL_ALL)

    @property
    def correct_only(self) -> bool:
        return self in (BuildMode.STL_CR, BuildMode.MTL_CR)


class ReasoningSource(enum.Enum):
    ORIGINAL = "Original"
    REFINED = "Refined"


ANSWER_SEPARATOR = "\n###Answer: "


@dataclass(frozen=True)
class BuildConfig:
    mode: BuildMode
    cr_fraction: float = 1.0
    reasoning_source: ReasoningSource = ReasoningSource.REFINED
    seed: int = 0
    weights: LossWeights = field(default_factory=lambda: LossWeights(0.5, 0.5))
    drop_uncovered: bool = False

    def validate(self) -> "BuildConfig":
        if not (0.0 < self.cr_fraction <= 1.0):
            raise ValidationError("cr_fraction", f"must be in (0, 1], got {self.cr_fraction}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValidationError("seed", "must fit in an unsigned 64-bit integer")
        self.weights.validate()
        return self


@dataclass(frozen=True)
class DatasetCounts:
    total_samples: int
    cr_count: int
    ir_count: int
    qa_examples: int
    reasoning_examples: int

    def to_dict(self) -> dict:
        return {
            "total_samples": self.total_samples,
            "cr_count": self.cr_count,
            "ir_count": self.ir_count,
            "qa_examples": self.qa_examples,
            "reasoning_examples": self.reasoning_examples,
        }


@dataclass(frozen=True)
class DatasetManifest:
    mode: BuildMode
    cr_fraction: float
    seed: int
    weights: LossWeights
    counts: DatasetCounts
    source_digests: dict[str, str] = field(default_factory=dict)
    drop_uncovered: bool = False
    sample_id_digests: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "cr_fraction": self.cr_fraction,
            "seed": self.seed,
            "weights": {"alpha": self.weights.alpha, "beta": self.weights.beta},
            "counts": self.counts.to_dict(),
            "source_digests": dict(sorted(self.source_digests.items())),
            "drop_uncovered": self.drop_uncovered,
            "sample_id_digests": list(self.sample_id_digests),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DatasetManifest":
        return cls(
            mode=BuildMode(obj["mode"]),
            cr_fraction=float(obj["cr_fraction"]),
            seed=int(obj["seed"]),
            weights=LossWeights(float(obj["weights"]["alpha"]), float(obj["weights"]["beta"])),
            counts=DatasetCounts(**obj["counts"]),
            source_digests=dict(obj.get("source_digests", {})),
            drop_uncovered=bool(obj.get("drop_uncovered", False)),
            sample_id_digests=tuple(obj.get("sample_id_digests", ())),
        )


def sample_id_digest(sample_id: str) -> str:
    """Short stable fingerprint of a sample id; the manifest stores these so a
    later evaluation can refuse samples that were trained on without the
    manifest having to carry the raw ids."""
    return hashlib.sha256(sample_id.encode("utf-8")).hexdigest()[:16]


def lettered_options(options: Sequence[str]) -> str:
    """Options as "(A) first (B) second ..."."""
    return " ".join(f"({chr(ord('A') + i)}) {opt}" for i, opt in enumerate(options))


def render_input(sample: RawSample) -> str:
    """The exact model-facing input string; byte-stable by construction."""
    return f"<video>\nQuestion: {sample.question}\nOptions: {lettered_options(sample.options)}\n"


def subset_size(fraction: float, count: int) -> int:
    # ceil in exact rational arithmetic; float multiply could land on the
    # wrong side of an integer. str() recovers the decimal the user wrote
    # (shortest round-trip repr), so 0.1 means 1/10, not its binary neighbor.
    return math.ceil(Fraction(str(fraction)) * count)


def sample_cr_subset(traces: Sequence, fraction: float, seed: int) -> list:
    """Seeded subsample of ceil(fraction * n) traces.

    Traces are ordered by sample_id before the shuffle, so the selection
    depends only on the set of inputs and the seed, not their order.
    """
    if not (0.0 < fraction <= 1.0):
        raise ValidationError("fraction", f"must be in (0, 1], got {fraction}")
    if not traces:
        raise EmptyInputError("no traces to sample from")
    pool = sorted(traces, key=lambda t: t.sample_id)
    SplitMix64(seed).shuffle(pool)
    return pool[: subset_size(fraction, len(pool))]


def _texts_for(
    traces: Sequence[ReasoningTrace],
    refined: Sequence[RefinedTrace] | None,
    source: ReasoningSource,
) -> dict[str, str]:
    if source is ReasoningSource.ORIGINAL:
        return {t.sample_id: t.raw_text for t in traces}
    if refined is None:
        raise ValidationError("refined", "refined traces required when reasoning_source is Refined")
    refined_by_id = {r.sample_id: r.refined_text for r in refined}
    missing = [t.sample_id for t in traces if t.sample_id not in refined_by_id]
    if missing:
        raise JoinError(missing, what="refined trace")
    return {t.sample_id: refined_by_id[t.sample_id] for t in traces}


def build(
    samples: Sequence[RawSample],
    traces: Sequence[ReasoningTrace],
    config: BuildConfig,
    refined: Sequence[RefinedTrace] | None = None,
) -> tuple[list[TrainingExample], DatasetManifest]:
    """Produce the example list (sorted) and its manifest.

    ``refined`` supplies reasoning text when the config reads from the
    refined source; with the original source the raw trace text is used and
    ``refined`` may be omitted.
    """
    config.validate()
    by_id = {s.sample_id: s for s in samples}
    if len(by_id) != len(samples):
        raise ValidationError("samples", "duplicate sample ids")
    orphans = [t.sample_id for t in traces if t.sample_id not in by_id]
    if orphans:
        raise JoinError(orphans)
    if len({t.sample_id for t in traces}) != len(traces):
        raise ValidationError("traces", "more than one trace for a sample")

    cr_traces = [t for t in traces if t.classification is Classification.CORRECT]
    ir_count = sum(1 for t in traces if t.classification is Classification.INCORRECT)

    covered: set[str] = set()
    texts: dict[str, str] = {}
    if config.mode is not BuildMode.STL_QA:
        texts = _texts_for(traces, refined, config.reasoning_source)
        if cr_traces:
            chosen = sample_cr_subset(cr_traces, config.cr_fraction, config.seed)
            covered.update(t.sample_id for t in chosen)
        if not config.mode.correct_only:
            covered.update(
                t.sample_id for t in traces if t.classification is not Classification.CORRECT
            )

    examples: list[TrainingExample] = []
    for sample in sorted(samples, key=lambda s: s.sample_id):
        rendered = render_input(sample)
        gold = sample.gold_text
        if sample.sample_id in covered:
            text = texts[sample.sample_id]
            if config.mode.is_multi_task:
                examples.append(TrainingExample(sample.sample_id, Task.QA, rendered, gold))
                if text:
                    examples.append(
                        TrainingExample(sample.sample_id, Task.REASONING, rendered, text)
                    )
            else:
                target = f"{text}{ANSWER_SEPARATOR}{gold}" if text else gold
                examples.append(
                    TrainingExample(sample.sample_id, Task.STL_JOINT, rendered, target)
                )
        else:
            if config.drop_uncovered and config.mode is not BuildMode.STL_QA:
                continue
            task = Task.QA if config.mode.is_multi_task else Task.STL_JOINT
            examples.append(TrainingExample(sample.sample_id, task, rendered, gold))

    order = {Task.QA: 0, Task.STL_JOINT: 0, Task.REASONING: 1}
    examples.sort(key=lambda e: (e.sample_id, order[e.task]))

    reasoning_examples = sum(1 for e in examples if e.task is Task.REASONING)
    counts = DatasetCounts(
        total_samples=len(samples),
        cr_count=len(cr_traces),
        ir_count=ir_count,
        qa_examples=len(examples) - reasoning_examples,
        reasoning_examples=reasoning_examples,
    )
    manifest = DatasetManifest(
        mode=config.mode,
        cr_fraction=config.cr_fraction,
        seed=config.seed,
        weights=config.weights,
        counts=counts,
        drop_uncovered=config.drop_uncovered,
        sample_id_digests=tuple(sorted({sample_id_digest(e.sample_id) for e in examples})),
    )
    return examples, manifest


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_dataset(
    out_dir, examples: Iterable[TrainingExample], manifest: DatasetManifest
) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train.jsonl"
    with open(train_path, "w", encoding="utf-8", newline="\n") as fh:
        for ex in examples:
            fh.write(encode_line(ex))
            fh.write("\n")
    manifest_path = out / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest.to_dict(), fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    return train_path, manifest_path


def load_manifest(path) -> DatasetManifest:
    with open(path, "r", encoding="utf-8") as fh:
        return DatasetManifest.from_dict(json.load(fh))


def verify_dataset(dataset_dir) -> DatasetManifest:
    """Recount train.jsonl and check it against manifest.json.

    Raises ValidationError on any inconsistency; returns the manifest.
    """
    dataset_dir = Path(dataset_dir)
    manifest = load_manifest(dataset_dir / "manifest.json")
    examples = read_jsonl(dataset_dir / "train.jsonl", decode_example)
    reasoning = sum(1 for e in examples if e.task is Task.REASONING)
    qa = len(examples) - reasoning
    counts = manifest.counts
    if qa != counts.qa_examples:
        raise ValidationError("counts.qa_examples", f"manifest says {counts.qa_examples}, file has {qa}")
    if reasoning != counts.reasoning_examples:
        raise ValidationError(
            "counts.reasoning_examples",
            f"manifest says {counts.reasoning_examples}, file has {reasoning}",
        )
    distinct = len({e.sample_id for e in examples})
    if not manifest.drop_uncovered and distinct != counts.total_samples:
        raise ValidationError(
            "counts.total_samples",
            f"manifest says {counts.total_samples}, file covers {distinct} samples",
        )
    if manifest.drop_uncovered and distinct > counts.total_samples:
        raise ValidationError(
            "counts.total_samples", f"file covers {distinct} > {counts.total_samples} samples"
        )
    return manifest


def with_digests(manifest: DatasetManifest, digests: Mapping[str, str]) -> DatasetManifest:
    return replace(manifest, source_digests=dict(digests))
