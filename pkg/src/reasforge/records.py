"""Domain records shared by every pipeline stage, plus the JSONL wire codec.

Wire format: UTF-8 JSON Lines, one object per line, LF terminators. Keys are
emitted in a fixed order per record type (the order listed in the
``_FIELDS`` tables below), optional fields are emitted as ``null`` rather
than omitted, so re-encoding a decoded record is byte-identical. Decoding is
strict by default (unknown keys rejected); pass ``strict=False`` to ignore
extras from foreign producers.

All record types are immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Any, Callable, Iterable, TypeVar


class ValidationError(Exception):
    """A record violates one of its invariants. Names the offending field."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


class DecodeError(Exception):
    """A wire-format line could not be decoded into a record."""

    def __init__(self, reason: str, line: int | None = None, field_path: str = ""):
        loc = f"line {line}" if line is not None else "record"
        where = f"{loc}, field '{field_path}'" if field_path else loc
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.field_path = field_path
        self.reason = reason


class ExtractionMethod(enum.Enum):
    MARKER_PATTERN = "MarkerPattern"
    PROSE_PATTERN = "ProsePattern"
    OPTION_TEXT_MATCH = "OptionTextMatch"
    UNPARSEABLE = "Unparseable"


class Classification(enum.Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    UNCLASSIFIABLE = "Unclassifiable"


class Task(enum.Enum):
    QA = "qa"
    REASONING = "reasoning"
    STL_JOINT = "stl-joint"


MAX_OPTIONS = 8
MIN_OPTIONS = 2


@dataclass(frozen=True)
class RawSample:
    """One VideoQA item: video reference, question, options, gold answer."""

    sample_id: str
    video_ref: str
    question: str
    options: tuple[str, ...]
    gold_index: int
    category: str | None = None

    @property
    def gold_text(self) -> str:
        return self.options[self.gold_index]


@dataclass(frozen=True)
class ReasoningTrace:
    """Raw generator output for one sample, with extraction results."""

    sample_id: str
    raw_text: str
    predicted_index: int | None
    extraction_method: ExtractionMethod
    classification: Classification
    generator_id: str


@dataclass(frozen=True)
class RefinedTrace:
    """Post-refinement reasoning text plus removal provenance.

    ``removed_sentences`` pairs each dropped sentence with the 1-based id of
    the conclusion pattern that matched it. ``scrubbed_tokens`` lists tokens
    removed by ground-truth scrubbing (Incorrect traces only), in order.
    """

    sample_id: str
    refined_text: str
    removed_sentences: tuple[tuple[str, int], ...] = ()
    scrubbed_tokens: tuple[str, ...] = ()


@dataclass(frozen=True)
class TrainingExample:
    """A task-tagged input/target pair emitted into a dataset."""

    sample_id: str
    task: Task
    input_text: str
    target_text: str


@dataclass(frozen=True)
class LossWeights:
    """Weights of the two-term training objective; alpha + beta == 1."""

    alpha: float
    beta: float

    def validate(self) -> "LossWeights":
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha", f"must be in (0, 1], got {self.alpha}")
        if not (0.0 <= self.beta < 1.0):
            raise ValidationError("beta", f"must be in [0, 1), got {self.beta}")
        if abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise ValidationError("alpha", f"alpha + beta must equal 1, got {self.alpha + self.beta}")
        return self

    @classmethod
    def from_beta(cls, beta: float) -> "LossWeights":
        return cls(alpha=1.0 - beta, beta=beta).validate()


def validate_sample(sample: RawSample) -> None:
    """Raise ValidationError naming the violated field; return None if valid."""
    if not sample.sample_id:
        raise ValidationError("sample_id", "must be non-empty")
    if not isinstance(sample.options, tuple) or len(sample.options) == 0:
        raise ValidationError("options", "must be a non-empty list")
    if not (MIN_OPTIONS <= len(sample.options) <= MAX_OPTIONS):
        raise ValidationError(
            "options", f"expected {MIN_OPTIONS}..{MAX_OPTIONS} options, got {len(sample.options)}"
        )
    for i, opt in enumerate(sample.options):
        if not opt.strip():
            raise ValidationError("options", f"option {i} is empty after trimming")
    if not (0 <= sample.gold_index < len(sample.options)):
        raise ValidationError(
            "gold_index", f"{sample.gold_index} out of range for {len(sample.options)} options"
        )


def validate_trace(trace: ReasoningTrace) -> None:
    present = trace.predicted_index is not None
    if (trace.classification is Classification.UNCLASSIFIABLE) == present:
        raise ValidationError(
            "classification",
            "Unclassifiable iff predicted_index is absent",
        )


# --- wire codec -------------------------------------------------------------

_SAMPLE_FIELDS = ("sample_id", "video_ref", "question", "options", "gold_index", "category")
_TRACE_FIELDS = (
    "sample_id",
    "raw_text",
    "predicted_index",
    "extraction_method",
    "classification",
    "generator_id",
)
_REFINED_FIELDS = ("sample_id", "refined_text", "removed_sentences", "scrubbed_tokens")
_EXAMPLE_FIELDS = ("sample_id", "task", "input_text", "target_text")

R = TypeVar("R", RawSample, ReasoningTrace, RefinedTrace, TrainingExample)


def encode_record(record: RawSample | ReasoningTrace | RefinedTrace | TrainingExample) -> dict:
    """Record as a plain dict with keys in the documented wire order."""
    if isinstance(record, RawSample):
        return {
            "sample_id": record.sample_id,
            "video_ref": record.video_ref,
            "question": record.question,
            "options": list(record.options),
            "gold_index": record.gold_index,
            "category": record.category,
        }
    if isinstance(record, ReasoningTrace):
        return {
            "sample_id": record.sample_id,
            "raw_text": record.raw_text,
            "predicted_index": record.predicted_index,
            "extraction_method": record.extraction_method.value,
            "classification": record.classification.value,
            "generator_id": record.generator_id,
        }
    if isinstance(record, RefinedTrace):
        return {
            "sample_id": record.sample_id,
            "refined_text": record.refined_text,
            "removed_sentences": [[s, pid] for s, pid in record.removed_sentences],
            "scrubbed_tokens": list(record.scrubbed_tokens),
        }
    if isinstance(record, TrainingExample):
        return {
            "sample_id": record.sample_id,
            "task": record.task.value,
            "input_text": record.input_text,
            "target_text": record.target_text,
        }
    raise TypeError(f"not a wire record type: {type(record)!r}")


def encode_line(record: RawSample | ReasoningTrace | RefinedTrace | TrainingExample) -> str:
    return json.dumps(encode_record(record), ensure_ascii=False)


def _check_keys(obj: dict, fields: tuple[str, ...], strict: bool, line: int | None) -> None:
    if strict:
        unknown = set(obj) - set(fields)
        if unknown:
            raise DecodeError(f"unknown fields {sorted(unknown)}", line, sorted(unknown)[0])


def _typed(val, types) -> bool:
    # bool subclasses int; JSON true must not pass an int check
    if types is int and isinstance(val, bool):
        return False
    return isinstance(val, types)


def _req(obj: dict, key: str, types, line: int | None):
    if key not in obj or obj[key] is None:
        raise DecodeError("required field missing", line, key)
    val = obj[key]
    if not _typed(val, types):
        raise DecodeError(f"expected {getattr(types, '__name__', types)}, got {type(val).__name__}", line, key)
    return val


def _opt(obj: dict, key: str, types, line: int | None):
    val = obj.get(key)
    if val is None:
        return None
    if not _typed(val, types):
        raise DecodeError(f"expected {getattr(types, '__name__', types)}, got {type(val).__name__}", line, key)
    return val


def _enum(obj: dict, key: str, enum_cls, line: int | None):
    raw = _req(obj, key, str, line)
    try:
        return enum_cls(raw)
    except ValueError:
        raise DecodeError(
            f"not one of {[e.value for e in enum_cls]}: {raw!r}", line, key
        ) from None


def decode_sample(obj: dict, strict: bool = True, line: int | None = None) -> RawSample:
    _check_keys(obj, _SAMPLE_FIELDS, strict, line)
    options = _req(obj, "options", list, line)
    if not all(isinstance(o, str) for o in options):
        raise DecodeError("options must all be strings", line, "options")
    return RawSample(
        sample_id=_req(obj, "sample_id", str, line),
        video_ref=_req(obj, "video_ref", str, line),
        question=_req(obj, "question", str, line),
        options=tuple(options),
        gold_index=_req(obj, "gold_index", int, line),
        category=_opt(obj, "category", str, line),
    )


def decode_trace(obj: dict, strict: bool = True, line: int | None = None) -> ReasoningTrace:
    _check_keys(obj, _TRACE_FIELDS, strict, line)
    return ReasoningTrace(
        sample_id=_req(obj, "sample_id", str, line),
        raw_text=_req(obj, "raw_text", str, line),
        predicted_index=_opt(obj, "predicted_index", int, line),
        extraction_method=_enum(obj, "extraction_method", ExtractionMethod, line),
        classification=_enum(obj, "classification", Classification, line),
        generator_id=_req(obj, "generator_id", str, line),
    )


def decode_refined(obj: dict, strict: bool = True, line: int | None = None) -> RefinedTrace:
    _check_keys(obj, _REFINED_FIELDS, strict, line)
    removed_raw = _opt(obj, "removed_sentences", list, line) or []
    removed = []
    for i, pair in enumerate(removed_raw):
        if not (isinstance(pair, list) and len(pair) == 2 and isinstance(pair[0], str) and isinstance(pair[1], int)):
            raise DecodeError("expected [sentence, pattern_id] pair", line, f"removed_sentences[{i}]")
        removed.append((pair[0], pair[1]))
    scrubbed_raw = _opt(obj, "scrubbed_tokens", list, line) or []
    if not all(isinstance(t, str) for t in scrubbed_raw):
        raise DecodeError("scrubbed_tokens must all be strings", line, "scrubbed_tokens")
    return RefinedTrace(
        sample_id=_req(obj, "sample_id", str, line),
        refined_text=_req(obj, "refined_text", str, line),
        removed_sentences=tuple(removed),
        scrubbed_tokens=tuple(scrubbed_raw),
    )


def decode_example(obj: dict, strict: bool = True, line: int | None = None) -> TrainingExample:
    _check_keys(obj, _EXAMPLE_FIELDS, strict, line)
    return TrainingExample(
        sample_id=_req(obj, "sample_id", str, line),
        task=_enum(obj, "task", Task, line),
        input_text=_req(obj, "input_text", str, line),
        target_text=_req(obj, "target_text", str, line),
    )


def decode_line(text: str, decoder: Callable[..., R], strict: bool = True, line: int | None = None) -> R:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(f"invalid JSON: {exc.msg}", line) from None
    if not isinstance(obj, dict):
        raise DecodeError("expected a JSON object", line)
    return decoder(obj, strict=strict, line=line)


def read_jsonl(path, decoder: Callable[..., R], strict: bool = True) -> list[R]:
    """Decode a JSONL file; DecodeErrors carry 1-based line numbers."""
    out: list[R] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            out.append(decode_line(raw, decoder, strict=strict, line=lineno))
    return out


def write_jsonl(path, records: Iterable[Any]) -> int:
    """Write records with LF terminators; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(encode_line(rec))
            fh.write("\n")
            n += 1
    return n


def load_samples(path, strict: bool = True) -> list[RawSample]:
    """Read, validate, and uniqueness-check a samples file."""
    samples = read_jsonl(path, decode_sample, strict=strict)
    seen: set[str] = set()
    for s in samples:
        validate_sample(s)
        if s.sample_id in seen:
            raise ValidationError("sample_id", f"duplicate id {s.sample_id!r}")
        seen.add(s.sample_id)
    return samples


def index_by_id(samples: Iterable[RawSample]) -> dict[str, RawSample]:
    return {s.sample_id: s for s in samples}
