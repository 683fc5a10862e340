"""Trace generation: prompt rendering, a chat-completions client, and a mock.

The client speaks the common chat-completions JSON shape (messages array
with text and image-url content parts). Transport is an injectable callable
so tests run hermetically; the default transport uses ``requests``. Failures
are per-sample and non-fatal: after retries a sample is recorded as an empty
Unparseable trace and the batch continues. Only credential rejection aborts.

Output is written in input order through a single writer, one line per
completed sample plus a checkpoint line, so an interrupted run leaves a
clean prefix and ``resume=True`` continues it to a byte-identical file.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .answers import DEFAULT_RULES, ExtractionRule, extract_predicted_answer
from .builder import lettered_options
from .records import (
    Classification,
    ExtractionMethod,
    RawSample,
    ReasoningTrace,
    ValidationError,
    encode_line,
)
from .refinery import classify_prediction
from .rng import SplitMix64, derive_stream_seed

log = logging.getLogger(__name__)

PROMPT_TEMPLATE_VERSION = "chat-mc-v1"
PROMPT_TEMPLATE = (
    "These frames are uniformly sampled from a video. Given a question about "
    "the video, you should choose the correct answer option from a list of "
    "possible answers based on the video content and respond with the option "
    "in the format `###Answer: A'. You should also provide a detailed "
    "reasoning process explaining why the chosen answer is correct. Cite "
    "specific details from the video frames to support your answer. Explain "
    "each step of the reasoning to ensure that the answer is logical and "
    "reliable. ###Question: {question}, ###Hints: {options}."
)


def template_digest(template: str = PROMPT_TEMPLATE) -> str:
    return hashlib.sha256(template.encode("utf-8")).hexdigest()


class EndpointError(Exception):
    """The endpoint failed for one sample after all retries."""


class AuthError(Exception):
    """The endpoint rejected our credentials; retrying cannot help."""


class TransportFailure(Exception):
    """Network-level failure (timeout, refused connection); retryable."""


@dataclass(frozen=True)
class PromptRequest:
    sample_id: str
    prompt_text: str
    frame_refs: tuple[str, ...]
    n_frames: int = 4

    def __post_init__(self):
        if len(self.frame_refs) != self.n_frames:
            raise ValidationError(
                "frame_refs", f"expected {self.n_frames} refs, got {len(self.frame_refs)}"
            )

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "prompt_text": self.prompt_text,
            "frame_refs": list(self.frame_refs),
            "n_frames": self.n_frames,
        }


@dataclass(frozen=True)
class GeneratorEndpoint:
    base_url: str
    model_name: str
    api_key_env_var: str = ""
    max_concurrent: int = 8
    timeout: float = 60.0
    max_attempts: int = 4
    backoff_base: float = 0.5
    # decoding parameters passed through verbatim (temperature, top_p, ...)
    request_params: Mapping[str, object] = field(default_factory=dict)

    def validate(self) -> "GeneratorEndpoint":
        if self.max_concurrent < 1:
            raise ValidationError("max_concurrent", "must be >= 1")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts", "must be >= 1")
        return self


def render_prompt(sample: RawSample, template: str = PROMPT_TEMPLATE) -> str:
    """Template with the question and lettered options substituted.

    Plain placeholder replacement, not str.format, so templates may contain
    literal braces.
    """
    return template.replace("{question}", sample.question).replace(
        "{options}", lettered_options(sample.options)
    )


def select_frame_indices(total_frames: int, n: int) -> list[int]:
    """n uniformly spaced frame indices: i_k = floor(k * total / n)."""
    if total_frames < 1:
        raise ValidationError("total_frames", "must be >= 1")
    if n < 1:
        raise ValidationError("n", "must be >= 1")
    return [k * total_frames // n for k in range(n)]


def build_request(
    sample: RawSample,
    n_frames: int = 4,
    total_frames: int | None = None,
    template: str = PROMPT_TEMPLATE,
) -> PromptRequest:
    """Request for one sample; frames are references, never decoded pixels.

    With ``total_frames`` the refs name uniformly spaced indices into the
    source video; without it they name the first ``n_frames`` slots.
    """
    if total_frames is None:
        indices = list(range(n_frames))
    else:
        indices = select_frame_indices(total_frames, n_frames)
    refs = tuple(f"{sample.video_ref}#frame{i}" for i in indices)
    return PromptRequest(sample.sample_id, render_prompt(sample, template), refs, n_frames)


def chat_payload(request: PromptRequest, endpoint: GeneratorEndpoint) -> dict:
    content: list[dict] = [{"type": "text", "text": request.prompt_text}]
    for ref in request.frame_refs:
        content.append({"type": "image_url", "image_url": {"url": ref}})
    payload = {
        "model": endpoint.model_name,
        "messages": [{"role": "user", "content": content}],
    }
    payload.update(endpoint.request_params)
    return payload


def http_transport(endpoint: GeneratorEndpoint) -> Callable[[dict], tuple[int, object]]:
    """Default transport; returns (status_code, parsed json or text body)."""
    import requests

    headers = {"Content-Type": "application/json"}
    if endpoint.api_key_env_var:
        key = os.environ.get(endpoint.api_key_env_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"

    def send(payload: dict) -> tuple[int, object]:
        try:
            resp = requests.post(
                endpoint.base_url, json=payload, headers=headers, timeout=endpoint.timeout
            )
        except requests.RequestException as exc:
            raise TransportFailure(str(exc)) from exc
        try:
            body = resp.json()
        except ValueError:
            body = resp.text
        return resp.status_code, body

    return send


def _response_text(body: object) -> str | None:
    try:
        return body["choices"][0]["message"]["content"]
    except (TypeError, KeyError, IndexError):
        return None


def _trace_from_text(sample: RawSample, raw_text: str, generator_id: str, rules) -> ReasoningTrace:
    predicted, method = extract_predicted_answer(raw_text, sample.options, rules)
    return ReasoningTrace(
        sample_id=sample.sample_id,
        raw_text=raw_text,
        predicted_index=predicted,
        extraction_method=method,
        classification=classify_prediction(predicted, sample.gold_index),
        generator_id=generator_id,
    )


def _failure_trace(sample: RawSample, generator_id: str) -> ReasoningTrace:
    return ReasoningTrace(
        sample_id=sample.sample_id,
        raw_text="",
        predicted_index=None,
        extraction_method=ExtractionMethod.UNPARSEABLE,
        classification=Classification.UNCLASSIFIABLE,
        generator_id=generator_id,
    )


def _request_with_retries(
    sample: RawSample,
    payload: dict,
    endpoint: GeneratorEndpoint,
    transport: Callable[[dict], tuple[int, object]],
    sleep: Callable[[float], None],
    rules,
) -> ReasoningTrace:
    for attempt in range(1, endpoint.max_attempts + 1):
        status: int | None
        body: object = None
        try:
            status, body = transport(payload)
        except TransportFailure as exc:
            status = None
            log.info("sample %s attempt %d: transport failure: %s", sample.sample_id, attempt, exc)
        if status in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {status})")
        if status == 200:
            text = _response_text(body)
            if text is not None:
                if attempt > 1:
                    log.info("sample %s succeeded on attempt %d", sample.sample_id, attempt)
                return _trace_from_text(sample, text, endpoint.model_name, rules)
            log.info("sample %s attempt %d: malformed response body", sample.sample_id, attempt)
        elif status is not None and status != 429 and status < 500:
            # a definitive client error will not improve on retry
            log.warning("sample %s: non-retryable HTTP %d", sample.sample_id, status)
            return _failure_trace(sample, endpoint.model_name)
        elif status is not None:
            log.info("sample %s attempt %d: HTTP %d", sample.sample_id, attempt, status)
        if attempt < endpoint.max_attempts:
            sleep(endpoint.backoff_base * (2 ** (attempt - 1)))
    log.warning("sample %s: retries exhausted", sample.sample_id)
    return _failure_trace(sample, endpoint.model_name)


def _load_checkpoint(checkpoint_path: Path) -> list[str]:
    ids: list[str] = []
    if checkpoint_path.exists():
        with open(checkpoint_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    ids.append(json.loads(line)["sample_id"])
    return ids


def generate(
    samples: Sequence[RawSample],
    endpoint: GeneratorEndpoint,
    out_path,
    *,
    n_frames: int = 4,
    total_frames: int | None = None,
    template: str = PROMPT_TEMPLATE,
    rules: tuple[ExtractionRule, ...] = DEFAULT_RULES,
    resume: bool = False,
    transport: Callable[[dict], tuple[int, object]] | None = None,
    sleep: Callable[[float], None] = time.sleep,
    checkpoint_path=None,
) -> int:
    """Generate traces for every sample, writing JSONL as results land.

    Requests run on a pool of at most ``max_concurrent`` threads; the writer
    consumes results in input order so the output file grows as a prefix of
    the final file. Returns the number of traces written this call (resumed
    ids are skipped, never re-requested).
    """
    endpoint.validate()
    out_path = Path(out_path)
    checkpoint_path = Path(checkpoint_path) if checkpoint_path else out_path.with_suffix(
        out_path.suffix + ".checkpoint"
    )
    done: set[str] = set()
    if resume:
        done = set(_load_checkpoint(checkpoint_path))
        if not out_path.exists():
            done = set()
    elif checkpoint_path.exists():
        checkpoint_path.unlink()

    transport = transport or http_transport(endpoint)
    pending = [s for s in samples if s.sample_id not in done]
    written = 0
    mode = "a" if (resume and done) else "w"
    with ThreadPoolExecutor(max_workers=endpoint.max_concurrent) as pool:
        futures = {
            s.sample_id: pool.submit(
                _request_with_retries,
                s,
                chat_payload(build_request(s, n_frames, total_frames, template), endpoint),
                endpoint,
                transport,
                sleep,
                rules,
            )
            for s in pending
        }
        try:
            with open(out_path, mode, encoding="utf-8", newline="\n") as out_fh, open(
                checkpoint_path, mode, encoding="utf-8", newline="\n"
            ) as cp_fh:
                for s in samples:
                    if s.sample_id in done:
                        continue
                    trace = futures[s.sample_id].result()
                    out_fh.write(encode_line(trace))
                    out_fh.write("\n")
                    out_fh.flush()
                    cp_fh.write(json.dumps({"sample_id": s.sample_id}))
                    cp_fh.write("\n")
                    cp_fh.flush()
                    written += 1
        except BaseException:
            pool.shutdown(wait=False, cancel_futures=True)
            raise
    return written


# --- deterministic mock generator -------------------------------------------

_BODY_TEMPLATES = (
    "The opening frames establish the setting and the people involved.",
    "Frame {frame} shows the main subject in the middle of the action.",
    "The camera angle makes the spatial layout of the scene clear.",
    "One participant interacts with an object near the center of the view.",
    "The sequence of movements between frames suggests a deliberate activity.",
    "Background details stay constant, so the action is the focus throughout.",
    "The lighting and framing highlight what the person is handling.",
    "Across the sampled frames the activity progresses without interruption.",
)

_GOLD_TEMPLATES = (
    "At one point {gold} appears to be involved in the scene.",
    "An early frame hints at {gold} near the subject.",
    "It initially looks like {gold} plays a role in the activity.",
)

_CONCLUSION_TEMPLATES = (
    "###Answer: {letter}",
    "**Answer**: {letter}",
    "Therefore, the correct answer is {letter}.",
    "Thus, the correct answer is {letter}.",
)


def mock_generate(
    sample: RawSample, error_rate: float, seed: int, generator_id: str = "mock"
) -> ReasoningTrace:
    """Synthetic trace: 2-5 body sentences, one conclusion, seeded verdict.

    The prediction equals gold with probability 1 - error_rate. Incorrect
    traces embed the gold answer text in one body sentence so downstream
    scrubbing has something to do. Each sample draws from its own RNG
    stream, so output is independent of corpus order.
    """
    if not (0.0 <= error_rate <= 1.0):
        raise ValidationError("error_rate", f"must be in [0, 1], got {error_rate}")
    rng = SplitMix64(derive_stream_seed(seed, sample.sample_id))
    incorrect = rng.next_float() < error_rate
    if incorrect and len(sample.options) > 1:
        offset = 1 + rng.randrange(len(sample.options) - 1)
        predicted = (sample.gold_index + offset) % len(sample.options)
    else:
        predicted = sample.gold_index

    n_body = 2 + rng.randrange(4)
    sentences = []
    for i in range(n_body):
        template = _BODY_TEMPLATES[rng.randrange(len(_BODY_TEMPLATES))]
        sentences.append(template.replace("{frame}", str(i + 1)))
    if predicted != sample.gold_index:
        slot = rng.randrange(len(sentences) + 1)
        gold_sentence = _GOLD_TEMPLATES[rng.randrange(len(_GOLD_TEMPLATES))].replace(
            "{gold}", sample.gold_text
        )
        sentences.insert(slot, gold_sentence)
    letter = chr(ord("A") + predicted)
    conclusion = _CONCLUSION_TEMPLATES[rng.randrange(len(_CONCLUSION_TEMPLATES))].replace(
        "{letter}", letter
    )
    raw_text = "\n".join(sentences + [conclusion])

    extracted, method = extract_predicted_answer(raw_text, sample.options)
    return ReasoningTrace(
        sample_id=sample.sample_id,
        raw_text=raw_text,
        predicted_index=extracted,
        extraction_method=method,
        classification=classify_prediction(extracted, sample.gold_index),
        generator_id=generator_id,
    )


def mock_generate_corpus(
    samples: Sequence[RawSample], error_rate: float, seed: int, generator_id: str = "mock"
) -> list[ReasoningTrace]:
    return [mock_generate(s, error_rate, seed, generator_id) for s in samples]
