"""Command-line pipeline driver.

Every subcommand is one pipeline stage; stages exchange data only through
files, so each can be rerun or tested in isolation:

    prompts        render chat prompts for a sample file
    generate       collect traces from a live chat endpoint
    mock-generate  collect traces from the built-in seeded generator
    classify       re-extract predictions and classify traces against gold
    refine         strip conclusions, scrub leaked answers, write stats
    build          assemble a training dataset (train.jsonl + manifest.json)
    stats          corpus accuracy and refinement summary
    train          fit the two-headed model on a built dataset
    sweep-beta     train across reasoning weights, write a CSV of accuracies
    eval           score a trained model on held-out samples

Options may come from an INI config file (``--config``): one section per
subcommand, keys equal to the long flag names without dashes prefixed, e.g.

    [mock-generate]
    error-rate = 0.33
    seed = 42

Explicit flags always win over the config file. Exit codes: 0 success,
1 validation or data error, 2 I/O or endpoint failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .answers import DEFAULT_RULES, OutOfRangeError, extract_predicted_answer, load_rules
from .builder import (
    BuildConfig,
    BuildMode,
    EmptyInputError,
    JoinError,
    ReasoningSource,
    build,
    load_manifest,
    sha256_file,
    verify_dataset,
    with_digests,
    write_dataset,
)
from .generation import (
    AuthError,
    EndpointError,
    GeneratorEndpoint,
    TransportFailure,
    build_request,
    generate,
    mock_generate_corpus,
)
from .metrics import (
    EmptyCorpusError,
    corpus_stats,
    eval_model,
    format_accuracy,
    refinement_stats,
    render_stats_table,
)
from .records import (
    Classification,
    DecodeError,
    LossWeights,
    RawSample,
    ReasoningTrace,
    ValidationError,
    decode_example,
    decode_refined,
    decode_trace,
    index_by_id,
    load_samples,
    read_jsonl,
    write_jsonl,
)
from .refinery import (
    DEFAULT_PATTERN_SET,
    ConclusionPatternSet,
    IdMismatchError,
    classify_prediction,
    refine_corpus,
)
from .trainer import (
    DegenerateTargetError,
    NonFiniteLossError,
    Tokenizer,
    TrainConfig,
    load_model,
    save_model,
    sweep_beta,
    train,
    write_history_csv,
    write_sweep_csv,
)

log = logging.getLogger("reasforge")


class UsageError(Exception):
    """Bad invocation: unknown flag or subcommand, missing required option."""


# --- option plumbing -----------------------------------------------------------


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_MODE_NAMES = {m.name.lower().replace("_", "-"): m for m in BuildMode}
_SOURCE_NAMES = {s.name.lower(): s for s in ReasoningSource}


def _parse_mode(text: str) -> BuildMode:
    try:
        return _MODE_NAMES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown mode {text!r}, expected one of {sorted(_MODE_NAMES)}")


def _parse_source(text: str) -> ReasoningSource:
    try:
        return _SOURCE_NAMES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown source {text!r}, expected one of {sorted(_SOURCE_NAMES)}")


def _parse_floats(text: str) -> tuple[float, ...]:
    values = tuple(float(part) for part in text.split(",") if part.strip())
    if not values:
        raise ValueError("expected a comma-separated list of numbers")
    return values


@dataclass(frozen=True)
class Opt:
    """One subcommand option; the same cast serves flags and config keys."""

    name: str
    help: str
    cast: Callable[[str], object] = str
    default: object = None
    flag: bool = False
    required: bool = False

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_TRAIN_OPTS = (
    Opt("alpha", "answer-loss weight (default: from the dataset manifest)", cast=float),
    Opt("beta", "reasoning-loss weight (default: from the dataset manifest)", cast=float),
    Opt("learning-rate", "SGD step size", cast=float, default=0.1),
    Opt("epochs", "training epochs", cast=int, default=10),
    Opt("batch", "minibatch size", cast=int, default=16),
    Opt("seed", "init and shuffle seed", cast=int, default=0),
    Opt("init-scale", "weight init half-range", cast=float, default=0.05),
    Opt("hidden", "hidden layer width", cast=int, default=64),
    Opt("max-vocab", "tokenizer vocabulary cap", cast=int, default=4096),
)

# subcommand -> (help line, option tuple)
_COMMANDS: dict[str, tuple[str, tuple[Opt, ...]]] = {
    "prompts": (
        "render chat prompts for every sample",
        (
            Opt("samples", "sample JSONL file", required=True),
            Opt("out", "output prompt JSONL file", required=True),
            Opt("frames", "frames referenced per request", cast=int, default=4),
            Opt("total-frames", "source video frame count for index spacing", cast=int),
            Opt("template-file", "override the built-in prompt template"),
        ),
    ),
    "generate": (
        "collect traces from a chat endpoint",
        (
            Opt("samples", "sample JSONL file", required=True),
            Opt("out", "output trace JSONL file", required=True),
            Opt("endpoint", "chat completions base URL", required=True),
            Opt("model", "model name sent with each request", required=True),
            Opt("frames", "frames referenced per request", cast=int, default=4),
            Opt("total-frames", "source video frame count for index spacing", cast=int),
            Opt("template-file", "override the built-in prompt template"),
            Opt("concurrency", "max in-flight requests", cast=int, default=8),
            Opt("timeout", "per-request timeout in seconds", cast=float, default=60.0),
            Opt("max-attempts", "attempts per request before giving up", cast=int, default=4),
            Opt("backoff-base", "exponential backoff base in seconds", cast=float, default=0.5),
            Opt("api-key-env", "environment variable holding the credential", default=""),
            Opt("resume", "skip sample ids already in the checkpoint", flag=True),
        ),
    ),
    "mock-generate": (
        "collect traces from the built-in seeded generator",
        (
            Opt("samples", "sample JSONL file", required=True),
            Opt("out", "output trace JSONL file", required=True),
            Opt("error-rate", "probability of a wrong prediction", cast=float, default=0.33),
            Opt("seed", "corpus seed", cast=int, default=0),
            Opt("generator-id", "generator label stored on each trace", default="mock"),
        ),
    ),
    "classify": (
        "re-extract predictions and classify traces against gold answers",
        (
            Opt("in", "input trace JSONL file", required=True),
            Opt("samples", "sample JSONL file", required=True),
            Opt("out", "output trace JSONL file", required=True),
            Opt("rules-file", "override the built-in extraction rules"),
        ),
    ),
    "refine": (
        "strip conclusion sentences and scrub leaked gold answers",
        (
            Opt("in", "input trace JSONL file", required=True),
            Opt("samples", "sample JSONL file", required=True),
            Opt("out", "output refined JSONL file", required=True),
            Opt("patterns-file", "override the built-in conclusion patterns"),
            Opt("drop-unclassifiable", "omit traces with no extracted answer", flag=True),
        ),
    ),
    "build": (
        "assemble a training dataset directory",
        (
            Opt("samples", "sample JSONL file", required=True),
            Opt("traces", "classified trace JSONL file", required=True),
            Opt("refined", "refined trace JSONL file"),
            Opt("out", "output dataset directory", required=True),
            Opt("mode", "dataset mode: " + ", ".join(sorted(_MODE_NAMES)), cast=_parse_mode,
                required=True),
            Opt("cr-fraction", "fraction of correct traces to keep", cast=float, default=1.0),
            Opt("seed", "subset sampling seed", cast=int, default=0),
            Opt("reasoning-source", "reasoning text source: refined or original",
                cast=_parse_source, default=ReasoningSource.REFINED),
            Opt("alpha", "answer-loss weight recorded in the manifest", cast=float, default=0.5),
            Opt("beta", "reasoning-loss weight recorded in the manifest", cast=float, default=0.5),
            Opt("drop-uncovered", "omit samples outside the reasoning subset", flag=True),
        ),
    ),
    "stats": (
        "report corpus accuracy and refinement counts",
        (
            Opt("traces", "classified trace JSONL file", required=True),
            Opt("samples", "sample JSONL file", required=True),
            Opt("refined", "refined trace JSONL file to include scrub counts"),
            Opt("json", "emit machine-readable JSON", flag=True),
        ),
    ),
    "train": (
        "fit the two-headed model on a built dataset",
        (
            Opt("dataset", "dataset directory from the build stage", required=True),
            Opt("samples", "sample JSONL file", required=True),
            Opt("out-dir", "directory for model.bin, vocab.json, history.csv", required=True),
        )
        + _TRAIN_OPTS,
    ),
    "sweep-beta": (
        "train once per reasoning weight and tabulate accuracy",
        (
            Opt("dataset", "dataset directory from the build stage", required=True),
            Opt("samples", "sample JSONL file", required=True),
            Opt("betas", "comma-separated reasoning weights", cast=_parse_floats,
                required=True),
            Opt("out", "output CSV file", required=True),
            Opt("eval-samples", "held-out sample JSONL file for scoring"),
        )
        + tuple(o for o in _TRAIN_OPTS if o.name not in ("alpha", "beta")),
    ),
    "eval": (
        "score a trained model on held-out samples",
        (
            Opt("model", "model dump from the train stage", required=True),
            Opt("vocab", "vocab.json from the train stage", required=True),
            Opt("samples", "held-out sample JSONL file", required=True),
            Opt("manifest", "training manifest; rejects overlap with these samples"),
            Opt("json", "emit machine-readable JSON", flag=True),
        ),
    ),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="reasforge", description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", help="INI config file with per-subcommand sections")
    parser.add_argument("--log-level", default=None,
                        help="debug, info, warning (default), or error")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for name, (help_line, opts) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_line, description=help_line)
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="INI config file with per-subcommand sections")
        p.add_argument("--log-level", default=argparse.SUPPRESS,
                       help="debug, info, warning (default), or error")
        for opt in opts:
            # SUPPRESS keeps unset flags out of the namespace so config file
            # values can fill them without clobbering explicit flags
            if opt.flag:
                p.add_argument(f"--{opt.name}", dest=opt.dest, action="store_true",
                               default=argparse.SUPPRESS, help=opt.help)
            else:
                p.add_argument(f"--{opt.name}", dest=opt.dest, type=opt.cast,
                               default=argparse.SUPPRESS, help=opt.help)
    return parser


def _load_config_section(path: str, section: str) -> configparser.SectionProxy | None:
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise OSError(f"config file not found: {path}")
    if parser.has_section(section):
        return parser[section]
    return None


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """Merge built-in defaults, config file section, and explicit flags."""
    _, opts = _COMMANDS[command]
    merged: dict = {opt.dest: (False if opt.flag else opt.default) for opt in opts}
    given = vars(args)
    config_path = given.get("config")
    if config_path:
        section = _load_config_section(config_path, command)
        if section is not None:
            by_key = {opt.name: opt for opt in opts}
            for key, raw in section.items():
                opt = by_key.get(key)
                if opt is None:
                    raise ValidationError(
                        f"[{command}] {key}", "unknown config key for this subcommand"
                    )
                try:
                    merged[opt.dest] = _parse_bool(raw) if opt.flag else opt.cast(raw)
                except ValueError as exc:
                    raise ValidationError(f"[{command}] {key}", str(exc))
    for opt in opts:
        if opt.dest in given:
            merged[opt.dest] = given[opt.dest]
    missing = [opt.name for opt in opts if opt.required and merged[opt.dest] is None]
    if missing:
        raise UsageError(f"{command}: missing required option(s): "
                         + ", ".join(f"--{name}" for name in missing))
    return merged


# --- shared loading helpers ----------------------------------------------------


def _load_corpus(samples_path, traces_path) -> tuple[list[RawSample], list[ReasoningTrace], dict]:
    samples = load_samples(samples_path)
    traces = read_jsonl(traces_path, decode_trace)
    return samples, traces, index_by_id(samples)


def _read_template(path: str | None) -> str | None:
    if path is None:
        return None
    return Path(path).read_text(encoding="utf-8")


def _tally_line(traces: Sequence[ReasoningTrace]) -> str:
    tally = Counter(t.classification for t in traces)
    return (f"correct {tally[Classification.CORRECT]}, "
            f"incorrect {tally[Classification.INCORRECT]}, "
            f"unclassifiable {tally[Classification.UNCLASSIFIABLE]}")


# --- subcommand handlers -------------------------------------------------------


def _cmd_prompts(o: dict) -> int:
    samples = load_samples(o["samples"])
    template = _read_template(o["template_file"])
    requests = [
        build_request(s, n_frames=o["frames"], total_frames=o["total_frames"],
                      **({"template": template} if template is not None else {}))
        for s in samples
    ]
    with open(o["out"], "w", encoding="utf-8", newline="\n") as fh:
        for request in requests:
            fh.write(json.dumps(request.to_dict(), ensure_ascii=False))
            fh.write("\n")
    print(f"wrote {len(requests)} prompts to {o['out']}")
    return 0


def _cmd_generate(o: dict) -> int:
    samples = load_samples(o["samples"])
    endpoint = GeneratorEndpoint(
        base_url=o["endpoint"],
        model_name=o["model"],
        api_key_env_var=o["api_key_env"],
        max_concurrent=o["concurrency"],
        timeout=o["timeout"],
        max_attempts=o["max_attempts"],
        backoff_base=o["backoff_base"],
    )
    template = _read_template(o["template_file"])
    kwargs = {"template": template} if template is not None else {}
    written = generate(
        samples, endpoint, o["out"],
        n_frames=o["frames"], total_frames=o["total_frames"],
        resume=o["resume"], **kwargs,
    )
    print(f"wrote {written} traces to {o['out']}")
    return 0


def _cmd_mock_generate(o: dict) -> int:
    samples = load_samples(o["samples"])
    traces = mock_generate_corpus(samples, o["error_rate"], o["seed"], o["generator_id"])
    write_jsonl(o["out"], traces)
    print(f"wrote {len(traces)} traces to {o['out']} ({_tally_line(traces)})")
    return 0


def _cmd_classify(o: dict) -> int:
    samples, traces, by_id = _load_corpus(o["samples"], o["in"])
    rules = load_rules(o["rules_file"]) if o["rules_file"] else DEFAULT_RULES
    out: list[ReasoningTrace] = []
    for trace in traces:
        sample = by_id.get(trace.sample_id)
        if sample is None:
            raise IdMismatchError(trace.sample_id, "<missing>")
        predicted, method = extract_predicted_answer(trace.raw_text, sample.options, rules)
        out.append(ReasoningTrace(
            sample_id=trace.sample_id,
            raw_text=trace.raw_text,
            predicted_index=predicted,
            extraction_method=method,
            classification=classify_prediction(predicted, sample.gold_index),
            generator_id=trace.generator_id,
        ))
    write_jsonl(o["out"], out)
    print(f"classified {len(out)} traces to {o['out']} ({_tally_line(out)})")
    return 0


def _cmd_refine(o: dict) -> int:
    samples, traces, by_id = _load_corpus(o["samples"], o["in"])
    patterns = (ConclusionPatternSet.from_file(o["patterns_file"])
                if o["patterns_file"] else DEFAULT_PATTERN_SET)
    refined, _counts = refine_corpus(
        traces, by_id, patterns, include_unclassifiable=not o["drop_unclassifiable"]
    )
    write_jsonl(o["out"], refined)
    stats = refinement_stats(refined)
    sidecar = Path(o["out"]).with_name(Path(o["out"]).name + ".stats.json")
    payload = {"traces_in": len(traces), "traces_out": len(refined), **stats.to_dict()}
    with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    removed = sum(stats.sentences_removed_per_pattern.values())
    print(f"refined {len(refined)} traces to {o['out']} "
          f"(removed {removed} sentences, scrubbed {stats.scrub_events} tokens, "
          f"{stats.traces_fully_emptied} emptied); stats in {sidecar}")
    return 0


def _cmd_build(o: dict) -> int:
    samples, traces, _ = _load_corpus(o["samples"], o["traces"])
    refined = read_jsonl(o["refined"], decode_refined) if o["refined"] else None
    mode: BuildMode = o["mode"]
    if (mode is not BuildMode.STL_QA and o["reasoning_source"] is ReasoningSource.REFINED
            and refined is None):
        raise ValidationError("refined", f"mode {mode.value} reads refined text; pass --refined")
    config = BuildConfig(
        mode=mode,
        cr_fraction=o["cr_fraction"],
        reasoning_source=o["reasoning_source"],
        seed=o["seed"],
        weights=LossWeights(o["alpha"], o["beta"]).validate(),
        drop_uncovered=o["drop_uncovered"],
    )
    examples, manifest = build(samples, traces, config, refined)
    digests = {"samples": sha256_file(o["samples"]), "traces": sha256_file(o["traces"])}
    if o["refined"]:
        digests["refined"] = sha256_file(o["refined"])
    train_path, manifest_path = write_dataset(o["out"], examples, with_digests(manifest, digests))
    counts = manifest.counts
    print(f"wrote {len(examples)} examples to {train_path} "
          f"(mode {mode.value}, qa {counts.qa_examples}, reasoning {counts.reasoning_examples}); "
          f"manifest in {manifest_path}")
    return 0


def _cmd_stats(o: dict) -> int:
    samples, traces, by_id = _load_corpus(o["samples"], o["traces"])
    refined = read_jsonl(o["refined"], decode_refined) if o["refined"] else None
    stats = corpus_stats(traces, by_id, refined)
    if o["json"]:
        print(json.dumps(stats.to_dict(), indent=2, sort_keys=True))
    else:
        sys.stdout.write(render_stats_table(stats))
    return 0


def _train_config_from(o: dict, manifest) -> TrainConfig:
    alpha, beta = o.get("alpha"), o.get("beta")
    if alpha is None and beta is None:
        weights = manifest.weights.validate()
    elif alpha is None:
        weights = LossWeights.from_beta(beta)
    elif beta is None:
        weights = LossWeights(alpha, 1.0 - alpha).validate()
    else:
        weights = LossWeights(alpha, beta).validate()
    return TrainConfig(
        weights=weights,
        learning_rate=o["learning_rate"],
        epochs=o["epochs"],
        batch=o["batch"],
        seed=o["seed"],
        init_scale=o["init_scale"],
        hidden=o["hidden"],
        max_vocab=o["max_vocab"],
    ).validate()


def _load_dataset(o: dict):
    dataset_dir = Path(o["dataset"])
    manifest = verify_dataset(dataset_dir)
    examples = read_jsonl(dataset_dir / "train.jsonl", decode_example)
    samples_by_id = index_by_id(load_samples(o["samples"]))
    return examples, samples_by_id, manifest


def _cmd_train(o: dict) -> int:
    examples, samples_by_id, manifest = _load_dataset(o)
    config = _train_config_from(o, manifest)
    model, tokenizer, history = train(examples, samples_by_id, config)
    out_dir = Path(o["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "model.bin", model, tokenizer, config)
    tokenizer.save(out_dir / "vocab.json")
    write_history_csv(out_dir / "history.csv", history)
    last = history[-1]
    print(f"trained {config.epochs} epochs on {len(examples)} examples "
          f"(alpha {config.weights.alpha}, beta {config.weights.beta}); "
          f"final loss {last.loss:.6f}, train accuracy {format_accuracy(last.eval_acc)}")
    print(f"model in {out_dir / 'model.bin'}")
    return 0


def _cmd_sweep_beta(o: dict) -> int:
    examples, samples_by_id, manifest = _load_dataset(o)
    config = TrainConfig(
        learning_rate=o["learning_rate"],
        epochs=o["epochs"],
        batch=o["batch"],
        seed=o["seed"],
        init_scale=o["init_scale"],
        hidden=o["hidden"],
        max_vocab=o["max_vocab"],
    ).validate()
    eval_fn = None
    if o["eval_samples"]:
        held_out = load_samples(o["eval_samples"])

        def eval_fn(model, tokenizer):
            return eval_model(model, tokenizer, held_out, manifest).accuracy

    rows = sweep_beta(examples, samples_by_id, o["betas"], config, eval_fn)
    write_sweep_csv(o["out"], rows)
    for beta, acc in rows:
        print(f"beta {beta} -> accuracy {format_accuracy(acc)}")
    print(f"sweep table in {o['out']}")
    return 0


def _cmd_eval(o: dict) -> int:
    tokenizer = Tokenizer.load(o["vocab"])
    model, _header = load_model(o["model"], expected_vocab_sha256=tokenizer.digest())
    samples = load_samples(o["samples"])
    manifest = load_manifest(o["manifest"]) if o["manifest"] else None
    report = eval_model(model, tokenizer, samples, manifest)
    if o["json"]:
        print(json.dumps({
            "total": report.total,
            "correct": report.correct,
            "accuracy": round(report.accuracy, 4),
        }, sort_keys=True))
    else:
        print(f"accuracy {format_accuracy(report.accuracy)} "
              f"(correct {report.correct} of {report.total})")
    return 0


_HANDLERS: dict[str, Callable[[dict], int]] = {
    "prompts": _cmd_prompts,
    "generate": _cmd_generate,
    "mock-generate": _cmd_mock_generate,
    "classify": _cmd_classify,
    "refine": _cmd_refine,
    "build": _cmd_build,
    "stats": _cmd_stats,
    "train": _cmd_train,
    "sweep-beta": _cmd_sweep_beta,
    "eval": _cmd_eval,
}

_VALIDATION_ERRORS = (
    ValidationError, DecodeError, IdMismatchError, JoinError, EmptyInputError,
    EmptyCorpusError, OutOfRangeError, DegenerateTargetError, NonFiniteLossError,
)
_IO_ERRORS = (OSError, EndpointError, AuthError, TransportFailure)


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # --help exits 0 through here
            return int(exc.code or 0)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(
            level=getattr(logging, (args.log_level or "warning").upper(), logging.WARNING)
        )
        options = _resolve(args, args.command)
        return _HANDLERS[args.command](options)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print("run 'reasforge --help' for usage", file=sys.stderr)
        return 64
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except _IO_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
