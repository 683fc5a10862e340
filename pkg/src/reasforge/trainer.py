"""Desk-scale two-headed trainer with exact closed-form gradients.

The model is a single tanh layer feeding two linear heads: an answer head
over at most ``k_max`` options and a reasoning head over the token
vocabulary. The reasoning head predicts the unigram distribution of the
refined reasoning text rather than decoding a sequence; that keeps the
two-term cross-entropy structure of multi-task training while leaving every
gradient hand-derivable and checkable against finite differences.

The multi-task loss is alpha * C_qa + beta * C_rea, exactly linear in
(alpha, beta) at fixed parameters. With beta == 0.0, or for a sample with no
reasoning target, the reasoning branch is skipped outright, so training
reduces bitwise to a QA-only loop. Batches average each term over all
samples in the batch (a missing reasoning target contributes zero to the
numerator, not a smaller denominator), which is what keeps the loss linear
in beta.

All randomness (init, epoch shuffles) comes from the package's counter-based
RNG, so training is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .builder import ANSWER_SEPARATOR
from .records import (
    LossWeights,
    RawSample,
    Task,
    TrainingExample,
    ValidationError,
)
from .rng import SplitMix64

K_MAX = 8
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
# smallest positive double; softmax entries are floored here so they stay
# strictly positive for any logits the model can produce
_TINY = 5e-324


class DegenerateTargetError(Exception):
    """A probability target summing to zero; nothing to supervise."""


class NonFiniteLossError(Exception):
    """Loss left the reals; names the batch that produced it."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


# --- tokenizer ----------------------------------------------------------------


def tokenize(text: str) -> list[str]:
    """Casefold and split on non-alphanumeric runs (underscore included)."""
    return _TOKEN_RE.findall(text.casefold())


@dataclass(frozen=True)
class Tokenizer:
    """Frozen token->id map. Out-of-vocabulary tokens are dropped."""

    vocab: Mapping[str, int]
    max_vocab: int = 4096

    @property
    def size(self) -> int:
        return len(self.vocab)

    def encode(self, text: str) -> list[int]:
        vocab = self.vocab
        return [vocab[t] for t in tokenize(text) if t in vocab]

    def ordered_tokens(self) -> list[str]:
        return [t for t, _ in sorted(self.vocab.items(), key=lambda kv: kv[1])]

    def digest(self) -> str:
        blob = json.dumps(self.ordered_tokens(), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.ordered_tokens(), fh, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path, max_vocab: int = 4096) -> "Tokenizer":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = json.load(fh)
        return cls(vocab={t: i for i, t in enumerate(tokens)}, max_vocab=max_vocab)


def build_tokenizer(texts: Iterable[str], max_vocab: int = 4096) -> Tokenizer:
    """Vocabulary by descending frequency, ties broken lexicographically."""
    counts: dict[str, int] = {}
    for text in texts:
        for tok in tokenize(text):
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_vocab]
    return Tokenizer(vocab={t: i for i, (t, _) in enumerate(ranked)}, max_vocab=max_vocab)


def bag_of_tokens(text: str, tokenizer: Tokenizer) -> np.ndarray:
    x = np.zeros(tokenizer.size, dtype=np.float64)
    for idx in tokenizer.encode(text):
        x[idx] += 1.0
    return x


def featurize(example: TrainingExample, tokenizer: Tokenizer) -> np.ndarray:
    """L1-normalized bag of input tokens; all-OOV input gives a zero vector."""
    x = bag_of_tokens(example.input_text, tokenizer)
    total = x.sum()
    if total > 0.0:
        x /= total
    return x


def unigram_distribution(text: str, tokenizer: Tokenizer) -> np.ndarray:
    """Empirical token distribution of ``text``; zero vector when no token is known."""
    x = bag_of_tokens(text, tokenizer)
    total = x.sum()
    if total > 0.0:
        x /= total
    return x


# --- model --------------------------------------------------------------------


@dataclass
class ToyModel:
    W1: np.ndarray  # (d, V)
    b1: np.ndarray  # (d,)
    W2: np.ndarray  # (k_max, d)
    b2: np.ndarray  # (k_max,)
    W3: np.ndarray  # (V, d)
    b3: np.ndarray  # (V,)

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.W1.shape[1]

    @property
    def k_max(self) -> int:
        return self.W2.shape[0]

    def params(self) -> tuple[np.ndarray, ...]:
        return (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3)

    def copy(self) -> "ToyModel":
        return ToyModel(*(p.copy() for p in self.params()))

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())


PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


def init_model(vocab_size: int, hidden: int = 64, k_max: int = K_MAX,
               seed: int = 0, init_scale: float = 0.05) -> ToyModel:
    """Uniform(-init_scale, init_scale) init, drawn in PARAM_ORDER."""
    rng = SplitMix64(seed)

    def draw(*shape):
        n = int(np.prod(shape)) if shape else 1
        u = rng.next_floats(n)
        return ((2.0 * u - 1.0) * init_scale).reshape(shape)

    return ToyModel(
        W1=draw(hidden, vocab_size),
        b1=draw(hidden),
        W2=draw(k_max, hidden),
        b2=draw(k_max),
        W3=draw(vocab_size, hidden),
        b3=draw(vocab_size),
    )


def forward(model: ToyModel, x: np.ndarray, k_options: int) -> tuple[np.ndarray, np.ndarray]:
    """(qa_logits over the first k_options, reasoning logits over the vocab)."""
    if not (1 <= k_options <= model.k_max):
        raise ValidationError("k_options", f"must be in 1..{model.k_max}, got {k_options}")
    h = np.tanh(model.W1 @ x + model.b1)
    qa_logits = (model.W2 @ h + model.b2)[:k_options]
    rea_logits = model.W3 @ h + model.b3
    return qa_logits, rea_logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    p = z / z.sum()
    return np.maximum(p, _TINY)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max()
    z = logits - m
    return z - np.log(np.exp(z).sum())


def cross_entropy(logits: np.ndarray, target_dist: np.ndarray) -> float:
    """-sum(target * log softmax(logits)), max-subtracted for stability."""
    total = float(target_dist.sum())
    if total == 0.0:
        raise DegenerateTargetError("target distribution sums to zero")
    if (target_dist < 0).any():
        raise ValidationError("target_dist", "entries must be nonnegative")
    if abs(total - 1.0) > 1e-9:
        raise ValidationError("target_dist", f"must sum to 1, got {total}")
    return float(-(target_dist @ log_softmax(logits)))


def one_hot(index: int, k: int) -> np.ndarray:
    t = np.zeros(k, dtype=np.float64)
    t[index] = 1.0
    return t


@dataclass
class Grads:
    dW1: np.ndarray
    db1: np.ndarray
    dW2: np.ndarray
    db2: np.ndarray
    dW3: np.ndarray
    db3: np.ndarray

    def tensors(self) -> tuple[np.ndarray, ...]:
        return (self.dW1, self.db1, self.dW2, self.db2, self.dW3, self.db3)


def _loss_and_grads(
    model: ToyModel,
    x: np.ndarray,
    k_options: int,
    gold_index: int,
    rea_target: np.ndarray | None,
    qa_weight: float,
    rea_weight: float,
) -> tuple[float, float, float, Grads]:
    """Shared forward/backward. The reasoning branch runs only when it can
    contribute: rea_weight exactly 0.0 or a missing target skips every
    reasoning-side operation, which is what makes beta=0 training bitwise
    equal to a QA-only loop."""
    z1 = model.W1 @ x + model.b1
    h = np.tanh(z1)
    qa_logits = (model.W2 @ h + model.b2)[:k_options]
    t_qa = one_hot(gold_index, k_options)
    c_qa = cross_entropy(qa_logits, t_qa)

    g_qa = qa_weight * (softmax(qa_logits) - t_qa)
    dW2 = np.zeros_like(model.W2)
    db2 = np.zeros_like(model.b2)
    dW2[:k_options] = np.outer(g_qa, h)
    db2[:k_options] = g_qa
    dh = model.W2[:k_options].T @ g_qa

    use_rea = rea_weight != 0.0 and rea_target is not None
    if use_rea:
        rea_logits = model.W3 @ h + model.b3
        c_rea = cross_entropy(rea_logits, rea_target)
        g_rea = rea_weight * (softmax(rea_logits) - rea_target)
        dW3 = np.outer(g_rea, h)
        db3 = g_rea
        dh = dh + model.W3.T @ g_rea
    else:
        c_rea = 0.0
        dW3 = np.zeros_like(model.W3)
        db3 = np.zeros_like(model.b3)

    dz1 = dh * (1.0 - h * h)
    grads = Grads(
        dW1=np.outer(dz1, x),
        db1=dz1,
        dW2=dW2,
        db2=db2,
        dW3=dW3,
        db3=db3,
    )
    loss = qa_weight * c_qa + rea_weight * c_rea
    return loss, c_qa, c_rea, grads


def mtl_loss(
    model: ToyModel,
    x: np.ndarray,
    k_options: int,
    gold_index: int,
    rea_target: np.ndarray | None,
    weights: LossWeights,
) -> tuple[float, float, float, Grads]:
    """Weighted two-task loss alpha*C_qa + beta*C_rea and exact gradients.

    ``rea_target`` of None drops the reasoning term (its weight contributes
    nothing). Weights are used as given; endpoint values like (0, 1) are
    legal here so linearity can be probed directly.
    """
    return _loss_and_grads(
        model, x, k_options, gold_index, rea_target, weights.alpha, weights.beta
    )


def stl_loss(
    model: ToyModel,
    x: np.ndarray,
    k_options: int,
    gold_index: int,
    rea_target: np.ndarray | None,
) -> tuple[float, float, float, Grads]:
    """Joint-target loss: unweighted C_rea + C_qa.

    The joint text decomposes into reasoning tokens and the answer; an
    answer-only target (no reasoning part) leaves pure QA cross-entropy.
    """
    return _loss_and_grads(model, x, k_options, gold_index, rea_target, 1.0, 1.0)


# --- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = field(default_factory=lambda: LossWeights(0.5, 0.5))
    learning_rate: float = 0.1
    epochs: int = 10
    batch: int = 16
    seed: int = 0
    init_scale: float = 0.05
    hidden: int = 64
    max_vocab: int = 4096

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate", "must be > 0")
        if self.epochs < 1:
            raise ValidationError("epochs", "must be >= 1")
        if self.batch < 1:
            raise ValidationError("batch", "must be >= 1")
        if not self.init_scale > 0:
            raise ValidationError("init_scale", "must be > 0")
        return self


@dataclass(frozen=True)
class TrainUnit:
    """One sample's training view: features, answer target, optional
    reasoning distribution, and which loss shape applies."""

    sample_id: str
    x: np.ndarray
    k_options: int
    gold_index: int
    rea_target: np.ndarray | None
    joint: bool  # True: single-task joint loss; False: weighted multi-task


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    c_qa: float
    c_rea: float
    eval_acc: float


def prepare_units(
    examples: Sequence[TrainingExample],
    samples_by_id: Mapping[str, RawSample],
    tokenizer: Tokenizer,
) -> list[TrainUnit]:
    """Group dataset rows into per-sample units, resolving answer targets.

    A reasoning target whose tokens are all out of vocabulary is treated as
    absent rather than an error; the sample still trains on its QA term.
    """
    qa_rows: dict[str, TrainingExample] = {}
    rea_rows: dict[str, TrainingExample] = {}
    for ex in examples:
        if ex.sample_id not in samples_by_id:
            raise ValidationError("sample_id", f"example {ex.sample_id!r} has no sample record")
        bucket = rea_rows if ex.task is Task.REASONING else qa_rows
        if ex.sample_id in bucket:
            raise ValidationError("sample_id", f"duplicate {ex.task.value} example for {ex.sample_id!r}")
        bucket[ex.sample_id] = ex
    orphan_rea = set(rea_rows) - set(qa_rows)
    if orphan_rea:
        raise ValidationError("task", f"reasoning example without qa example: {sorted(orphan_rea)[:3]}")

    units: list[TrainUnit] = []
    for sample_id in sorted(qa_rows):
        ex = qa_rows[sample_id]
        sample = samples_by_id[sample_id]
        x = featurize(ex, tokenizer)
        gold = sample.gold_index
        k = len(sample.options)
        if ex.task is Task.STL_JOINT:
            if ANSWER_SEPARATOR in ex.target_text:
                reasoning_text, answer_text = ex.target_text.rsplit(ANSWER_SEPARATOR, 1)
            else:
                reasoning_text, answer_text = "", ex.target_text
            if answer_text != sample.gold_text:
                raise ValidationError(
                    "target_text", f"answer part for {sample_id!r} does not match the gold option"
                )
            rea_target = _optional_unigram(reasoning_text, tokenizer)
            units.append(TrainUnit(sample_id, x, k, gold, rea_target, joint=True))
        else:
            if ex.target_text != sample.gold_text:
                raise ValidationError(
                    "target_text", f"qa target for {sample_id!r} does not match the gold option"
                )
            rea_ex = rea_rows.get(sample_id)
            rea_target = _optional_unigram(rea_ex.target_text, tokenizer) if rea_ex else None
            units.append(TrainUnit(sample_id, x, k, gold, rea_target, joint=False))
    return units


def _optional_unigram(text: str, tokenizer: Tokenizer) -> np.ndarray | None:
    if not text:
        return None
    dist = unigram_distribution(text, tokenizer)
    if dist.sum() == 0.0:
        return None
    return dist


def _unit_loss(model: ToyModel, unit: TrainUnit, weights: LossWeights):
    if unit.joint:
        return stl_loss(model, unit.x, unit.k_options, unit.gold_index, unit.rea_target)
    return mtl_loss(model, unit.x, unit.k_options, unit.gold_index, unit.rea_target, weights)


def accuracy_on_units(model: ToyModel, units: Sequence[TrainUnit]) -> float:
    if not units:
        return 0.0
    hits = 0
    for u in units:
        qa_logits, _ = forward(model, u.x, u.k_options)
        if int(np.argmax(qa_logits)) == u.gold_index:
            hits += 1
    return hits / len(units)


def train(
    examples: Sequence[TrainingExample],
    samples_by_id: Mapping[str, RawSample],
    config: TrainConfig,
    tokenizer: Tokenizer | None = None,
    on_step: Callable[[int, ToyModel], None] | None = None,
) -> tuple[ToyModel, Tokenizer, list[EpochMetrics]]:
    """Minibatch SGD over the dataset; bit-deterministic for a fixed config.

    The tokenizer is built from the dataset's own texts unless provided.
    History rows carry per-epoch mean loss terms and end-of-epoch accuracy
    on the training units. ``on_step`` observes the model after each batch
    update.
    """
    config.validate()
    if not examples:
        raise ValidationError("examples", "dataset is empty")
    if tokenizer is None:
        texts: list[str] = []
        for ex in examples:
            texts.append(ex.input_text)
            texts.append(ex.target_text)
        tokenizer = build_tokenizer(texts, config.max_vocab)
    units = prepare_units(examples, samples_by_id, tokenizer)
    model = init_model(
        vocab_size=tokenizer.size,
        hidden=config.hidden,
        seed=config.seed,
        init_scale=config.init_scale,
    )
    rng = SplitMix64(config.seed, counter=1 << 32)  # distinct stream from init
    lr = config.learning_rate
    history: list[EpochMetrics] = []
    step = 0
    for epoch in range(1, config.epochs + 1):
        order = list(range(len(units)))
        rng.shuffle(order)
        loss_sum = qa_sum = rea_sum = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch)):
            batch = [units[i] for i in order[start : start + config.batch]]
            acc = Grads(*(np.zeros_like(p) for p in model.params()))
            batch_loss = 0.0
            for unit in batch:
                loss, c_qa, c_rea, grads = _unit_loss(model, unit, config.weights)
                batch_loss += loss
                loss_sum += loss
                qa_sum += c_qa
                rea_sum += c_rea
                for a, g in zip(acc.tensors(), grads.tensors()):
                    a += g
            if not np.isfinite(batch_loss):
                raise NonFiniteLossError(epoch, batch_no, batch_loss)
            scale = lr / len(batch)
            for p, a in zip(model.params(), acc.tensors()):
                p -= scale * a
            step += 1
            if on_step is not None:
                on_step(step, model)
        if not model.all_finite():
            raise NonFiniteLossError(epoch, -1, float("nan"))
        n = len(units)
        history.append(
            EpochMetrics(
                epoch=epoch,
                loss=loss_sum / n,
                c_qa=qa_sum / n,
                c_rea=rea_sum / n,
                eval_acc=accuracy_on_units(model, units),
            )
        )
    return model, tokenizer, history


def write_history_csv(path, history: Sequence[EpochMetrics]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,loss,c_qa,c_rea,eval_acc\n")
        for row in history:
            fh.write(
                f"{row.epoch},{row.loss:.6f},{row.c_qa:.6f},{row.c_rea:.6f},{row.eval_acc:.4f}\n"
            )


def sweep_beta(
    examples: Sequence[TrainingExample],
    samples_by_id: Mapping[str, RawSample],
    betas: Sequence[float],
    config: TrainConfig,
    eval_fn: Callable[[ToyModel, Tokenizer], float] | None = None,
) -> list[tuple[float, float]]:
    """Train once per beta (alpha = 1 - beta), identical seeds, and report
    (beta, accuracy). ``eval_fn`` supplies held-out accuracy; without it the
    final training-set accuracy from the history is used."""
    rows: list[tuple[float, float]] = []
    for beta in betas:
        weights = LossWeights.from_beta(beta)
        run_config = replace(config, weights=weights)
        model, tokenizer, history = train(examples, samples_by_id, run_config)
        acc = eval_fn(model, tokenizer) if eval_fn else history[-1].eval_acc
        rows.append((beta, acc))
    return rows


def write_sweep_csv(path, rows: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("beta,eval_acc\n")
        for beta, acc in rows:
            fh.write(f"{beta},{acc:.4f}\n")


# --- parameter dump -----------------------------------------------------------

MODEL_FORMAT = "toymodel-f64-v1"


def save_model(path, model: ToyModel, tokenizer: Tokenizer, config: TrainConfig) -> None:
    """One file: a JSON header line, then raw little-endian float64 blocks
    in PARAM_ORDER, row-major."""
    header = {
        "format": MODEL_FORMAT,
        "order": list(PARAM_ORDER),
        "dtype": "<f8",
        "shapes": {name: list(p.shape) for name, p in zip(PARAM_ORDER, model.params())},
        "vocab_sha256": tokenizer.digest(),
        "config": {
            "alpha": config.weights.alpha,
            "beta": config.weights.beta,
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "batch": config.batch,
            "seed": config.seed,
            "init_scale": config.init_scale,
            "hidden": config.hidden,
            "max_vocab": config.max_vocab,
        },
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for p in model.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path, expected_vocab_sha256: str | None = None) -> tuple[ToyModel, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        if header.get("format") != MODEL_FORMAT:
            raise ValidationError("format", f"unsupported dump format {header.get('format')!r}")
        if expected_vocab_sha256 is not None and header["vocab_sha256"] != expected_vocab_sha256:
            raise ValidationError("vocab_sha256", "model was trained with a different vocabulary")
        blob = fh.read()
    arrays = []
    offset = 0
    for name in header["order"]:
        shape = tuple(header["shapes"][name])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape).copy()
        arrays.append(arr)
        offset += n * 8
    if offset != len(blob):
        raise ValidationError("payload", f"expected {offset} bytes, found {len(blob)}")
    return ToyModel(*arrays), header
