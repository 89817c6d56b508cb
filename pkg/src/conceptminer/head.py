"""Trainable pointer head over token embeddings.

Each token gets two independent two-way softmaxes (start, end): a positive
and a negative linear scorer per side, with the positive-class probability
p = softmax(pos, neg)[0] = sigmoid(pos - neg). Span confidence is the sum of
its boundary probabilities, so it lives in [0, 2] and several overlapping
spans can score high at once.

Training minimizes
    total = alpha * loss_start + beta * loss_end + (1 - alpha - beta) * loss_span
where the token terms are mean binary cross-entropy against the weak
position flags and the span term is mean BCE of confidence/2 (clipped) over
all spans up to a length cap. Gradients are analytic; the tests pin them
against central finite differences.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from .corpus import DatasetSplit, EntityRecord, WeakLabels, build_weak_labels
from .embedder import EmbedderConfig, QuestionTemplate, embed_tokens
from .errors import ConfigError, DataError, TrainingDivergence

# clip for the token-level BCE logs; sigmoid saturates to exactly 0/1 in
# float64 beyond |logit| ~ 37, so the loss must stay finite there
_PROB_CLIP = 1e-12
# clip for the span-level BCE (confidence/2 can reach exactly 0 and 1)
SPAN_EPSILON = 1e-7

CHECKPOINT_SCHEMA_VERSION = 1


@dataclass
class HeadParams:
    """Four linear scorers: (positive, negative) x (start, end)."""

    start_weights: np.ndarray
    start_bias: float
    start_weights_neg: np.ndarray
    start_bias_neg: float
    end_weights: np.ndarray
    end_bias: float
    end_weights_neg: np.ndarray
    end_bias_neg: float

    _VECTOR_FIELDS = ("start_weights", "start_weights_neg", "end_weights", "end_weights_neg")
    _SCALAR_FIELDS = ("start_bias", "start_bias_neg", "end_bias", "end_bias_neg")

    def __post_init__(self):
        d = len(self.start_weights)
        for name in self._VECTOR_FIELDS:
            vec = getattr(self, name)
            if len(vec) != d:
                raise DataError(f"{name} has dimension {len(vec)}, expected {d}")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{name} contains non-finite entries")
        for name in self._SCALAR_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise DataError(f"{name} is non-finite")

    @property
    def dimension(self) -> int:
        return len(self.start_weights)

    @classmethod
    def zeros(cls, dimension: int) -> "HeadParams":
        if dimension <= 0:
            raise ConfigError(f"dimension must be positive, got {dimension}")
        z = lambda: np.zeros(dimension, dtype=np.float64)
        return cls(z(), 0.0, z(), 0.0, z(), 0.0, z(), 0.0)

    def copy(self) -> "HeadParams":
        return HeadParams(
            self.start_weights.copy(), self.start_bias,
            self.start_weights_neg.copy(), self.start_bias_neg,
            self.end_weights.copy(), self.end_bias,
            self.end_weights_neg.copy(), self.end_bias_neg,
        )


@dataclass(frozen=True)
class ProbabilityProfile:
    """Per-token start/end probabilities for one record."""

    p_start: np.ndarray
    p_end: np.ndarray

    def __post_init__(self):
        if len(self.p_start) != len(self.p_end):
            raise DataError("p_start and p_end must have equal length")

    @property
    def n(self) -> int:
        return len(self.p_start)


@dataclass(frozen=True)
class LossBreakdown:
    loss_start: float
    loss_end: float
    loss_span: float
    total: float
    alpha: float
    beta: float

    def __post_init__(self):
        recomposed = (
            self.alpha * self.loss_start
            + self.beta * self.loss_end
            + (1.0 - self.alpha - self.beta) * self.loss_span
        )
        if math.isfinite(self.total) and abs(recomposed - self.total) > 1e-9:
            raise DataError(f"total {self.total} does not recompose from components ({recomposed})")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.3
    beta: float = 0.25
    learning_rate: float = 1e-2
    batch_size: int = 4
    epochs: int = 2
    adam_decay1: float = 0.9
    adam_decay2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    max_span_length: int = 16

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.alpha + self.beta < 1):
            raise ConfigError(
                f"need alpha, beta > 0 and alpha + beta < 1, got alpha={self.alpha}, beta={self.beta}"
            )
        if self.batch_size < 1 or self.epochs < 0 or self.max_span_length < 1:
            raise ConfigError("batch_size and max_span_length must be >= 1, epochs >= 0")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward(embeddings: np.ndarray, params: HeadParams) -> ProbabilityProfile:
    """Positive-class probabilities of the per-token two-way softmaxes."""
    if embeddings.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got shape {embeddings.shape}")
    if embeddings.shape[1] != params.dimension:
        raise DataError(
            f"embedding dimension {embeddings.shape[1]} does not match parameter dimension {params.dimension}"
        )
    # overflow here only happens when training has already diverged; the
    # resulting NaNs are caught by the loss's finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        diff_start = embeddings @ (params.start_weights - params.start_weights_neg) + (
            params.start_bias - params.start_bias_neg
        )
        diff_end = embeddings @ (params.end_weights - params.end_weights_neg) + (
            params.end_bias - params.end_bias_neg
        )
        return ProbabilityProfile(p_start=_sigmoid(diff_start), p_end=_sigmoid(diff_end))


def enumerate_spans(n: int, max_span_length: int) -> list[tuple[int, int]]:
    """All (i, j), i <= j, spanning fewer than max_span_length extra tokens."""
    return [(i, j) for i in range(n) for j in range(i, min(i + max_span_length, n))]


def span_confidence_map(
    profile: ProbabilityProfile, max_span_length: int = 16
) -> dict[tuple[int, int], float]:
    """Confidence p_start[i] + p_end[j] for every enumerated span."""
    return {
        (i, j): float(profile.p_start[i] + profile.p_end[j])
        for i, j in enumerate_spans(profile.n, max_span_length)
    }


def _bce(p: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(p, _PROB_CLIP, 1.0 - _PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def compute_loss(
    profile: ProbabilityProfile,
    span_scores: dict[tuple[int, int], float],
    labels: WeakLabels,
    alpha: float = 0.3,
    beta: float = 0.25,
) -> LossBreakdown:
    if profile.n != labels.n:
        raise DataError(f"profile length {profile.n} does not match label length {labels.n}")
    if not (np.all(np.isfinite(profile.p_start)) and np.all(np.isfinite(profile.p_end))):
        raise DataError("probability profile contains non-finite values")
    if not span_scores:
        raise DataError("span_scores is empty")

    y_start = labels.start_flags.astype(np.float64)
    y_end = labels.end_flags.astype(np.float64)
    loss_start = _bce(profile.p_start, y_start)
    loss_end = _bce(profile.p_end, y_end)

    spans = sorted(span_scores)
    q = np.array([span_scores[s] for s in spans], dtype=np.float64) / 2.0
    q = np.clip(q, SPAN_EPSILON, 1.0 - SPAN_EPSILON)
    y_span = np.array([1.0 if s in labels.span_flags else 0.0 for s in spans])
    loss_span = float(-np.mean(y_span * np.log(q) + (1.0 - y_span) * np.log(1.0 - q)))

    total = alpha * loss_start + beta * loss_end + (1.0 - alpha - beta) * loss_span
    return LossBreakdown(loss_start, loss_end, loss_span, total, alpha, beta)


@dataclass
class HeadGradients:
    """Partial derivatives of the total loss, one entry per HeadParams field."""

    start_weights: np.ndarray
    start_bias: float
    start_weights_neg: np.ndarray
    start_bias_neg: float
    end_weights: np.ndarray
    end_bias: float
    end_weights_neg: np.ndarray
    end_bias_neg: float

    def norm(self) -> float:
        total = 0.0
        for name in HeadParams._VECTOR_FIELDS:
            total += float(np.sum(getattr(self, name) ** 2))
        for name in HeadParams._SCALAR_FIELDS:
            total += getattr(self, name) ** 2
        return math.sqrt(total)


def gradients(
    embeddings: np.ndarray,
    params: HeadParams,
    labels: WeakLabels,
    alpha: float = 0.3,
    beta: float = 0.25,
    max_span_length: int = 16,
) -> tuple[LossBreakdown, HeadGradients]:
    """Loss and its analytic gradient for one record.

    Derivative notes, per token position with logit difference z and
    probability p = sigmoid(z):
      token BCE term:  dL/dz = (p - y)/n, zero where p is clipped;
      span BCE term:   dL/dq picked up by every span using the position as a
                       boundary, times dq/dcs = 1/2 (zero where clipped),
                       times dcs/dz = p(1-p).
    dz/dweights = embeddings row; negative-pair entries are exact negations.
    """
    profile = forward(embeddings, params)
    span_scores = span_confidence_map(profile, max_span_length)
    loss = compute_loss(profile, span_scores, labels, alpha, beta)

    n = profile.n
    gamma = 1.0 - alpha - beta
    p_start, p_end = profile.p_start, profile.p_end
    y_start = labels.start_flags.astype(np.float64)
    y_end = labels.end_flags.astype(np.float64)

    in_range = lambda p: (p > _PROB_CLIP) & (p < 1.0 - _PROB_CLIP)
    dz_start = alpha * (p_start - y_start) * in_range(p_start) / n
    dz_end = beta * (p_end - y_end) * in_range(p_end) / n

    spans = enumerate_spans(n, max_span_length)
    dcs_start = np.zeros(n)
    dcs_end = np.zeros(n)
    per_span = gamma / (2.0 * len(spans))
    for i, j in spans:
        raw = (p_start[i] + p_end[j]) / 2.0
        if not (SPAN_EPSILON < raw < 1.0 - SPAN_EPSILON):
            continue
        y = 1.0 if (i, j) in labels.span_flags else 0.0
        dq = per_span * (raw - y) / (raw * (1.0 - raw))
        dcs_start[i] += dq
        dcs_end[j] += dq
    dz_start = dz_start + dcs_start * p_start * (1.0 - p_start)
    dz_end = dz_end + dcs_end * p_end * (1.0 - p_end)

    grad_start_w = embeddings.T @ dz_start
    grad_end_w = embeddings.T @ dz_end
    grads = HeadGradients(
        start_weights=grad_start_w,
        start_bias=float(np.sum(dz_start)),
        start_weights_neg=-grad_start_w,
        start_bias_neg=-float(np.sum(dz_start)),
        end_weights=grad_end_w,
        end_bias=float(np.sum(dz_end)),
        end_weights_neg=-grad_end_w,
        end_bias_neg=-float(np.sum(dz_end)),
    )
    return loss, grads


@dataclass
class _AdamState:
    first: dict
    second: dict
    step: int = 0

    @classmethod
    def for_params(cls, params: HeadParams) -> "_AdamState":
        first, second = {}, {}
        for name in HeadParams._VECTOR_FIELDS:
            first[name] = np.zeros(params.dimension)
            second[name] = np.zeros(params.dimension)
        for name in HeadParams._SCALAR_FIELDS:
            first[name] = 0.0
            second[name] = 0.0
        return cls(first=first, second=second)


def _adam_step(params: HeadParams, grads: HeadGradients, state: _AdamState, config: TrainConfig) -> None:
    state.step += 1
    b1, b2 = config.adam_decay1, config.adam_decay2
    correct1 = 1.0 - b1**state.step
    correct2 = 1.0 - b2**state.step
    for name in HeadParams._VECTOR_FIELDS + HeadParams._SCALAR_FIELDS:
        g = getattr(grads, name)
        m = state.first[name] = b1 * state.first[name] + (1.0 - b1) * g
        v = state.second[name] = b2 * state.second[name] + (1.0 - b2) * (g * g if isinstance(g, float) else g**2)
        update = config.learning_rate * (m / correct1) / (np.sqrt(v / correct2) + config.adam_epsilon)
        if name in HeadParams._SCALAR_FIELDS:
            setattr(params, name, getattr(params, name) - float(update))
        else:
            setattr(params, name, getattr(params, name) - update)


@dataclass
class TrainingExample:
    entity_id: str
    embeddings: np.ndarray
    labels: WeakLabels


def prepare_examples(
    records: Sequence[EntityRecord],
    question: QuestionTemplate,
    embedder_config: EmbedderConfig,
    keep_unlabeled: bool = False,
) -> list[TrainingExample]:
    """Embed and weak-label records; drops label-less records unless asked."""
    out = []
    for record in records:
        labels = build_weak_labels(record)
        if labels.is_empty() and not keep_unlabeled:
            continue
        out.append(TrainingExample(record.entity_id, embed_tokens(record, question, embedder_config), labels))
    return out


def _mean_loss(examples: Sequence[TrainingExample], params: HeadParams, config: TrainConfig) -> LossBreakdown:
    sums = np.zeros(3)
    for ex in examples:
        profile = forward(ex.embeddings, params)
        scores = span_confidence_map(profile, config.max_span_length)
        loss = compute_loss(profile, scores, ex.labels, config.alpha, config.beta)
        sums += (loss.loss_start, loss.loss_end, loss.loss_span)
    sums /= len(examples)
    total = config.alpha * sums[0] + config.beta * sums[1] + (1 - config.alpha - config.beta) * sums[2]
    return LossBreakdown(sums[0], sums[1], sums[2], total, config.alpha, config.beta)


def train_head(
    split: DatasetSplit,
    config: TrainConfig = TrainConfig(),
    question: QuestionTemplate = QuestionTemplate(),
    embedder_config: EmbedderConfig = EmbedderConfig(),
    log_sink: IO[str] | None = None,
) -> HeadParams:
    """Mini-batch Adam over the train split; returns the epoch checkpoint with
    the lowest validation total loss (train loss when validation is empty).

    Deterministic for a fixed config: zero init, seeded shuffle, fixed-order
    batch accumulation. Raises TrainingDivergence when the loss goes
    non-finite, carrying the last finite total.
    """
    train = prepare_examples(split.train, question, embedder_config)
    if not train:
        raise DataError("no trainable records: every train record has empty weak labels")
    validation = prepare_examples(split.validation, question, embedder_config, keep_unlabeled=True)
    selection = validation or train

    params = HeadParams.zeros(embedder_config.dimension)
    if config.epochs == 0:
        return params

    state = _AdamState.for_params(params)
    rng = random.Random(config.seed)
    order = list(range(len(train)))
    best: tuple[float, HeadParams] | None = None
    last_finite: float | None = None

    for epoch in range(config.epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), config.batch_size):
            batch = [train[k] for k in order[lo : lo + config.batch_size]]
            acc: HeadGradients | None = None
            for ex in batch:
                try:
                    loss, grads = gradients(
                        ex.embeddings, params, ex.labels, config.alpha, config.beta, config.max_span_length
                    )
                except DataError as exc:
                    # params blew up into non-finite probabilities
                    raise TrainingDivergence(
                        f"entity {ex.entity_id!r}: {exc}", last_loss=last_finite
                    ) from exc
                if not math.isfinite(loss.total):
                    raise TrainingDivergence(
                        f"non-finite loss on entity {ex.entity_id!r}", last_loss=last_finite
                    )
                last_finite = loss.total
                if acc is None:
                    acc = grads
                else:
                    for name in HeadParams._VECTOR_FIELDS:
                        getattr(acc, name).__iadd__(getattr(grads, name))
                    for name in HeadParams._SCALAR_FIELDS:
                        setattr(acc, name, getattr(acc, name) + getattr(grads, name))
            scale = 1.0 / len(batch)
            for name in HeadParams._VECTOR_FIELDS:
                setattr(acc, name, getattr(acc, name) * scale)
            for name in HeadParams._SCALAR_FIELDS:
                setattr(acc, name, getattr(acc, name) * scale)
            if not all(
                np.all(np.isfinite(getattr(acc, name)))
                if name in HeadParams._VECTOR_FIELDS
                else math.isfinite(getattr(acc, name))
                for name in HeadParams._VECTOR_FIELDS + HeadParams._SCALAR_FIELDS
            ):
                raise TrainingDivergence("non-finite gradient", last_loss=last_finite)
            _adam_step(params, acc, state, config)

        try:
            train_loss = _mean_loss(train, params, config)
            val_loss = _mean_loss(selection, params, config)
        except DataError as exc:
            raise TrainingDivergence(f"epoch {epoch}: {exc}", last_loss=last_finite) from exc
        if not (math.isfinite(train_loss.total) and math.isfinite(val_loss.total)):
            raise TrainingDivergence(f"non-finite loss after epoch {epoch}", last_loss=last_finite)
        last_finite = train_loss.total
        if log_sink is not None:
            log_sink.write(
                json.dumps(
                    {
                        "epoch": epoch,
                        "train": {
                            "loss_start": train_loss.loss_start,
                            "loss_end": train_loss.loss_end,
                            "loss_span": train_loss.loss_span,
                            "total": train_loss.total,
                        },
                        "validation": {
                            "loss_start": val_loss.loss_start,
                            "loss_end": val_loss.loss_end,
                            "loss_span": val_loss.loss_span,
                            "total": val_loss.total,
                        },
                    },
                    sort_keys=True,
                )
                + "\n"
            )
        if best is None or val_loss.total < best[0]:
            best = (val_loss.total, params.copy())

    return best[1]


def save_head_params(
    params: HeadParams,
    sink: IO[str],
    question: QuestionTemplate = QuestionTemplate(),
    embedder_config: EmbedderConfig = EmbedderConfig(),
    train_config: TrainConfig | None = None,
) -> None:
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "dimension": params.dimension,
        "question_template": question.template,
        "question_placeholder": question.placeholder,
        "embedder": {"dimension": embedder_config.dimension, "window": embedder_config.window},
        "train_config": None
        if train_config is None
        else {
            "alpha": train_config.alpha,
            "beta": train_config.beta,
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size,
            "epochs": train_config.epochs,
            "seed": train_config.seed,
            "max_span_length": train_config.max_span_length,
        },
        "params": {
            name: (list(getattr(params, name)) if name in HeadParams._VECTOR_FIELDS else getattr(params, name))
            for name in HeadParams._VECTOR_FIELDS + HeadParams._SCALAR_FIELDS
        },
    }
    json.dump(payload, sink, sort_keys=True)
    sink.write("\n")


def load_head_params(source: IO[str]) -> tuple[HeadParams, QuestionTemplate, EmbedderConfig]:
    payload = json.load(source)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise DataError(f"unsupported checkpoint schema_version {payload.get('schema_version')!r}")
    raw = payload["params"]
    params = HeadParams(
        **{
            name: (np.asarray(raw[name], dtype=np.float64) if name in HeadParams._VECTOR_FIELDS else float(raw[name]))
            for name in HeadParams._VECTOR_FIELDS + HeadParams._SCALAR_FIELDS
        }
    )
    question = QuestionTemplate(payload["question_template"], payload["question_placeholder"])
    embedder_config = EmbedderConfig(**payload["embedder"])
    if params.dimension != embedder_config.dimension:
        raise DataError(
            f"checkpoint parameter dimension {params.dimension} does not match embedder dimension {embedder_config.dimension}"
        )
    return params, question, embedder_config
