import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptminer.corpus import (
    WORD,
    DatasetSplit,
    KgStore,
    WeakLabels,
    build_weak_labels,
    record_from_abstract,
    split_dataset,
)
from conceptminer.embedder import EmbedderConfig, QuestionTemplate, embed_tokens
from conceptminer.errors import ConfigError, DataError, TrainingDivergence
from conceptminer.head import (
    HeadParams,
    LossBreakdown,
    ProbabilityProfile,
    TrainConfig,
    compute_loss,
    enumerate_spans,
    forward,
    gradients,
    load_head_params,
    save_head_params,
    span_confidence_map,
    train_head,
)

LN2 = math.log(2.0)


def _random_params(d, seed):
    rng = np.random.default_rng(seed)
    return HeadParams(
        rng.normal(size=d), float(rng.normal()),
        rng.normal(size=d), float(rng.normal()),
        rng.normal(size=d), float(rng.normal()),
        rng.normal(size=d), float(rng.normal()),
    )


def _random_labels(n, seed):
    rng = np.random.default_rng(seed)
    start = np.zeros(n, dtype=np.int8)
    end = np.zeros(n, dtype=np.int8)
    spans = set()
    for _ in range(max(1, n // 2)):
        i = int(rng.integers(0, n))
        j = int(rng.integers(i, n))
        spans.add((i, j))
        start[i] = 1
        end[j] = 1
    return WeakLabels(start_flags=start, end_flags=end, span_flags=frozenset(spans))


# ---------------------------------------------------------------- forward

def test_zero_params_give_half_probabilities():
    emb = np.random.default_rng(0).normal(size=(6, 8))
    profile = forward(emb, HeadParams.zeros(8))
    assert np.allclose(profile.p_start, 0.5)
    assert np.allclose(profile.p_end, 0.5)


def test_large_logit_difference_saturates():
    params = HeadParams.zeros(4)
    params.start_weights = np.array([50.0, 0.0, 0.0, 0.0])
    emb = np.array([[1.0, 0.0, 0.0, 0.0]])
    profile = forward(emb, params)
    assert abs(profile.p_start[0] - 1.0) < 1e-9


def test_forward_matches_plain_softmax_reimplementation():
    # oracle: an independent two-way softmax, written the obvious way
    rng = np.random.default_rng(42)
    emb = rng.normal(size=(3, 4))
    params = _random_params(4, seed=7)
    profile = forward(emb, params)

    for i in range(3):
        pos = float(emb[i] @ params.start_weights + params.start_bias)
        neg = float(emb[i] @ params.start_weights_neg + params.start_bias_neg)
        expected = math.exp(pos) / (math.exp(pos) + math.exp(neg))
        assert abs(profile.p_start[i] - expected) < 1e-12
        pos = float(emb[i] @ params.end_weights + params.end_bias)
        neg = float(emb[i] @ params.end_weights_neg + params.end_bias_neg)
        expected = math.exp(pos) / (math.exp(pos) + math.exp(neg))
        assert abs(profile.p_end[i] - expected) < 1e-12


@given(shift=st.floats(-30, 30), seed=st.integers(0, 10_000))
@settings(max_examples=60)
def test_softmax_shift_invariance(shift, seed):
    emb = np.random.default_rng(seed).normal(size=(4, 5))
    params = _random_params(5, seed)
    base = forward(emb, params)
    shifted = _random_params(5, seed)
    shifted.start_bias += shift
    shifted.start_bias_neg += shift
    out = forward(emb, shifted)
    assert np.all(np.abs(out.p_start - base.p_start) < 1e-12)


def test_dimension_mismatch_names_both():
    with pytest.raises(DataError, match="3.*8|8.*3"):
        forward(np.zeros((2, 3)), HeadParams.zeros(8))


def test_probabilities_in_open_interval():
    emb = np.random.default_rng(3).normal(size=(5, 6))
    profile = forward(emb, _random_params(6, 1))
    assert np.all(profile.p_start > 0) and np.all(profile.p_start < 1)
    assert np.all(profile.p_end > 0) and np.all(profile.p_end < 1)


# ---------------------------------------------------------------- loss

def test_uniform_half_probability_gives_ln2():
    n = 6
    profile = ProbabilityProfile(p_start=np.full(n, 0.5), p_end=np.full(n, 0.5))
    labels = _random_labels(n, 0)
    scores = span_confidence_map(profile)
    loss = compute_loss(profile, scores, labels)
    assert abs(loss.loss_start - LN2) < 1e-9
    assert abs(loss.loss_end - LN2) < 1e-9
    # every span confidence is 1.0, so the span BCE is ln 2 as well
    assert abs(loss.loss_span - LN2) < 1e-9


def test_perfect_single_token_prediction_near_zero_loss():
    eps = 1e-9
    profile = ProbabilityProfile(p_start=np.array([1 - eps]), p_end=np.array([1 - eps]))
    labels = WeakLabels(
        start_flags=np.array([1], dtype=np.int8),
        end_flags=np.array([1], dtype=np.int8),
        span_flags=frozenset({(0, 0)}),
    )
    loss = compute_loss(profile, span_confidence_map(profile), labels)
    assert loss.total < 1e-6


def test_loss_matches_scalar_loop_oracle():
    # oracle: from-scratch scalar loops, no vectorization shared with the unit
    n = 4
    rng = np.random.default_rng(11)
    p_start = rng.uniform(0.05, 0.95, size=n)
    p_end = rng.uniform(0.05, 0.95, size=n)
    profile = ProbabilityProfile(p_start=p_start, p_end=p_end)
    labels = _random_labels(n, 5)
    alpha, beta = 0.3, 0.25
    max_len = 3

    scores = span_confidence_map(profile, max_span_length=max_len)
    loss = compute_loss(profile, scores, labels, alpha, beta)

    ls = sum(
        -(labels.start_flags[i] * math.log(p_start[i]) + (1 - labels.start_flags[i]) * math.log(1 - p_start[i]))
        for i in range(n)
    ) / n
    le = sum(
        -(labels.end_flags[j] * math.log(p_end[j]) + (1 - labels.end_flags[j]) * math.log(1 - p_end[j]))
        for j in range(n)
    ) / n
    terms = []
    for i in range(n):
        for j in range(i, n):
            if j - i >= max_len:
                continue
            q = (p_start[i] + p_end[j]) / 2
            q = min(max(q, 1e-7), 1 - 1e-7)
            y = 1.0 if (i, j) in labels.span_flags else 0.0
            terms.append(-(y * math.log(q) + (1 - y) * math.log(1 - q)))
    lspan = sum(terms) / len(terms)
    assert abs(loss.loss_start - ls) < 1e-10
    assert abs(loss.loss_end - le) < 1e-10
    assert abs(loss.loss_span - lspan) < 1e-10
    assert abs(loss.total - (alpha * ls + beta * le + (1 - alpha - beta) * lspan)) < 1e-10


def test_loss_breakdown_recomposition_enforced():
    with pytest.raises(DataError):
        LossBreakdown(1.0, 1.0, 1.0, 5.0, 0.3, 0.25)


def test_loss_length_mismatch_rejected():
    profile = ProbabilityProfile(p_start=np.full(3, 0.5), p_end=np.full(3, 0.5))
    labels = _random_labels(4, 0)
    with pytest.raises(DataError):
        compute_loss(profile, span_confidence_map(profile), labels)


def test_loss_rejects_nan_profile():
    profile = ProbabilityProfile(p_start=np.array([0.5, math.nan]), p_end=np.full(2, 0.5))
    labels = _random_labels(2, 0)
    with pytest.raises(DataError):
        compute_loss(profile, span_confidence_map(profile), labels)


def test_span_enumeration_cap():
    assert enumerate_spans(3, 16) == [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
    assert enumerate_spans(4, 2) == [(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3), (3, 3)]
    # j - i < max_span_length bounds the widest span
    assert all(j - i < 2 for i, j in enumerate_spans(10, 2))


# ---------------------------------------------------------------- gradients

def _fd_gradient(emb, params, labels, alpha, beta, max_len, h=1e-5):
    # oracle: central finite differences through the actual loss computation
    def total_at(p):
        profile = forward(emb, p)
        return compute_loss(profile, span_confidence_map(profile, max_len), labels, alpha, beta).total

    out = {}
    for name in HeadParams._VECTOR_FIELDS:
        vec = getattr(params, name)
        g = np.zeros_like(vec)
        for k in range(len(vec)):
            p2 = params.copy()
            getattr(p2, name)[k] = vec[k] + h
            plus = total_at(p2)
            getattr(p2, name)[k] = vec[k] - h
            minus = total_at(p2)
            g[k] = (plus - minus) / (2 * h)
        out[name] = g
    for name in HeadParams._SCALAR_FIELDS:
        p2 = params.copy()
        setattr(p2, name, getattr(params, name) + h)
        plus = total_at(p2)
        setattr(p2, name, getattr(params, name) - h)
        minus = total_at(p2)
        out[name] = (plus - minus) / (2 * h)
    return out


def _assert_fd_match(emb, params, labels, alpha=0.3, beta=0.25, max_len=16):
    _, grads = gradients(emb, params, labels, alpha, beta, max_len)
    fd = _fd_gradient(emb, params, labels, alpha, beta, max_len)
    for name in HeadParams._VECTOR_FIELDS:
        a, b = getattr(grads, name), fd[name]
        denom = np.maximum(np.abs(b), 1e-8)
        assert np.max(np.abs(a - b) / denom) < 1e-4, name
    for name in HeadParams._SCALAR_FIELDS:
        a, b = getattr(grads, name), fd[name]
        assert abs(a - b) / max(abs(b), 1e-8) < 1e-4, name


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(123)
    emb = rng.normal(size=(5, 8))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    _assert_fd_match(emb, _random_params(8, 9), _random_labels(5, 2))


def test_gradients_match_fd_at_several_random_points():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        n, d = 4, 6
        emb = rng.normal(size=(n, d))
        _assert_fd_match(emb, _random_params(d, seed + 100), _random_labels(n, seed))


def test_negative_pair_gradients_are_exact_negations():
    emb = np.random.default_rng(0).normal(size=(4, 5))
    _, grads = gradients(emb, _random_params(5, 3), _random_labels(4, 1))
    assert np.array_equal(grads.start_weights_neg, -grads.start_weights)
    assert np.array_equal(grads.end_weights_neg, -grads.end_weights)
    assert grads.start_bias_neg == -grads.start_bias
    assert grads.end_bias_neg == -grads.end_bias


def test_loss_start_component_ignores_end_weights():
    emb = np.random.default_rng(1).normal(size=(4, 5))
    params = _random_params(5, 4)
    labels = _random_labels(4, 3)
    profile = forward(emb, params)
    base = compute_loss(profile, span_confidence_map(profile), labels).loss_start
    perturbed = params.copy()
    perturbed.end_weights += 0.37
    perturbed.end_bias -= 1.2
    profile2 = forward(emb, perturbed)
    assert compute_loss(profile2, span_confidence_map(profile2), labels).loss_start == base


def test_saturated_empty_labels_give_zero_gradient():
    # drive every probability below both clip thresholds: the token terms are
    # masked and every span is clipped, so the learning signal vanishes
    d = 4
    params = HeadParams.zeros(d)
    params.start_weights_neg = np.full(d, 60.0)
    params.end_weights_neg = np.full(d, 60.0)
    emb = np.abs(np.random.default_rng(2).normal(size=(3, d))) + 0.5
    labels = WeakLabels(
        start_flags=np.zeros(3, dtype=np.int8),
        end_flags=np.zeros(3, dtype=np.int8),
        span_flags=frozenset(),
    )
    _, grads = gradients(emb, params, labels)
    assert grads.norm() < 1e-6


# ---------------------------------------------------------------- training

def _toy_corpus(count=24):
    # "NameK is a widget ." with gold "widget"; token identities make the
    # start/end flags linearly separable from hashed features
    nouns = ["widget", "gadget", "engine", "city"]
    records = []
    for k in range(count):
        noun = nouns[k % len(nouns)]
        records.append(
            record_from_abstract(f"e{k}", f"Name{k}", f"Name{k} is a {noun} .", WORD, [noun])
        )
    return records


def _toy_split(count=24, seed=0):
    return split_dataset(_toy_corpus(count), seed=seed, test_count=0, train_val_ratio=0.75)


def test_training_improves_validation_loss():
    split = _toy_split()
    cfg = TrainConfig(epochs=6, learning_rate=0.05, seed=1)
    embed_cfg = EmbedderConfig(dimension=64)
    params = train_head(split, cfg, embedder_config=embed_cfg)

    # compare against the zero initialization on the same validation records
    from conceptminer.head import _mean_loss, prepare_examples

    val = prepare_examples(split.validation, QuestionTemplate(), embed_cfg, keep_unlabeled=True)
    before = _mean_loss(val, HeadParams.zeros(64), cfg)
    after = _mean_loss(val, params, cfg)
    assert after.loss_start < before.loss_start
    assert after.total < before.total


def test_zero_epochs_returns_initialization():
    params = train_head(_toy_split(), TrainConfig(epochs=0), embedder_config=EmbedderConfig(dimension=32))
    zero = HeadParams.zeros(32)
    for name in HeadParams._VECTOR_FIELDS:
        assert np.array_equal(getattr(params, name), getattr(zero, name))
    for name in HeadParams._SCALAR_FIELDS:
        assert getattr(params, name) == getattr(zero, name)


def test_training_is_deterministic():
    cfg = TrainConfig(epochs=3, learning_rate=0.05, seed=9)
    embed_cfg = EmbedderConfig(dimension=48)
    a = train_head(_toy_split(), cfg, embedder_config=embed_cfg)
    b = train_head(_toy_split(), cfg, embedder_config=embed_cfg)
    for name in HeadParams._VECTOR_FIELDS:
        assert np.array_equal(getattr(a, name), getattr(b, name))
    for name in HeadParams._SCALAR_FIELDS:
        assert getattr(a, name) == getattr(b, name)


def test_training_writes_epoch_log():
    log = io.StringIO()
    train_head(
        _toy_split(12),
        TrainConfig(epochs=2, seed=0),
        embedder_config=EmbedderConfig(dimension=32),
        log_sink=log,
    )
    lines = [json.loads(l) for l in log.getvalue().splitlines()]
    assert [l["epoch"] for l in lines] == [0, 1]
    for line in lines:
        for side in ("train", "validation"):
            assert set(line[side]) == {"loss_start", "loss_end", "loss_span", "total"}


def test_divergence_raises_with_last_loss():
    with pytest.raises(TrainingDivergence) as exc:
        train_head(
            _toy_split(12),
            TrainConfig(epochs=4, learning_rate=1e308, seed=0),
            embedder_config=EmbedderConfig(dimension=32),
        )
    assert exc.value.last_loss is None or math.isfinite(exc.value.last_loss)


def test_untrainable_corpus_rejected():
    records = [record_from_abstract(f"e{k}", f"N{k}", "never matching text", WORD, ["zzz"]) for k in range(4)]
    split = DatasetSplit(train=tuple(records), validation=(), test=(), seed=0)
    with pytest.raises(DataError):
        train_head(split, TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(alpha=0.6, beta=0.5)
    with pytest.raises(ConfigError):
        TrainConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip():
    params = _random_params(16, 5)
    buf = io.StringIO()
    save_head_params(params, buf, embedder_config=EmbedderConfig(dimension=16), train_config=TrainConfig())
    buf.seek(0)
    back, question, embed_cfg = load_head_params(buf)
    for name in HeadParams._VECTOR_FIELDS:
        assert np.array_equal(getattr(back, name), getattr(params, name))
    for name in HeadParams._SCALAR_FIELDS:
        assert getattr(back, name) == getattr(params, name)
    assert question == QuestionTemplate()
    assert embed_cfg.dimension == 16


def test_checkpoint_rejects_unknown_schema():
    buf = io.StringIO(json.dumps({"schema_version": 99}))
    with pytest.raises(DataError):
        load_head_params(buf)


def test_checkpoint_rejects_dimension_mismatch():
    params = _random_params(8, 5)
    buf = io.StringIO()
    save_head_params(params, buf, embedder_config=EmbedderConfig(dimension=16))
    buf.seek(0)
    with pytest.raises(DataError):
        load_head_params(buf)
