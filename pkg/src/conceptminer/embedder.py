"""Deterministic hashed-feature token embedder.

Stands in for a contextual encoder: each token row is the signed-bucket sum
of hashed features for the token itself, its neighbors inside a small
window, and the instantiated question string, then L2-normalized. Identical
inputs always produce identical matrices, with no model download and no RNG.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .corpus import EntityRecord
from .errors import ConfigError

DEFAULT_PLACEHOLDER = "[entity]"


@dataclass(frozen=True)
class QuestionTemplate:
    """The query half of the machine-reading framing, e.g.
    "What is the concept for [entity]?"."""

    template: str = "What is the concept for [entity]?"
    placeholder: str = DEFAULT_PLACEHOLDER

    def __post_init__(self):
        count = self.template.count(self.placeholder)
        if count != 1:
            raise ConfigError(
                f"template must contain the placeholder {self.placeholder!r} exactly once, found {count}"
            )

    def instantiate(self, entity_name: str) -> str:
        return self.template.replace(self.placeholder, entity_name)


@dataclass(frozen=True)
class EmbedderConfig:
    dimension: int = 256
    window: int = 2

    def __post_init__(self):
        if self.dimension <= 0:
            raise ConfigError(f"dimension must be positive, got {self.dimension}")
        if self.window < 0:
            raise ConfigError(f"window must be non-negative, got {self.window}")


def _hash_feature(feature: str) -> int:
    digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _bucket_sign(feature: str, dimension: int) -> tuple[int, float]:
    value = _hash_feature(feature)
    sign = 1.0 if (value >> 63) & 1 == 0 else -1.0
    return value % dimension, sign


def embed_tokens(
    record: EntityRecord,
    question: QuestionTemplate,
    config: EmbedderConfig = EmbedderConfig(),
) -> np.ndarray:
    """Embed a record's tokens as an n x d matrix of L2-normalized rows."""
    tokens = record.tokens
    n = len(tokens)
    salt_feature = "q|" + question.instantiate(record.surface_name)
    rows = np.zeros((n, config.dimension), dtype=np.float64)

    salt_bucket, salt_sign = _bucket_sign(salt_feature, config.dimension)
    for i, token in enumerate(tokens):
        bucket, sign = _bucket_sign("t|" + token, config.dimension)
        rows[i, bucket] += sign
        for offset in range(-config.window, config.window + 1):
            if offset == 0:
                continue
            k = i + offset
            if 0 <= k < n:
                bucket, sign = _bucket_sign(f"c|{offset}|{tokens[k]}", config.dimension)
                rows[i, bucket] += sign
        rows[i, salt_bucket] += salt_sign

    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    np.divide(rows, norms, out=rows, where=norms > 0)
    return rows
