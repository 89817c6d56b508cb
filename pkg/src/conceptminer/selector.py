"""Candidate selection: five handcrafted features and a from-scratch random
forest over them.

Features per candidate span, given the full candidate list of its record:
    confidence          the span's decoder confidence
    start_prob          probability at the span's own start token
    end_prob            probability at the span's own end token
    in_kg               1 iff the surface is a concept of anything in the KG
    contains_candidate  1 iff another candidate is a strict subspan

The forest is CART with Gini impurity: bootstrap samples, a random feature
subset per split, depth and leaf-size caps. Keep/drop comes from majority
vote with ties going to keep — the pruner downstream cleans up over-recall.
"""

from __future__ import annotations

import csv
import json
import math
import random
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

from .corpus import KgStore
from .decoder import CandidateSpan
from .errors import ConfigError, DataError, FormatError

FEATURE_NAMES = ("confidence", "start_prob", "end_prob", "in_kg", "contains_candidate")
KEEP, DROP = "keep", "drop"
FOREST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class FeatureVector:
    confidence: float
    start_prob: float
    end_prob: float
    in_kg: int
    contains_candidate: int

    def __post_init__(self):
        if abs(self.confidence - (self.start_prob + self.end_prob)) > 1e-12:
            raise DataError("confidence must equal start_prob + end_prob")
        if self.in_kg not in (0, 1) or self.contains_candidate not in (0, 1):
            raise DataError("in_kg and contains_candidate must be 0/1 flags")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (
            self.confidence,
            self.start_prob,
            self.end_prob,
            float(self.in_kg),
            float(self.contains_candidate),
        )


@dataclass(frozen=True)
class LabeledExample:
    features: FeatureVector
    label: str
    provenance: str = ""

    def __post_init__(self):
        if self.label not in (KEEP, DROP):
            raise DataError(f"label must be {KEEP!r} or {DROP!r}, got {self.label!r}")


def extract_features(
    candidate: CandidateSpan,
    all_candidates: Sequence[CandidateSpan],
    kg: KgStore,
    language_mode: str,
) -> FeatureVector:
    """Feature vector for one candidate against its record's candidate list."""
    if candidate not in all_candidates:
        raise DataError(f"candidate {candidate.indices} not in the candidate list")
    contains = 0
    for other in all_candidates:
        if other.indices == candidate.indices:
            continue
        if other.start_index >= candidate.start_index and other.end_index <= candidate.end_index:
            contains = 1
            break
    return FeatureVector(
        confidence=candidate.confidence,
        start_prob=candidate.start_prob,
        end_prob=candidate.end_prob,
        in_kg=1 if kg.has_surface(candidate.surface, language_mode) else 0,
        contains_candidate=contains,
    )


@dataclass(frozen=True)
class ForestConfig:
    tree_count: int = 50
    max_depth: int = 12
    min_leaf: int = 2
    features_per_split: int = 2
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ConfigError(f"tree_count must be >= 1, got {self.tree_count}")
        if self.max_depth < 1 or self.min_leaf < 1:
            raise ConfigError("max_depth and min_leaf must be >= 1")
        if not (1 <= self.features_per_split <= len(FEATURE_NAMES)):
            raise ConfigError(
                f"features_per_split must be in [1, {len(FEATURE_NAMES)}], got {self.features_per_split}"
            )


# tree nodes as plain dicts so the JSON checkpoint is the natural form:
# {"kind": "split", "feature": k, "threshold": t, "left": ..., "right": ...}
# {"kind": "leaf", "keep_count": a, "drop_count": b}


def _gini(keep: int, drop: int) -> float:
    total = keep + drop
    if total == 0:
        return 0.0
    pk = keep / total
    return 1.0 - pk * pk - (1.0 - pk) * (1.0 - pk)


def _leaf(labels: Sequence[int], indices: Sequence[int]) -> dict:
    keep = sum(labels[i] for i in indices)
    return {"kind": "leaf", "keep_count": keep, "drop_count": len(indices) - keep}


def _best_split(rows, labels, indices, feature_ids, min_leaf):
    """Exhaustive threshold search over the allowed features; thresholds are
    midpoints between consecutive distinct values. Returns the split with the
    largest Gini decrease, or None."""
    total = len(indices)
    keep_total = sum(labels[i] for i in indices)
    parent = _gini(keep_total, total - keep_total)
    best = None
    for feat in feature_ids:
        ordered = sorted(indices, key=lambda i: rows[i][feat])
        keep_left = 0
        for rank in range(1, total):
            keep_left += labels[ordered[rank - 1]]
            left_val = rows[ordered[rank - 1]][feat]
            right_val = rows[ordered[rank]][feat]
            if left_val == right_val:
                continue
            n_left = rank
            n_right = total - rank
            if n_left < min_leaf or n_right < min_leaf:
                continue
            keep_right = keep_total - keep_left
            decrease = parent - (
                n_left / total * _gini(keep_left, n_left - keep_left)
                + n_right / total * _gini(keep_right, n_right - keep_right)
            )
            key = (decrease, -feat, -(left_val + right_val) / 2.0)
            if best is None or key > best[0]:
                best = (key, feat, (left_val + right_val) / 2.0)
    if best is None or best[0][0] <= 1e-15:
        return None
    return best[1], best[2], best[0][0]


def _grow(rows, labels, indices, depth, config, rng, stats):
    keep = sum(labels[i] for i in indices)
    if keep == 0 or keep == len(indices) or depth >= config.max_depth or len(indices) < 2 * config.min_leaf:
        return _leaf(labels, indices)
    feature_ids = sorted(rng.sample(range(len(FEATURE_NAMES)), config.features_per_split))
    found = _best_split(rows, labels, indices, feature_ids, config.min_leaf)
    if found is None:
        return _leaf(labels, indices)
    feat, threshold, decrease = found
    stats.append((feat, len(indices), decrease))
    left = [i for i in indices if rows[i][feat] <= threshold]
    right = [i for i in indices if rows[i][feat] > threshold]
    return {
        "kind": "split",
        "feature": feat,
        "threshold": threshold,
        "left": _grow(rows, labels, left, depth + 1, config, rng, stats),
        "right": _grow(rows, labels, right, depth + 1, config, rng, stats),
    }


@dataclass
class RandomForest:
    trees: list[dict]
    config: ForestConfig
    # per tree: list of (feature, node_size, gini_decrease) in growth order
    split_stats: list[list[tuple[int, int, float]]] = field(default_factory=list)
    training_size: int = 0


def train_forest(examples: Sequence[LabeledExample], config: ForestConfig = ForestConfig()) -> RandomForest:
    if not examples:
        raise DataError("no training examples")
    labels = [1 if ex.label == KEEP else 0 for ex in examples]
    if len(set(labels)) < 2:
        raise DataError("degenerate labels: need at least one example of each class")
    rows = [ex.features.as_tuple() for ex in examples]

    trees, all_stats = [], []
    n = len(rows)
    for t in range(config.tree_count):
        rng = random.Random(f"{config.seed}:{t}")
        if config.bootstrap:
            indices = [rng.randrange(n) for _ in range(n)]
        else:
            indices = list(range(n))
        stats: list[tuple[int, int, float]] = []
        trees.append(_grow(rows, labels, indices, 0, config, rng, stats))
        all_stats.append(stats)
    return RandomForest(trees=trees, config=config, split_stats=all_stats, training_size=n)


def _tree_vote(node: dict, fv: tuple) -> int:
    while node["kind"] == "split":
        node = node["left"] if fv[node["feature"]] <= node["threshold"] else node["right"]
    # leaf ties lean keep, like the forest-level vote
    return 1 if node["keep_count"] >= node["drop_count"] else 0


def predict(forest: RandomForest, features: FeatureVector) -> tuple[str, float]:
    """Majority vote over trees: (label, keep-vote fraction); ties keep."""
    if not forest.trees:
        raise DataError("forest has no trees")
    fv = features.as_tuple()
    keep_votes = sum(_tree_vote(tree, fv) for tree in forest.trees)
    fraction = keep_votes / len(forest.trees)
    return (KEEP if fraction >= 0.5 else DROP), fraction


def feature_importance(forest: RandomForest) -> dict[str, float]:
    """Mean over trees of sample-weighted Gini decrease per feature, normalized."""
    if not forest.trees:
        raise DataError("forest has no trees")
    if all(not stats for stats in forest.split_stats):
        raise DataError("no splits: every tree is a single leaf")
    totals = [0.0] * len(FEATURE_NAMES)
    for stats in forest.split_stats:
        for feat, node_size, decrease in stats:
            totals[feat] += (node_size / forest.training_size) * decrease
    scale = sum(totals)
    return {name: totals[k] / scale for k, name in enumerate(FEATURE_NAMES)}


# ---------------------------------------------------------------- wire formats

def write_examples_csv(examples: Iterable[LabeledExample], sink: IO[str]) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(FEATURE_NAMES + ("label", "provenance"))
    for ex in examples:
        writer.writerow(ex.features.as_tuple() + (ex.label, ex.provenance))


def load_examples_csv(source: IO[str]) -> list[LabeledExample]:
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise FormatError("empty examples file")
    expected = list(FEATURE_NAMES + ("label", "provenance"))
    if header != expected:
        raise FormatError(f"bad header {header!r}, expected {expected!r}", line_number=1)
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 7:
            raise FormatError(f"expected 7 columns, got {len(row)}", line_number=lineno)
        try:
            fv = FeatureVector(
                confidence=float(row[0]),
                start_prob=float(row[1]),
                end_prob=float(row[2]),
                in_kg=int(row[3].partition(".")[0] or 0),
                contains_candidate=int(row[4].partition(".")[0] or 0),
            )
            out.append(LabeledExample(features=fv, label=row[5], provenance=row[6]))
        except (ValueError, DataError) as exc:
            raise FormatError(str(exc), line_number=lineno) from exc
    return out


def save_forest(forest: RandomForest, sink: IO[str]) -> None:
    json.dump(
        {
            "schema_version": FOREST_SCHEMA_VERSION,
            "feature_names": list(FEATURE_NAMES),
            "config": {
                "tree_count": forest.config.tree_count,
                "max_depth": forest.config.max_depth,
                "min_leaf": forest.config.min_leaf,
                "features_per_split": forest.config.features_per_split,
                "bootstrap": forest.config.bootstrap,
                "seed": forest.config.seed,
            },
            "training_size": forest.training_size,
            "split_stats": forest.split_stats,
            "trees": forest.trees,
        },
        sink,
        sort_keys=True,
    )
    sink.write("\n")


def load_forest(source: IO[str]) -> RandomForest:
    payload = json.load(source)
    if payload.get("schema_version") != FOREST_SCHEMA_VERSION:
        raise DataError(f"unsupported forest schema_version {payload.get('schema_version')!r}")
    if payload.get("feature_names") != list(FEATURE_NAMES):
        raise DataError("forest was trained on a different feature set")
    return RandomForest(
        trees=payload["trees"],
        config=ForestConfig(**payload["config"]),
        split_stats=[[tuple(s) for s in stats] for stats in payload["split_stats"]],
        training_size=payload["training_size"],
    )


def select_candidates(
    candidates: Sequence[CandidateSpan],
    forest: RandomForest,
    kg: KgStore,
    language_mode: str,
) -> list[tuple[CandidateSpan, float]]:
    """Apply the forest to one record's candidates; returns kept spans with
    their keep-vote fractions, in the input order."""
    kept = []
    for candidate in candidates:
        fv = extract_features(candidate, candidates, kg, language_mode)
        label, fraction = predict(forest, fv)
        if label == KEEP:
            kept.append((candidate, fraction))
    return kept
