#!/usr/bin/env python3
"""End-to-end run on a synthetic corpus: train the pointer head, decode,
select, prune, and score against the generated gold — with the Hearst
baseline evaluated side by side on the same judgments."""

import argparse
import random
import sys
import time

from conceptminer.corpus import (
    KgStore,
    build_weak_labels,
    normalize_surface,
    split_dataset,
)
from conceptminer.decoder import DecodeConfig, enumerate_candidates, fixed_threshold_truncate
from conceptminer.embedder import EmbedderConfig, QuestionTemplate, embed_tokens
from conceptminer.evaluator import JudgmentStore, SystemOutput, evaluate_systems, oc_ratio
from conceptminer.head import TrainConfig, forward, train_head
from conceptminer.hearst import default_patterns, match
from conceptminer.pruner import ScoredConcept, default_rules, prune
from conceptminer.selector import (
    DROP,
    KEEP,
    ForestConfig,
    LabeledExample,
    extract_features,
    select_candidates,
    train_forest,
)
from conceptminer.synthetic import SyntheticConfig, generate


def parse_args():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--entities", type=int, default=200)
    p.add_argument("--vocab", type=int, default=50)
    p.add_argument("--nesting", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--threshold", type=float, default=0.85)
    p.add_argument("--labels", type=int, default=200, help="selector training budget")
    return p.parse_args()


def main():
    args = parse_args()
    t0 = time.monotonic()

    corpus = generate(
        SyntheticConfig(
            entity_count=args.entities,
            vocabulary_size=args.vocab,
            nesting_rate=args.nesting,
            seed=args.seed,
        )
    )
    kg = KgStore.from_pairs(corpus.kg_pairs)
    print(f"corpus: {corpus.stats}", file=sys.stderr)

    question = QuestionTemplate()
    embedder = EmbedderConfig()
    split = split_dataset(corpus.records, seed=args.seed, test_count=max(1, args.entities // 10))
    params = train_head(
        split,
        TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate, seed=args.seed),
        question,
        embedder,
    )
    print(f"head trained in {time.monotonic() - t0:.1f}s", file=sys.stderr)

    decode_cfg = DecodeConfig(threshold=args.threshold)
    candidates = {}
    for record in corpus.records:
        profile = forward(embed_tokens(record, question, embedder), params)
        candidates[record.entity_id] = tuple(
            fixed_threshold_truncate(enumerate_candidates(profile, record, decode_cfg), decode_cfg.threshold)
        )

    # Selector labels come from the weak spans; subsample to a fixed budget
    # so the run mimics a bounded annotation effort.
    examples = []
    for record in corpus.records:
        gold_spans = build_weak_labels(record, kg).span_flags
        spans = candidates[record.entity_id]
        for span in spans:
            label = KEEP if span.indices in gold_spans else DROP
            examples.append(LabeledExample(extract_features(span, spans, kg, record.language_mode), label))
    rng = random.Random(args.seed)
    if args.labels < len(examples):
        keeps = [e for e in examples if e.label == KEEP]
        drops = [e for e in examples if e.label == DROP]
        keep_n = max(1, round(args.labels * len(keeps) / len(examples)))
        examples = rng.sample(keeps, min(keep_n, len(keeps))) + rng.sample(drops, args.labels - keep_n)
    forest = train_forest(examples, ForestConfig(seed=args.seed))

    rules = default_rules()
    pipeline_concepts = {}
    for record in corpus.records:
        spans = candidates[record.entity_id]
        scored = [ScoredConcept(s.surface, vote) for s, vote in select_candidates(spans, forest, kg, record.language_mode)]
        kept, _ = prune(scored, rules, kg, record.language_mode)
        pipeline_concepts[record.entity_id] = tuple(c.surface for c in kept)

    hearst_set = default_patterns("word")
    hearst_concepts = {r.entity_id: tuple(match(r, hearst_set)) for r in corpus.records}

    # Judge against the generated gold: a prediction is correct iff its
    # normalized form is one of the entity's gold concepts.
    gold_norm = {
        r.entity_id: {normalize_surface(c, r.language_mode) for c in r.gold_concepts}
        for r in corpus.records
    }
    pairs = []
    for concepts in (pipeline_concepts, hearst_concepts):
        for entity_id, surfaces in concepts.items():
            for surface in surfaces:
                verdict = "correct" if normalize_surface(surface, "word") in gold_norm[entity_id] else "incorrect"
                pairs.append((entity_id, surface, verdict))
    judgments = JudgmentStore.from_pairs(pairs, "word")

    outputs = [
        SystemOutput("pipeline", "word", pipeline_concepts),
        SystemOutput("hearst", "word", hearst_concepts),
    ]
    reports = evaluate_systems(outputs, kg, judgments)

    total_gold = sum(len(g) for g in gold_norm.values())
    hit = sum(
        1
        for entity_id, golds in gold_norm.items()
        for g in golds
        if g in {normalize_surface(s, "word") for s in pipeline_concepts[entity_id]}
    )
    elapsed = time.monotonic() - t0

    print(f"{'system':<10} {'precision':>9} {'rel_recall':>10} {'rel_f1':>7} {'oc_ratio':>8} {'concepts':>8}")
    for report, output in zip(reports, outputs):
        row = report.as_dict()
        print(
            f"{row['system_id']:<10} "
            f"{(row['precision'] if row['precision'] is not None else float('nan')):>9.4f} "
            f"{(row['relative_recall'] if row['relative_recall'] is not None else float('nan')):>10.4f} "
            f"{(row['relative_f1'] if row['relative_f1'] is not None else float('nan')):>7.4f} "
            f"{oc_ratio(output):>8.4f} "
            f"{sum(len(c) for c in output.concepts_by_entity.values()):>8d}"
        )
    print(f"gold recall (pipeline): {hit}/{total_gold} = {hit / total_gold:.4f}")
    print(f"elapsed: {elapsed:.1f}s")


if __name__ == "__main__":
    main()
