"""Command-line shell for the pipeline stages.

Every stage reads and writes the documented JSONL/CSV/TSV artifacts, so the
chain gen-synthetic -> build-dataset -> train-head -> decode -> select ->
prune -> evaluate is runnable stage by stage on plain files, each stage in
isolation. One JSON config file (--config) provides defaults; stage flags
override it; --seed overrides the whole seed bundle.

Errors leave with distinct exit codes and a single machine-parsable JSON
line on stderr:

  2 missing input file     3 malformed file / schema violation
  4 invalid configuration  5 data contract violation
  6 seed conflict          7 training divergence
  1 anything unexpected

Seed resolution per stage: explicit stage flag > --seed > stage seed in the
config > top-level "seed" in the config > 0. Passing --seed together with a
stage seed flag that disagrees is a conflict, not an override.
"""

from __future__ import annotations

import functools
import json
import os
import random
import sys
from pathlib import Path

import click

from . import __version__
from .corpus import (
    LANGUAGE_MODES,
    WORD,
    EntityRecord,
    KgStore,
    build_weak_labels,
    load_corpus,
    load_kg_dump,
    normalize_surface,
    split_dataset,
    split_from_manifest,
    write_corpus,
)
from .decoder import (
    CandidateRecord,
    DecodeConfig,
    enumerate_candidates,
    fixed_threshold_truncate,
    load_candidates,
    write_candidates,
)
from .embedder import EmbedderConfig, QuestionTemplate, embed_tokens
from .errors import (
    ConceptMinerError,
    ConfigError,
    DataError,
    FormatError,
    SeedConflict,
    TrainingDivergence,
)
from .evaluator import (
    JudgmentStore,
    SystemOutput,
    evaluate_systems,
    load_judgments_csv,
    load_system_output,
    system_output_lines,
    write_report,
)
from .head import TrainConfig, forward, load_head_params, save_head_params, train_head
from .hearst import default_patterns, load_patterns, match
from .pruner import ScoredConcept, decision_line, default_rules, load_rules, prune
from .selector import (
    DROP,
    KEEP,
    ForestConfig,
    LabeledExample,
    extract_features,
    load_examples_csv,
    load_forest,
    save_forest,
    select_candidates,
    train_forest,
)
from .synthetic import SyntheticConfig, generate, kg_dump_lines

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_MISSING_INPUT = 2
EXIT_FORMAT = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_SEED_CONFLICT = 6
EXIT_DIVERGENCE = 7

CONFIG_SCHEMA_VERSION = 1


class _MissingInput(ConceptMinerError):
    pass


def _fail(code: int, kind: str, message: str, **extra) -> None:
    payload = {"error": kind, "message": " ".join(str(message).split()), **extra}
    click.echo(json.dumps(payload, ensure_ascii=False, sort_keys=True), err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _MissingInput as exc:
            _fail(EXIT_MISSING_INPUT, "missing-input", str(exc))
        except FormatError as exc:
            extra = {} if exc.line_number is None else {"line_number": exc.line_number}
            _fail(EXIT_FORMAT, "format", str(exc), **extra)
        except SeedConflict as exc:
            _fail(EXIT_SEED_CONFLICT, "seed-conflict", str(exc))
        except ConfigError as exc:
            _fail(EXIT_CONFIG, "config", str(exc))
        except TrainingDivergence as exc:
            extra = {} if exc.last_loss is None else {"last_loss": exc.last_loss}
            _fail(EXIT_DIVERGENCE, "divergence", str(exc), **extra)
        except DataError as exc:
            _fail(EXIT_DATA, "data", str(exc))
        except ConceptMinerError as exc:
            _fail(EXIT_UNEXPECTED, "unexpected", str(exc))
        except OSError as exc:
            _fail(EXIT_UNEXPECTED, "io", str(exc))

    return wrapper


class PipelineConfig:
    """The --config file: defaults for paths and stage parameters."""

    def __init__(self, raw: dict, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls({}, Path.cwd())
        p = Path(path)
        if not p.is_file():
            raise _MissingInput(f"config file not found: {p}")
        try:
            raw = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"config {p}: invalid JSON: {exc.msg}") from exc
        if not isinstance(raw, dict):
            raise FormatError(f"config {p}: expected a JSON object")
        version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
        if version != CONFIG_SCHEMA_VERSION:
            raise FormatError(f"config {p}: unsupported schema_version {version!r}")
        return cls(raw, p.parent)

    def get(self, *keys, default=None):
        node = self.raw
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def path(self, *keys) -> str | None:
        value = self.get(*keys)
        if value is None:
            return None
        return str((self.base_dir / value).resolve())


def _resolve_seed(
    stage_flag: int | None,
    bundle_flag: int | None,
    cfg_stage,
    cfg_bundle,
    default: int = 0,
) -> int:
    if stage_flag is not None and bundle_flag is not None and stage_flag != bundle_flag:
        raise SeedConflict(
            f"stage seed {stage_flag} disagrees with --seed {bundle_flag}; pass one or make them equal"
        )
    for value in (stage_flag, bundle_flag, cfg_stage, cfg_bundle):
        if value is not None:
            return int(value)
    return default


def _require_input(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given: pass the flag or set it in --config")
    p = Path(path)
    if not p.is_file():
        raise _MissingInput(f"{what} not found: {p}")
    return p


def _out_path(path: str | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"no {what} given: pass the flag or set it in --config")
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _load_corpus_file(path: str | None, what: str = "corpus") -> list[EntityRecord]:
    p = _require_input(path, what)
    with open(p, "r", encoding="utf-8") as fh:
        return load_corpus(fh)


def _load_kg_file(path: str | None) -> KgStore:
    p = _require_input(path, "KG dump")
    fmt = "jsonl" if p.suffix == ".jsonl" else "tsv"
    with open(p, "r", encoding="utf-8") as fh:
        return load_kg_dump(fh, format=fmt)


def _corpus_mode(records: list[EntityRecord]) -> str:
    modes = {r.language_mode for r in records}
    if len(modes) != 1:
        raise DataError(f"corpus mixes language modes {sorted(modes)}")
    return modes.pop()


def _embedder_from_config(cfg: PipelineConfig) -> EmbedderConfig:
    return EmbedderConfig(
        dimension=int(cfg.get("embedder", "dimension", default=256)),
        window=int(cfg.get("embedder", "window", default=2)),
    )


def _question_from_config(cfg: PipelineConfig) -> QuestionTemplate:
    section = cfg.get("question", default={})
    kwargs = {}
    if "template" in section:
        kwargs["template"] = section["template"]
    if "placeholder" in section:
        kwargs["placeholder"] = section["placeholder"]
    return QuestionTemplate(**kwargs)


def _selected_line(entity_id: str, mode: str, concepts) -> str:
    return json.dumps(
        {
            "entity_id": entity_id,
            "language_mode": mode,
            "concepts": [
                {"surface": c.surface, "vote": fraction, "i": c.start_index, "j": c.end_index}
                for c, fraction in concepts
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def _load_selected(path: Path) -> list[tuple[str, str, list[dict]]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append((obj["entity_id"], obj["language_mode"], list(obj["concepts"])))
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line_number=lineno) from exc
            except KeyError as exc:
                raise FormatError(f"missing field {exc.args[0]!r}", line_number=lineno) from exc
    return out


@click.group()
@click.version_option(version=__version__, prog_name="conceptminer")
def main():
    """Multi-granular concept extraction pipeline."""


# --------------------------------------------------------------------- gen

@main.command("gen-synthetic")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--entities", type=int, default=None)
@click.option("--vocabulary-size", type=int, default=None)
@click.option("--nesting-rate", type=float, default=None)
@click.option("--kg-nested-rate", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-corpus", default=None, help="Corpus JSONL to write.")
@click.option("--out-kg", default=None, help="KG dump TSV to write.")
@_guarded
def gen_synthetic(config_path, entities, vocabulary_size, nesting_rate, kg_nested_rate, seed, out_corpus, out_kg):
    """Generate a templated corpus with known gold concepts plus its KG dump."""
    cfg = PipelineConfig.load(config_path)
    section = cfg.get("synthetic", default={})
    gen_config = SyntheticConfig(
        entity_count=entities if entities is not None else int(section.get("entities", 200)),
        vocabulary_size=vocabulary_size
        if vocabulary_size is not None
        else int(section.get("vocabulary_size", 50)),
        nesting_rate=nesting_rate if nesting_rate is not None else float(section.get("nesting_rate", 0.5)),
        kg_nested_rate=kg_nested_rate
        if kg_nested_rate is not None
        else float(section.get("kg_nested_rate", 0.1)),
        seed=_resolve_seed(None, seed, section.get("seed"), cfg.get("seed")),
    )
    corpus = generate(gen_config)
    corpus_file = _out_path(out_corpus or cfg.path("paths", "corpus"), "corpus output path")
    with open(corpus_file, "w", encoding="utf-8") as fh:
        write_corpus(corpus.records, fh)
    kg_file = _out_path(out_kg or cfg.path("paths", "kg"), "KG output path")
    with open(kg_file, "w", encoding="utf-8") as fh:
        for line in kg_dump_lines(corpus.kg_pairs):
            fh.write(line + "\n")
    click.echo(json.dumps(corpus.stats, sort_keys=True))


# ------------------------------------------------------------------- split

@main.command("build-dataset")
@click.option("--config", "config_path", default=None)
@click.option("--corpus", default=None)
@click.option("--test-count", type=int, default=None)
@click.option("--train-val-ratio", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--split-seed", type=int, default=None)
@click.option("--out", "out_path", default=None, help="Split manifest JSON to write.")
@_guarded
def build_dataset(config_path, corpus, test_count, train_val_ratio, seed, split_seed, out_path):
    """Shuffle the corpus into train/validation/test and write the manifest."""
    cfg = PipelineConfig.load(config_path)
    records = _load_corpus_file(corpus or cfg.path("paths", "corpus"))
    split = split_dataset(
        records,
        seed=_resolve_seed(split_seed, seed, cfg.get("split", "seed"), cfg.get("seed")),
        test_count=test_count if test_count is not None else int(cfg.get("split", "test_count", default=0)),
        train_val_ratio=train_val_ratio
        if train_val_ratio is not None
        else float(cfg.get("split", "train_val_ratio", default=0.9)),
    )
    manifest_file = _out_path(out_path or cfg.path("paths", "manifest"), "manifest output path")
    with open(manifest_file, "w", encoding="utf-8") as fh:
        json.dump(split.manifest(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    click.echo(
        json.dumps(
            {"train": len(split.train), "validation": len(split.validation), "test": len(split.test)},
            sort_keys=True,
        )
    )


# ------------------------------------------------------------------- train

@main.command("train-head")
@click.option("--config", "config_path", default=None)
@click.option("--corpus", default=None)
@click.option("--manifest", default=None, help="Split manifest from build-dataset; omit to split in-process.")
@click.option("--out", "out_path", default=None, help="Checkpoint JSON to write.")
@click.option("--log", "log_path", default=None, help="Per-epoch loss JSONL.")
@click.option("--epochs", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--train-seed", type=int, default=None)
@_guarded
def train_head_cmd(
    config_path, corpus, manifest, out_path, log_path, epochs, learning_rate, batch_size, alpha, beta, seed, train_seed
):
    """Train the span-pointer head and save the best-validation checkpoint."""
    cfg = PipelineConfig.load(config_path)
    records = _load_corpus_file(corpus or cfg.path("paths", "corpus"))

    if manifest or cfg.path("paths", "manifest"):
        manifest_file = _require_input(manifest or cfg.path("paths", "manifest"), "split manifest")
        with open(manifest_file, "r", encoding="utf-8") as fh:
            split = split_from_manifest(records, json.load(fh))
    else:
        split = split_dataset(
            records,
            seed=_resolve_seed(None, seed, cfg.get("split", "seed"), cfg.get("seed")),
            test_count=int(cfg.get("split", "test_count", default=0)),
            train_val_ratio=float(cfg.get("split", "train_val_ratio", default=0.9)),
        )

    section = cfg.get("train", default={})
    train_config = TrainConfig(
        alpha=alpha if alpha is not None else float(section.get("alpha", 0.3)),
        beta=beta if beta is not None else float(section.get("beta", 0.25)),
        learning_rate=learning_rate
        if learning_rate is not None
        else float(section.get("learning_rate", 1e-2)),
        batch_size=batch_size if batch_size is not None else int(section.get("batch_size", 4)),
        epochs=epochs if epochs is not None else int(section.get("epochs", 2)),
        seed=_resolve_seed(train_seed, seed, section.get("seed"), cfg.get("seed")),
        max_span_length=int(cfg.get("decode", "max_span_length", default=16)),
    )
    question = _question_from_config(cfg)
    embedder_config = _embedder_from_config(cfg)

    log_sink = open(_out_path(log_path, "log path"), "w", encoding="utf-8") if log_path else None
    try:
        params = train_head(split, train_config, question, embedder_config, log_sink=log_sink)
    finally:
        if log_sink:
            log_sink.close()

    checkpoint = _out_path(out_path or cfg.path("paths", "head"), "checkpoint output path")
    with open(checkpoint, "w", encoding="utf-8") as fh:
        save_head_params(params, fh, question, embedder_config, train_config)
    click.echo(json.dumps({"trained": len(split.train), "validation": len(split.validation)}, sort_keys=True))


# ------------------------------------------------------------------ decode

@main.command("decode")
@click.option("--config", "config_path", default=None)
@click.option("--corpus", default=None)
@click.option("--head", "head_path", default=None, help="Checkpoint from train-head.")
@click.option("--out", "out_path", default=None, help="Candidate dump JSONL.")
@click.option("--threshold", type=float, default=None)
@click.option("--max-span-length", type=int, default=None)
@click.option("--top-k", type=int, default=None)
@_guarded
def decode_cmd(config_path, corpus, head_path, out_path, threshold, max_span_length, top_k):
    """Decode candidate spans for every record above the confidence threshold."""
    cfg = PipelineConfig.load(config_path)
    records = _load_corpus_file(corpus or cfg.path("paths", "corpus"))
    checkpoint = _require_input(head_path or cfg.path("paths", "head"), "head checkpoint")
    with open(checkpoint, "r", encoding="utf-8") as fh:
        params, question, embedder_config = load_head_params(fh)

    decode_config = DecodeConfig(
        threshold=threshold if threshold is not None else float(cfg.get("decode", "threshold", default=0.85)),
        max_span_length=max_span_length
        if max_span_length is not None
        else int(cfg.get("decode", "max_span_length", default=16)),
        top_k=top_k if top_k is not None else cfg.get("decode", "top_k"),
    )

    dumped = 0
    out_file = _out_path(out_path or cfg.path("paths", "candidates"), "candidate output path")
    with open(out_file, "w", encoding="utf-8") as fh:
        for record in records:
            profile = forward(embed_tokens(record, question, embedder_config), params)
            spans = fixed_threshold_truncate(
                enumerate_candidates(profile, record, decode_config), decode_config.threshold
            )
            if not spans:
                continue
            write_candidates(
                [CandidateRecord(record.entity_id, record.language_mode, tuple(spans))], fh
            )
            dumped += 1
    click.echo(json.dumps({"entities": len(records), "with_candidates": dumped}, sort_keys=True))


# ------------------------------------------------------------------ select

def _auto_label_examples(
    candidate_records: list[CandidateRecord],
    records_by_id: dict[str, EntityRecord],
    kg: KgStore,
) -> list[LabeledExample]:
    examples = []
    for cand_record in candidate_records:
        record = records_by_id.get(cand_record.entity_id)
        if record is None:
            raise DataError(f"candidate entity {cand_record.entity_id!r} not in the corpus")
        gold_spans = build_weak_labels(record, kg).span_flags
        for span in cand_record.spans:
            features = extract_features(span, cand_record.spans, kg, cand_record.language_mode)
            label = KEEP if (span.start_index, span.end_index) in gold_spans else DROP
            examples.append(
                LabeledExample(
                    features,
                    label,
                    provenance=f"{cand_record.entity_id}:{span.start_index}:{span.end_index}",
                )
            )
    return examples


def _stratified_sample(examples: list[LabeledExample], size: int, seed: int) -> list[LabeledExample]:
    if size >= len(examples):
        return list(examples)
    keeps = [e for e in examples if e.label == KEEP]
    drops = [e for e in examples if e.label == DROP]
    rng = random.Random(seed)
    keep_n = round(size * len(keeps) / len(examples))
    if keeps:
        keep_n = min(max(keep_n, 1), len(keeps), size - (1 if drops else 0))
    drop_n = size - keep_n
    sampled = rng.sample(keeps, keep_n) + rng.sample(drops, drop_n)
    return sampled


@main.command("select")
@click.option("--config", "config_path", default=None)
@click.option("--candidates", default=None, help="Candidate dump from decode.")
@click.option("--kg", "kg_path", default=None)
@click.option("--forest", "forest_path", default=None, help="Apply an existing forest checkpoint.")
@click.option("--labels", "labels_path", default=None, help="Train on a labeled-example CSV.")
@click.option("--auto-label-from", default=None, help="Train on labels derived from this corpus's gold concepts.")
@click.option("--sample", type=int, default=None, help="Training examples to sample from the auto-labeled pool.")
@click.option("--seed", type=int, default=None)
@click.option("--forest-seed", type=int, default=None)
@click.option("--sample-seed", type=int, default=None)
@click.option("--trees", type=int, default=None)
@click.option("--save-forest", "save_forest_path", default=None)
@click.option("--train-only", is_flag=True, default=False)
@click.option("--out", "out_path", default=None, help="Selected concepts JSONL.")
@_guarded
def select_cmd(
    config_path,
    candidates,
    kg_path,
    forest_path,
    labels_path,
    auto_label_from,
    sample,
    seed,
    forest_seed,
    sample_seed,
    trees,
    save_forest_path,
    train_only,
    out_path,
):
    """Filter candidates with the random-forest selector (train it or load it)."""
    cfg = PipelineConfig.load(config_path)
    sources = [s for s in (forest_path, labels_path, auto_label_from) if s is not None]
    if len(sources) != 1:
        raise ConfigError("pass exactly one of --forest, --labels, --auto-label-from")

    candidates_file = _require_input(candidates or cfg.path("paths", "candidates"), "candidate dump")
    with open(candidates_file, "r", encoding="utf-8") as fh:
        candidate_records = load_candidates(fh)
    kg = _load_kg_file(kg_path or cfg.path("paths", "kg"))

    if forest_path is not None:
        forest_file = _require_input(forest_path, "forest checkpoint")
        with open(forest_file, "r", encoding="utf-8") as fh:
            forest = load_forest(fh)
    else:
        section = cfg.get("forest", default={})
        forest_config = ForestConfig(
            tree_count=trees if trees is not None else int(section.get("tree_count", 50)),
            max_depth=int(section.get("max_depth", 12)),
            min_leaf=int(section.get("min_leaf", 2)),
            features_per_split=int(section.get("features_per_split", 2)),
            bootstrap=bool(section.get("bootstrap", True)),
            seed=_resolve_seed(forest_seed, seed, section.get("seed"), cfg.get("seed")),
        )
        if labels_path is not None:
            labels_file = _require_input(labels_path, "labels CSV")
            with open(labels_file, "r", encoding="utf-8") as fh:
                examples = load_examples_csv(fh)
        else:
            corpus_records = _load_corpus_file(auto_label_from, "auto-label corpus")
            examples = _auto_label_examples(
                candidate_records, {r.entity_id: r for r in corpus_records}, kg
            )
            sample_size = sample if sample is not None else cfg.get("select", "sample")
            if sample_size is not None:
                examples = _stratified_sample(
                    examples,
                    int(sample_size),
                    _resolve_seed(sample_seed, seed, cfg.get("select", "seed"), cfg.get("seed")),
                )
        forest = train_forest(examples, forest_config)

    if save_forest_path or cfg.path("paths", "forest"):
        target = save_forest_path or cfg.path("paths", "forest")
        if forest_path is None or save_forest_path:
            with open(_out_path(target, "forest output path"), "w", encoding="utf-8") as fh:
                save_forest(forest, fh)

    if train_only:
        click.echo(json.dumps({"trained_on": forest.training_size}, sort_keys=True))
        return

    selected_total = 0
    out_file = _out_path(out_path or cfg.path("paths", "selected"), "selected output path")
    with open(out_file, "w", encoding="utf-8") as fh:
        for cand_record in candidate_records:
            kept = select_candidates(
                list(cand_record.spans), forest, kg, cand_record.language_mode
            )
            fh.write(_selected_line(cand_record.entity_id, cand_record.language_mode, kept) + "\n")
            selected_total += len(kept)
    click.echo(
        json.dumps({"entities": len(candidate_records), "selected": selected_total}, sort_keys=True)
    )


# ------------------------------------------------------------------- prune

@main.command("prune")
@click.option("--config", "config_path", default=None)
@click.option("--in", "in_path", default=None, help="Selected concepts JSONL from select.")
@click.option("--kg", "kg_path", default=None)
@click.option("--rules", "rules_path", default=None, help="Rules JSON; omit for the built-in set.")
@click.option("--system-id", default="pipeline")
@click.option("--out", "out_path", default=None, help="System output JSONL.")
@click.option("--decisions", "decisions_path", default=None, help="Audit-trail JSONL.")
@_guarded
def prune_cmd(config_path, in_path, kg_path, rules_path, system_id, out_path, decisions_path):
    """Apply the rule-based pruner; emits evaluator-ready system output."""
    cfg = PipelineConfig.load(config_path)
    selected_file = _require_input(in_path or cfg.path("paths", "selected"), "selected concepts")
    entries = _load_selected(selected_file)
    kg = _load_kg_file(kg_path or cfg.path("paths", "kg"))

    rules_file = rules_path or cfg.path("paths", "rules")
    if rules_file is not None:
        with open(_require_input(rules_file, "rules file"), "r", encoding="utf-8") as fh:
            rules = load_rules(fh)
    else:
        rules = default_rules()

    decisions_sink = (
        open(_out_path(decisions_path, "decisions path"), "w", encoding="utf-8")
        if decisions_path
        else None
    )
    kept_total = 0
    try:
        out_file = _out_path(out_path or cfg.path("paths", "pruned"), "pruned output path")
        with open(out_file, "w", encoding="utf-8") as fh:
            for entity_id, mode, concepts in entries:
                scored = [ScoredConcept(c["surface"], float(c["vote"])) for c in concepts]
                kept, decisions = prune(scored, rules, kg, mode)
                kept_total += len(kept)
                output = SystemOutput(system_id, mode, {entity_id: tuple(c.surface for c in kept)})
                for line in system_output_lines(output):
                    fh.write(line + "\n")
                if decisions_sink:
                    for decision in decisions:
                        payload = json.loads(decision_line(decision))
                        payload["entity_id"] = entity_id
                        decisions_sink.write(json.dumps(payload, ensure_ascii=False, sort_keys=True) + "\n")
    finally:
        if decisions_sink:
            decisions_sink.close()
    click.echo(json.dumps({"entities": len(entries), "kept": kept_total}, sort_keys=True))


# ------------------------------------------------------------------ hearst

@main.command("hearst")
@click.option("--config", "config_path", default=None)
@click.option("--corpus", default=None)
@click.option("--patterns", "patterns_path", default=None, help="Pattern JSON; omit for the built-in set.")
@click.option("--system-id", default="hearst")
@click.option("--out", "out_path", default=None, help="System output JSONL.")
@_guarded
def hearst_cmd(config_path, corpus, patterns_path, system_id, out_path):
    """Run the Hearst-pattern baseline over the corpus."""
    cfg = PipelineConfig.load(config_path)
    records = _load_corpus_file(corpus or cfg.path("paths", "corpus"))
    mode = _corpus_mode(records)

    patterns_file = patterns_path or cfg.path("paths", "patterns")
    if patterns_file is not None:
        with open(_require_input(patterns_file, "patterns file"), "r", encoding="utf-8") as fh:
            pattern_set = load_patterns(fh)
    else:
        pattern_set = default_patterns(mode)

    extracted = 0
    out_file = _out_path(out_path or cfg.path("paths", "hearst"), "hearst output path")
    with open(out_file, "w", encoding="utf-8") as fh:
        for record in records:
            concepts = match(record, pattern_set)
            extracted += len(concepts)
            output = SystemOutput(system_id, mode, {record.entity_id: tuple(concepts)})
            for line in system_output_lines(output):
                fh.write(line + "\n")
    click.echo(json.dumps({"entities": len(records), "extracted": extracted}, sort_keys=True))


# ---------------------------------------------------------------- evaluate

class _ChainedJudgments:
    """Explicit human judgments first, derived judgments as fallback."""

    def __init__(self, primary: JudgmentStore | None, fallback: JudgmentStore | None):
        self.primary = primary
        self.fallback = fallback

    def lookup(self, entity_id: str, concept: str):
        if self.primary is not None:
            verdict = self.primary.lookup(entity_id, concept)
            if verdict is not None:
                return verdict
        if self.fallback is not None:
            return self.fallback.lookup(entity_id, concept)
        return None


@main.command("evaluate")
@click.argument("outputs", nargs=-1, required=True)
@click.option("--config", "config_path", default=None)
@click.option("--kg", "kg_path", default=None)
@click.option("--judgments", "judgments_path", default=None, help="Human judgment CSV.")
@click.option(
    "--auto-judge-from-gold",
    default=None,
    help="Corpus whose gold concepts answer judgments missing from the CSV.",
)
@click.option("--out", "out_path", default=None, help="Report JSON.")
@_guarded
def evaluate_cmd(outputs, config_path, kg_path, judgments_path, auto_judge_from_gold, out_path):
    """Score system outputs against the KG and judgments; prints one line per system."""
    cfg = PipelineConfig.load(config_path)
    kg = _load_kg_file(kg_path or cfg.path("paths", "kg"))

    loaded = []
    for path in outputs:
        with open(_require_input(path, "system output"), "r", encoding="utf-8") as fh:
            loaded.append(load_system_output(fh))

    explicit = None
    if judgments_path or cfg.path("paths", "judgments"):
        judgments_file = _require_input(judgments_path or cfg.path("paths", "judgments"), "judgments CSV")
        with open(judgments_file, "r", encoding="utf-8") as fh:
            explicit = load_judgments_csv(fh, loaded[0].language_mode)

    derived = None
    if auto_judge_from_gold is not None:
        gold_records = _load_corpus_file(auto_judge_from_gold, "gold corpus")
        pairs = []
        for record in gold_records:
            mode = record.language_mode
            gold_norm = {normalize_surface(g, mode) for g in record.gold_concepts}
            for output in loaded:
                for concept in output.concepts_by_entity.get(record.entity_id, ()):
                    pairs.append(
                        (record.entity_id, concept, normalize_surface(concept, mode) in gold_norm)
                    )
        derived = JudgmentStore.from_pairs(pairs, loaded[0].language_mode)

    reports = evaluate_systems(loaded, kg, _ChainedJudgments(explicit, derived))
    if out_path or cfg.path("paths", "report"):
        report_file = _out_path(out_path or cfg.path("paths", "report"), "report output path")
        with open(report_file, "w", encoding="utf-8") as fh:
            write_report(reports, fh)
    for report in reports:
        click.echo(json.dumps(report.as_dict(), ensure_ascii=False, sort_keys=True))


# ---------------------------------------------------------- batch-complete

@main.command("batch-complete")
@click.option("--config", "config_path", default=None)
@click.option("--corpus", default=None)
@click.option("--kg", "kg_path", default=None)
@click.option("--head", "head_path", default=None)
@click.option("--forest", "forest_path", default=None)
@click.option("--rules", "rules_path", default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--out", "out_path", default=None, help="New instanceOf relations TSV.")
@_guarded
def batch_complete_cmd(config_path, corpus, kg_path, head_path, forest_path, rules_path, threshold, out_path):
    """Decode+select+prune every entity and emit relations absent from the KG."""
    cfg = PipelineConfig.load(config_path)
    records = _load_corpus_file(corpus or cfg.path("paths", "corpus"))
    kg = _load_kg_file(kg_path or cfg.path("paths", "kg"))
    checkpoint = _require_input(head_path or cfg.path("paths", "head"), "head checkpoint")
    with open(checkpoint, "r", encoding="utf-8") as fh:
        params, question, embedder_config = load_head_params(fh)
    forest_file = _require_input(forest_path or cfg.path("paths", "forest"), "forest checkpoint")
    with open(forest_file, "r", encoding="utf-8") as fh:
        forest = load_forest(fh)
    rules_file = rules_path or cfg.path("paths", "rules")
    if rules_file is not None:
        with open(_require_input(rules_file, "rules file"), "r", encoding="utf-8") as fh:
            rules = load_rules(fh)
    else:
        rules = default_rules()

    decode_config = DecodeConfig(
        threshold=threshold if threshold is not None else float(cfg.get("decode", "threshold", default=0.85)),
        max_span_length=int(cfg.get("decode", "max_span_length", default=16)),
        top_k=cfg.get("decode", "top_k"),
    )

    new_relations = 0
    out_file = _out_path(out_path or cfg.path("paths", "relations"), "relations output path")
    with open(out_file, "w", encoding="utf-8") as fh:
        for record in records:
            profile = forward(embed_tokens(record, question, embedder_config), params)
            spans = fixed_threshold_truncate(
                enumerate_candidates(profile, record, decode_config), decode_config.threshold
            )
            if not spans:
                continue
            kept = select_candidates(spans, forest, kg, record.language_mode)
            scored = [ScoredConcept(c.surface, fraction) for c, fraction in kept]
            pruned, _ = prune(scored, rules, kg, record.language_mode)
            for concept in pruned:
                if not kg.is_concept_of(record.entity_id, concept.surface, record.language_mode):
                    fh.write(f"{record.entity_id}\t{concept.surface}\n")
                    new_relations += 1
    click.echo(json.dumps({"entities": len(records), "new_relations": new_relations}, sort_keys=True))


# ------------------------------------------------------------------- serve

@main.command("serve")
@click.option("--config", "config_path", default=None)
@click.option("--candidates", default=None, help="Candidate dump to annotate.")
@click.option("--corpus", default=None, help="Corpus supplying the abstracts.")
@click.option("--log", "log_path", default=None, help="Append-only verdict log.")
@click.option("--sample", type=int, default=None, help="Tasks to sample from the dump.")
@click.option("--seed", type=int, default=None)
@click.option("--port", type=int, default=None, help="Overrides CONCEPTMINER_PORT.")
@click.option("--host", default="127.0.0.1")
@_guarded
def serve_cmd(config_path, candidates, corpus, log_path, sample, seed, port, host):
    """Run the HTTP annotation service."""
    import uvicorn

    from .annotation import AnnotationConfig, create_app

    cfg = PipelineConfig.load(config_path)
    service_config = AnnotationConfig(
        candidates_path=str(_require_input(candidates or cfg.path("paths", "candidates"), "candidate dump")),
        corpus_path=str(_require_input(corpus or cfg.path("paths", "corpus"), "corpus")),
        log_path=str(_out_path(log_path or cfg.path("paths", "annotation_log"), "annotation log path")),
        sample_size=sample if sample is not None else int(cfg.get("annotation", "sample", default=1000)),
        seed=_resolve_seed(None, seed, cfg.get("annotation", "seed"), cfg.get("seed")),
    )
    app = create_app(service_config)
    resolved_port = port if port is not None else int(os.environ.get("CONCEPTMINER_PORT", "8080"))
    uvicorn.run(app, host=host, port=resolved_port, log_level="warning")


if __name__ == "__main__":
    main()
