import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from conceptminer.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_DIVERGENCE,
    EXIT_FORMAT,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    EXIT_SEED_CONFLICT,
    main,
)

CONFIG = {
    "schema_version": 1,
    "seed": 0,
    "paths": {
        "corpus": "corpus.jsonl",
        "kg": "kg.tsv",
        "head": "head.json",
        "forest": "forest.json",
        "candidates": "candidates.jsonl",
        "selected": "selected.jsonl",
        "pruned": "pruned.jsonl",
        "report": "report.json",
    },
    "synthetic": {"entities": 40},
    "train": {"epochs": 8, "learning_rate": 0.05, "batch_size": 4},
    "decode": {"threshold": 0.85, "max_span_length": 16},
    "select": {"sample": 120},
}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path, runner):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(CONFIG))
    result = runner.invoke(main, ["gen-synthetic", "--config", str(config_path)])
    assert result.exit_code == EXIT_OK, result.stderr
    return tmp_path, str(config_path)


def _run(runner, args, expect=EXIT_OK):
    result = runner.invoke(main, args)
    assert result.exit_code == expect, f"{args}: {result.stderr or result.output}"
    return result


def _stderr_payload(result):
    lines = [l for l in result.stderr.strip().splitlines() if l.strip()]
    assert len(lines) == 1, f"expected a single stderr line, got {lines!r}"
    return json.loads(lines[0])


def test_gen_synthetic_emits_stats_and_files(workspace, runner):
    tmp, config = workspace
    assert (tmp / "corpus.jsonl").is_file()
    assert (tmp / "kg.tsv").is_file()
    result = _run(runner, ["gen-synthetic", "--config", config, "--entities", "200"])
    stats = json.loads(result.output.strip())
    assert stats["entities"] == 200
    assert stats["nested_fraction"] >= 0.40


def test_full_stage_chain(workspace, runner):
    tmp, config = workspace
    _run(runner, ["build-dataset", "--config", config, "--out", str(tmp / "manifest.json")])
    _run(runner, ["train-head", "--config", config, "--manifest", str(tmp / "manifest.json"),
                  "--log", str(tmp / "train.log.jsonl")])
    assert (tmp / "head.json").is_file()
    log_lines = (tmp / "train.log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 8  # one per epoch
    assert {"epoch", "train", "validation"} <= set(json.loads(log_lines[0]))

    _run(runner, ["decode", "--config", config])
    _run(runner, ["select", "--config", config, "--auto-label-from", str(tmp / "corpus.jsonl")])
    _run(runner, ["prune", "--config", config, "--decisions", str(tmp / "decisions.jsonl")])
    result = _run(runner, ["evaluate", str(tmp / "pruned.jsonl"), "--config", config,
                           "--auto-judge-from-gold", str(tmp / "corpus.jsonl")])
    report = json.loads(result.output.strip().splitlines()[-1])
    assert report["precision"] is not None and report["precision"] >= 0.9
    assert (tmp / "report.json").is_file()
    assert (tmp / "decisions.jsonl").read_text().strip()

    result = _run(runner, ["batch-complete", "--config", config, "--out", str(tmp / "relations.tsv")])
    summary = json.loads(result.output.strip())
    assert summary["new_relations"] >= 1
    kg_pairs = {tuple(l.split("\t")) for l in (tmp / "kg.tsv").read_text().strip().splitlines()}
    new_pairs = {tuple(l.split("\t")) for l in (tmp / "relations.tsv").read_text().strip().splitlines()}
    assert not (kg_pairs & new_pairs)  # only relations absent from the KG


def test_decode_threshold_two_writes_empty_file(workspace, runner, tmp_path):
    tmp, config = workspace
    one = tmp / "one.jsonl"
    one.write_text((tmp / "corpus.jsonl").read_text().splitlines()[0] + "\n")
    _run(runner, ["train-head", "--config", config])
    _run(runner, ["decode", "--config", config, "--corpus", str(one),
                  "--threshold", "2.0", "--out", str(tmp / "empty.jsonl")])
    assert (tmp / "empty.jsonl").read_bytes() == b""


def test_evaluate_missing_judgment_names_pair(workspace, runner):
    tmp, config = workspace
    _run(runner, ["train-head", "--config", config])
    _run(runner, ["decode", "--config", config])
    _run(runner, ["select", "--config", config, "--auto-label-from", str(tmp / "corpus.jsonl")])
    _run(runner, ["prune", "--config", config])
    thin = tmp / "thin.csv"
    thin.write_text("entity_id,concept,verdict\n")
    result = runner.invoke(
        main, ["evaluate", str(tmp / "pruned.jsonl"), "--config", config, "--judgments", str(thin)]
    )
    assert result.exit_code == EXIT_DATA
    payload = _stderr_payload(result)
    assert payload["error"] == "data"
    assert "missing judgment" in payload["message"]
    assert "syn-" in payload["message"]  # names the entity of the pair


def test_missing_input_exit_code(runner, tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"schema_version": 1}))
    result = runner.invoke(main, ["decode", "--config", str(config), "--corpus", "/nope.jsonl",
                                  "--head", "also-missing.json", "--out", str(tmp_path / "o")])
    assert result.exit_code == EXIT_MISSING_INPUT
    assert _stderr_payload(result)["error"] == "missing-input"


def test_bad_config_schema_exit_code(runner, tmp_path):
    config = tmp_path / "c.json"
    config.write_text(json.dumps({"schema_version": 99}))
    result = runner.invoke(main, ["decode", "--config", str(config)])
    assert result.exit_code == EXIT_FORMAT
    assert _stderr_payload(result)["error"] == "format"


def test_seed_conflict_exit_code(workspace, runner):
    tmp, config = workspace
    result = runner.invoke(main, ["train-head", "--config", config, "--seed", "5", "--train-seed", "7"])
    assert result.exit_code == EXIT_SEED_CONFLICT
    assert _stderr_payload(result)["error"] == "seed-conflict"
    # equal values are not a conflict
    _run(runner, ["train-head", "--config", config, "--seed", "5", "--train-seed", "5"])


def test_select_requires_exactly_one_source(workspace, runner):
    tmp, config = workspace
    result = runner.invoke(main, ["select", "--config", config])
    assert result.exit_code == EXIT_CONFIG
    assert _stderr_payload(result)["error"] == "config"


def test_divergence_exit_code(workspace, runner):
    tmp, config = workspace
    result = runner.invoke(main, ["train-head", "--config", config, "--learning-rate", "1e308"])
    assert result.exit_code == EXIT_DIVERGENCE
    payload = _stderr_payload(result)
    assert payload["error"] == "divergence"


def test_select_forest_checkpoint_flow(workspace, runner):
    tmp, config = workspace
    _run(runner, ["train-head", "--config", config])
    _run(runner, ["decode", "--config", config])
    _run(runner, ["select", "--config", config, "--auto-label-from", str(tmp / "corpus.jsonl"),
                  "--train-only", "--save-forest", str(tmp / "f.json")])
    assert (tmp / "f.json").is_file()
    assert not (tmp / "selected.jsonl").exists()  # train-only skips apply
    _run(runner, ["select", "--config", config, "--forest", str(tmp / "f.json")])
    assert (tmp / "selected.jsonl").is_file()


def test_select_from_labels_csv(workspace, runner):
    tmp, config = workspace
    _run(runner, ["train-head", "--config", config])
    _run(runner, ["decode", "--config", config])
    labels = tmp / "labels.csv"
    labels.write_text(
        "confidence,start_prob,end_prob,in_kg,contains_candidate,label,provenance\n"
        "1.8,0.9,0.9,1,0,keep,a\n1.7,0.85,0.85,1,1,keep,b\n"
        "0.9,0.45,0.45,0,0,drop,c\n0.95,0.5,0.45,0,1,drop,d\n"
    )
    _run(runner, ["select", "--config", config, "--labels", str(labels)])
    assert (tmp / "selected.jsonl").is_file()


def test_hearst_command(runner, tmp_path):
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text(
        json.dumps(
            {
                "entity_id": "e1",
                "name": "Volterra",
                "abstract": "Volterra is a walled town that sits on a ridge .",
                "language_mode": "word",
                "gold_concepts": [],
            }
        )
        + "\n"
    )
    out = tmp_path / "hearst.jsonl"
    result = _run(runner, ["hearst", "--corpus", str(corpus), "--out", str(out)])
    assert json.loads(result.output.strip())["extracted"] == 1
    line = json.loads(out.read_text().strip())
    assert line["concepts"] == ["walled town"]
    assert line["system_id"] == "hearst"


def test_pipeline_is_deterministic(runner, tmp_path):
    outputs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        config = d / "config.json"
        small = dict(CONFIG, synthetic={"entities": 20}, train={"epochs": 4, "learning_rate": 0.05})
        config.write_text(json.dumps(small))
        for args in (
            ["gen-synthetic", "--config", str(config)],
            ["train-head", "--config", str(config)],
            ["decode", "--config", str(config)],
        ):
            result = runner.invoke(main, args)
            assert result.exit_code == EXIT_OK, result.stderr
        outputs.append(
            tuple((d / name).read_bytes() for name in ("corpus.jsonl", "kg.tsv", "head.json", "candidates.jsonl"))
        )
    assert outputs[0] == outputs[1]
