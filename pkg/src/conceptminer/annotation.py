"""HTTP annotation service: human verdicts over decoded candidate spans.

A seeded uniform sample of the candidate dump becomes the task queue. Every
verdict is appended to a JSONL log before it touches memory, so a crash
loses nothing: on restart the log is replayed over the freshly rebuilt task
table and the service state is reproduced exactly. Re-submitting a verdict
for a task overwrites the current one; the log (and each task's history)
keeps every submission as the audit trail.

Labeled tasks export in two shapes: the selector's labeled-example CSV
(keep/drop training data) and the evaluator's judgment CSV. Highlight
offsets are computed here, from the tokenizer of record, so UI clients
never re-tokenize.
"""

from __future__ import annotations

import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from random import Random

from .corpus import KgStore, load_corpus, load_kg_dump, tokenize_with_offsets
from .decoder import load_candidates
from .errors import DataError, FormatError
from .evaluator import write_judgments_csv
from .selector import DROP, KEEP, LabeledExample, extract_features, write_examples_csv

API_SCHEMA_VERSION = 1

PENDING, LABELED = "pending", "labeled"
VERDICTS = ("correct", "incorrect")


@dataclass(frozen=True)
class AnnotationConfig:
    candidates_path: str
    corpus_path: str
    log_path: str
    kg_path: str | None = None  # without it the in_kg feature exports as 0
    sample_size: int = 1000
    seed: int = 0


@dataclass
class AnnotationTask:
    task_id: str
    entity_id: str
    entity_name: str
    abstract: str
    language_mode: str
    surface: str
    confidence: float
    start_prob: float
    end_prob: float
    start_index: int
    end_index: int
    char_start: int
    char_end: int
    status: str = PENDING
    verdict: str | None = None
    annotator: str | None = None
    timestamp: float | None = None
    history: list = field(default_factory=list)

    def apply_verdict(self, verdict: str, annotator: str | None, timestamp: float) -> None:
        if verdict not in VERDICTS:
            raise DataError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        self.verdict = verdict
        self.annotator = annotator
        self.timestamp = timestamp
        self.status = LABELED
        self.history.append({"verdict": verdict, "annotator": annotator, "timestamp": timestamp})

    def as_payload(self) -> dict:
        return {
            "schema_version": API_SCHEMA_VERSION,
            "task_id": self.task_id,
            "entity_id": self.entity_id,
            "entity_name": self.entity_name,
            "abstract": self.abstract,
            "language_mode": self.language_mode,
            "candidate": {
                "surface": self.surface,
                "cs": self.confidence,
                "p_start": self.start_prob,
                "p_end": self.end_prob,
                "token_start": self.start_index,
                "token_end": self.end_index,
                "char_start": self.char_start,
                "char_end": self.char_end,
            },
            "status": self.status,
            "verdict": self.verdict,
            "annotator": self.annotator,
            "timestamp": self.timestamp,
            "history": list(self.history),
        }


class AnnotationStore:
    """Task table + append-only verdict log."""

    def __init__(self, config: AnnotationConfig, clock: Callable[[], float] = time.time):
        self.config = config
        self.clock = clock
        self.kg = self._load_kg(config.kg_path)
        self.tasks: dict[str, AnnotationTask] = {}
        self.order: list[str] = []
        self._spans_by_entity: dict[str, tuple] = {}
        self._build_tasks()
        self._replay_log()

    @staticmethod
    def _load_kg(path: str | None) -> KgStore:
        if path is None:
            return KgStore.from_pairs([])
        p = Path(path)
        fmt = "jsonl" if p.suffix == ".jsonl" else "tsv"
        with open(p, "r", encoding="utf-8") as fh:
            return load_kg_dump(fh, format=fmt)

    def _build_tasks(self) -> None:
        with open(self.config.corpus_path, "r", encoding="utf-8") as fh:
            records = {r.entity_id: r for r in load_corpus(fh)}
        with open(self.config.candidates_path, "r", encoding="utf-8") as fh:
            candidate_records = load_candidates(fh)

        pool: list[AnnotationTask] = []
        for cand_record in candidate_records:
            record = records.get(cand_record.entity_id)
            if record is None:
                raise DataError(f"candidate entity {cand_record.entity_id!r} not in the corpus")
            if record.abstract is None:
                raise DataError(f"entity {cand_record.entity_id!r} has no raw abstract")
            self._spans_by_entity[cand_record.entity_id] = cand_record.spans
            offsets = tokenize_with_offsets(record.abstract, record.language_mode)
            for span in cand_record.spans:
                if span.end_index >= len(offsets):
                    raise DataError(
                        f"span {span.indices} outside the abstract of {cand_record.entity_id!r}"
                    )
                pool.append(
                    AnnotationTask(
                        task_id=f"{cand_record.entity_id}:{span.start_index}:{span.end_index}",
                        entity_id=cand_record.entity_id,
                        entity_name=record.surface_name,
                        abstract=record.abstract,
                        language_mode=record.language_mode,
                        surface=span.surface,
                        confidence=span.confidence,
                        start_prob=span.start_prob,
                        end_prob=span.end_prob,
                        start_index=span.start_index,
                        end_index=span.end_index,
                        char_start=offsets[span.start_index][1],
                        char_end=offsets[span.end_index][2],
                    )
                )

        if self.config.sample_size < len(pool):
            rng = Random(self.config.seed)
            pool = rng.sample(pool, self.config.sample_size)
        for task in pool:
            self.tasks[task.task_id] = task
            self.order.append(task.task_id)

    def _replay_log(self) -> None:
        log = Path(self.config.log_path)
        if not log.exists():
            return
        with open(log, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if not line:
                    continue
                try:
                    entry = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise FormatError(f"corrupt annotation log: {exc.msg}", line_number=lineno) from exc
                task = self.tasks.get(entry.get("task_id"))
                if task is None:
                    raise DataError(
                        f"annotation log line {lineno} references unknown task "
                        f"{entry.get('task_id')!r}; log and candidate dump disagree"
                    )
                task.apply_verdict(entry["verdict"], entry.get("annotator"), entry["timestamp"])

    def submit(self, task_id: str, verdict: str, annotator: str | None) -> AnnotationTask:
        task = self.tasks.get(task_id)
        if task is None:
            raise KeyError(task_id)
        if verdict not in VERDICTS:
            raise DataError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        timestamp = self.clock()
        entry = {"task_id": task_id, "verdict": verdict, "annotator": annotator, "timestamp": timestamp}
        with open(self.config.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
        task.apply_verdict(verdict, annotator, timestamp)
        return task

    def list_tasks(self, status: str | None, limit: int) -> list[AnnotationTask]:
        out = []
        for task_id in self.order:
            task = self.tasks[task_id]
            if status is not None and task.status != status:
                continue
            out.append(task)
            if len(out) >= limit:
                break
        return out

    def progress(self) -> dict:
        labeled = sum(1 for t in self.tasks.values() if t.status == LABELED)
        return {
            "schema_version": API_SCHEMA_VERSION,
            "total": len(self.tasks),
            "labeled": labeled,
            "pending": len(self.tasks) - labeled,
        }

    def _labeled_in_order(self) -> list[AnnotationTask]:
        return [self.tasks[tid] for tid in self.order if self.tasks[tid].status == LABELED]

    def export_selector_csv(self) -> tuple[str, int]:
        examples = []
        for task in self._labeled_in_order():
            spans = self._spans_by_entity[task.entity_id]
            span = next(
                s for s in spans if (s.start_index, s.end_index) == (task.start_index, task.end_index)
            )
            features = extract_features(span, spans, self.kg, task.language_mode)
            examples.append(
                LabeledExample(
                    features,
                    KEEP if task.verdict == "correct" else DROP,
                    provenance=task.task_id,
                )
            )
        sink = io.StringIO()
        write_examples_csv(examples, sink)
        return sink.getvalue(), len(examples)

    def export_judgments_csv(self) -> tuple[str, int]:
        rows = [(t.entity_id, t.surface, t.verdict) for t in self._labeled_in_order()]
        sink = io.StringIO()
        write_judgments_csv(rows, sink)
        return sink.getvalue(), len(rows)


class VerdictBody(BaseModel):
    verdict: str
    annotator: str | None = None


class ExportBody(BaseModel):
    kind: str


def create_app(config: AnnotationConfig, clock: Callable[[], float] = time.time) -> FastAPI:
    store = AnnotationStore(config, clock=clock)
    app = FastAPI(title="conceptminer annotation", version="1")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.store = store

    @app.get("/api/tasks")
    def list_tasks(status: str | None = PENDING, limit: int = 50):
        if status in ("all", ""):
            status = None
        if status is not None and status not in (PENDING, LABELED):
            raise HTTPException(status_code=422, detail=f"unknown status {status!r}")
        if limit < 1:
            raise HTTPException(status_code=422, detail="limit must be >= 1")
        tasks = store.list_tasks(status, limit)
        return {
            "schema_version": API_SCHEMA_VERSION,
            "tasks": [t.as_payload() for t in tasks],
            **store.progress(),
        }

    @app.get("/api/tasks/{task_id}")
    def get_task(task_id: str):
        task = store.tasks.get(task_id)
        if task is None:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id!r}")
        return task.as_payload()

    @app.post("/api/tasks/{task_id}/verdict")
    def post_verdict(task_id: str, body: VerdictBody):
        if body.verdict not in VERDICTS:
            raise HTTPException(
                status_code=422, detail=f"verdict must be one of {list(VERDICTS)}, got {body.verdict!r}"
            )
        try:
            task = store.submit(task_id, body.verdict, body.annotator)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown task {task_id!r}")
        return task.as_payload()

    @app.get("/api/progress")
    def progress():
        return store.progress()

    @app.post("/api/export")
    def export(body: ExportBody):
        if body.kind == "selector":
            csv_text, rows = store.export_selector_csv()
        elif body.kind == "judgments":
            csv_text, rows = store.export_judgments_csv()
        else:
            raise HTTPException(
                status_code=422, detail=f"kind must be selector|judgments, got {body.kind!r}"
            )
        return {"schema_version": API_SCHEMA_VERSION, "kind": body.kind, "rows": rows, "csv": csv_text}

    return app
