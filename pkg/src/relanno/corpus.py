"""Core data model, corpus ingestion, chunk normalization and train/test splitting."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional


def whitespace_token_count(text: str) -> int:
    return len(text.split())


@dataclass
class RelevanceDefinition:
    meaning: str
    examples: list[str] = field(default_factory=list)
    provenance: str = "generated"  # generated | improved | fixed | human

    def as_text(self) -> str:
        """Render meaning + numbered examples as one definition block."""
        lines = ["Meaning of the question: " + self.meaning]
        if self.examples:
            lines.append("Examples of information that the question is looking for:")
            for i, ex in enumerate(self.examples, start=1):
                lines.append(f"{i}. {ex}")
        return "\n".join(lines)


@dataclass
class Query:
    id: str
    text: str
    definition: Optional[RelevanceDefinition] = None


@dataclass
class DocumentChunk:
    id: str
    report_id: str
    text: str
    token_count: int = -1

    def __post_init__(self):
        if self.token_count < 0:
            self.token_count = whitespace_token_count(self.text)


@dataclass
class QueryDocPair:
    query_id: str
    doc_id: str
    retriever_rank: Optional[int] = None
    split: str = "unassigned"  # train | test | unassigned


@dataclass
class GoldLabel:
    query_id: str
    doc_id: str
    grade: float
    binary: Optional[str] = None  # relevant | partial | irrelevant
    uncertain: bool = False


@dataclass
class Split:
    train_queries: set[str]
    test_queries: set[str]
    train_reports: set[str]
    test_reports: set[str]
    seed: int


@dataclass
class MergeResult:
    chunks: list[DocumentChunk]
    warnings: list[str] = field(default_factory=list)


class SplitError(ValueError):
    pass


def merge_short_chunks(
    chunks: list[DocumentChunk],
    min_tokens: int,
    counter: Callable[[str], int] = whitespace_token_count,
) -> MergeResult:
    """Greedily concatenate adjacent short chunks until each reaches min_tokens.

    Chunks must be in document order within each report; accumulation restarts
    at report boundaries. The trailing chunk of a report may stay short.
    """
    if min_tokens <= 0:
        raise ValueError("min_tokens must be positive")
    merged: list[DocumentChunk] = []
    warnings: list[str] = []

    def flush(buffer: list[DocumentChunk]) -> None:
        if not buffer:
            return
        text = "\n".join(c.text for c in buffer)
        out = DocumentChunk(
            id=buffer[0].id, report_id=buffer[0].report_id,
            text=text, token_count=counter(text),
        )
        if out.token_count < min_tokens:
            warnings.append(
                f"chunk {out.id} of report {out.report_id} remains short "
                f"({out.token_count} < {min_tokens} tokens)"
            )
        merged.append(out)

    buffer: list[DocumentChunk] = []
    acc = 0
    current_report: Optional[str] = None
    for chunk in chunks:
        if current_report is not None and chunk.report_id != current_report:
            flush(buffer)
            buffer, acc = [], 0
        current_report = chunk.report_id
        buffer.append(chunk)
        acc += counter(chunk.text)
        if acc >= min_tokens:
            flush(buffer)
            buffer, acc = [], 0
    flush(buffer)
    return MergeResult(chunks=merged, warnings=warnings)


def split_train_test(
    query_ids: Iterable[str],
    report_ids: Iterable[str],
    query_test_fraction: float,
    report_test_fraction: float,
    seed: int,
) -> Split:
    """Disjoint query/report partition, deterministic for a fixed seed."""
    queries = sorted(set(query_ids))
    reports = sorted(set(report_ids))
    if len(queries) < 2 or len(reports) < 2:
        raise SplitError("split impossible: need at least 2 queries and 2 reports")
    for frac, name in ((query_test_fraction, "query"), (report_test_fraction, "report")):
        if not 0 < frac < 1:
            raise SplitError(f"{name}_test_fraction must be in (0,1)")

    rng = random.Random(seed)

    def pick(ids: list[str], fraction: float) -> tuple[set[str], set[str]]:
        n_test = round(fraction * len(ids))
        n_test = min(max(n_test, 1), len(ids) - 1)
        test = set(rng.sample(ids, n_test))
        return set(ids) - test, test

    train_q, test_q = pick(queries, query_test_fraction)
    train_r, test_r = pick(reports, report_test_fraction)
    return Split(train_q, test_q, train_r, test_r, seed)


@dataclass
class ValidationReport:
    findings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings


def validate_corpus(
    queries: list[Query],
    chunks: list[DocumentChunk],
    gold: Optional[list[GoldLabel]] = None,
) -> ValidationReport:
    """Diagnostic pass over a corpus; collects findings, never raises."""
    report = ValidationReport()
    qids: set[str] = set()
    for q in queries:
        if q.id in qids:
            report.findings.append(f"duplicate query id: {q.id}")
        qids.add(q.id)
        if not q.text.strip():
            report.findings.append(f"empty query text: {q.id}")
        if q.definition is not None and not q.definition.meaning.strip():
            report.findings.append(f"empty definition meaning for query: {q.id}")
    dids: set[str] = set()
    for c in chunks:
        key = f"{c.report_id}/{c.id}"
        if c.id in dids:
            report.findings.append(f"duplicate document id: {key}")
        dids.add(c.id)
        if not c.text.strip():
            report.findings.append(f"empty document text: {key}")
        if c.token_count < 0:
            report.findings.append(f"negative token count: {key}")
    for g in gold or []:
        if g.query_id not in qids:
            report.findings.append(f"gold references unknown query id: {g.query_id}")
        if g.doc_id not in dids:
            report.findings.append(f"gold references unknown doc id: {g.doc_id}")
        if not 0.0 <= g.grade <= 1.0:
            report.findings.append(
                f"gold grade out of range for ({g.query_id},{g.doc_id}): {g.grade}"
            )
        if g.binary == "irrelevant" and g.grade != 0.0:
            report.findings.append(
                f"irrelevant gold with nonzero grade: ({g.query_id},{g.doc_id})"
            )
    return report


# --- JSONL I/O -------------------------------------------------------------

def _definition_from_dict(d: dict) -> RelevanceDefinition:
    return RelevanceDefinition(
        meaning=d["meaning"],
        examples=list(d.get("examples", [])),
        provenance=d.get("provenance", "generated"),
    )


def _definition_to_dict(d: RelevanceDefinition) -> dict:
    return {"meaning": d.meaning, "examples": d.examples, "provenance": d.provenance}


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def load_queries(path: str | Path) -> list[Query]:
    queries = []
    for row in read_jsonl(path):
        definition = row.get("definition")
        queries.append(Query(
            id=row["id"], text=row["text"],
            definition=_definition_from_dict(definition) if definition else None,
        ))
    return queries


def save_queries(path: str | Path, queries: list[Query]) -> None:
    rows = []
    for q in queries:
        row: dict = {"id": q.id, "text": q.text}
        if q.definition is not None:
            row["definition"] = _definition_to_dict(q.definition)
        rows.append(row)
    write_jsonl(path, rows)


def load_chunks(path: str | Path) -> list[DocumentChunk]:
    return [
        DocumentChunk(
            id=row["id"], report_id=row["report_id"], text=row["text"],
            token_count=row.get("token_count", -1),
        )
        for row in read_jsonl(path)
    ]


def save_chunks(path: str | Path, chunks: list[DocumentChunk]) -> None:
    write_jsonl(path, (
        {"id": c.id, "report_id": c.report_id, "text": c.text, "token_count": c.token_count}
        for c in chunks
    ))


def load_gold(path: str | Path) -> list[GoldLabel]:
    return [
        GoldLabel(
            query_id=row["query_id"], doc_id=row["doc_id"], grade=float(row["grade"]),
            binary=row.get("binary"), uncertain=bool(row.get("uncertain", False)),
        )
        for row in read_jsonl(path)
    ]


def load_split(path: str | Path) -> Split:
    with open(path, encoding="utf-8") as f:
        d = json.load(f)
    return Split(
        train_queries=set(d["train_queries"]), test_queries=set(d["test_queries"]),
        train_reports=set(d["train_reports"]), test_reports=set(d["test_reports"]),
        seed=d["seed"],
    )


def save_split(path: str | Path, split: Split) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump({
            "train_queries": sorted(split.train_queries),
            "test_queries": sorted(split.test_queries),
            "train_reports": sorted(split.train_reports),
            "test_reports": sorted(split.test_reports),
            "seed": split.seed,
        }, f, indent=2, sort_keys=True)
        f.write("\n")
