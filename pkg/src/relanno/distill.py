"""Export teacher annotations as fine-tune-ready chat records."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .annotator import Annotation
from .corpus import DocumentChunk, Query, Split
from .prompting import PromptVariant, format_pointwise_completion, render_pointwise_prompt

log = logging.getLogger(__name__)


class LeakageError(RuntimeError):
    """A training record references a test-split query or report."""


@dataclass
class TrainingRecord:
    user: str
    assistant: str
    meta: dict
    system: Optional[str] = None

    def as_dict(self) -> dict:
        row: dict = {"user": self.user, "assistant": self.assistant, "meta": self.meta}
        if self.system is not None:
            row["system"] = self.system
        return row


@dataclass
class ExportManifest:
    count: int
    yes_count: int
    no_count: int
    skipped: int
    variant: str
    teacher_model: str
    template_hashes: dict[str, str]

    @property
    def yes_fraction(self) -> float:
        return self.yes_count / self.count if self.count else 0.0

    def as_dict(self) -> dict:
        return {
            "count": self.count, "yes_count": self.yes_count,
            "no_count": self.no_count, "skipped": self.skipped,
            "yes_fraction": self.yes_fraction, "variant": self.variant,
            "teacher_model": self.teacher_model,
            "template_hashes": self.template_hashes,
        }


def _template_hashes() -> dict[str, str]:
    hashes = {}
    for entry in sorted(resources.files("relanno.templates").iterdir(),
                        key=lambda e: e.name):
        if entry.name.endswith(".txt"):
            digest = hashlib.sha256(entry.read_bytes()).hexdigest()
            hashes[entry.name] = digest
    return hashes


def build_training_record(
    annotation: Annotation,
    query: Query,
    chunk: DocumentChunk,
    variant: PromptVariant,
) -> Optional[TrainingRecord]:
    """One chat-format record, or None for a CoT annotation missing its reason."""
    if variant.cot and annotation.reason is None:
        log.warning("skipping (%s,%s): CoT variant but no reason captured",
                    annotation.query_id, annotation.doc_id)
        return None
    prompt = render_pointwise_prompt(
        question=query.text, chunk_text=chunk.text,
        variant=variant, definition=query.definition)
    # Completion confidence targets what the student should verbalize: the
    # teacher's Ask confidence when present, else the derived score.
    confidence = annotation.confidence_ask
    if confidence is None:
        confidence = (annotation.relevance_score if annotation.guess == "Yes"
                      else 1.0 - annotation.relevance_score)
    completion = format_pointwise_completion(
        guess=annotation.guess, confidence=confidence,
        reason=annotation.reason if variant.cot else None)
    return TrainingRecord(
        user=prompt, assistant=completion,
        meta={
            "query_id": annotation.query_id, "doc_id": annotation.doc_id,
            "variant": variant.label(), "teacher_model": annotation.model,
        },
    )


def export_training_data(
    annotations: list[Annotation],
    queries: dict[str, Query],
    chunks: dict[str, DocumentChunk],
    split: Split,
    variant: PromptVariant,
    out_path: str | Path,
    teacher_model: str = "",
) -> ExportManifest:
    """Write train.jsonl; hard-fails on any test-split query or report."""
    records = []
    skipped = 0
    for ann in annotations:
        if ann.query_id in split.test_queries:
            raise LeakageError(
                f"annotation for test-split query {ann.query_id} in training export")
        chunk = chunks.get(ann.doc_id)
        if chunk is None:
            raise KeyError(f"annotation references unknown doc id: {ann.doc_id}")
        if chunk.report_id in split.test_reports:
            raise LeakageError(
                f"annotation for doc {ann.doc_id} from test-split report "
                f"{chunk.report_id} in training export")
        record = build_training_record(ann, queries[ann.query_id], chunk, variant)
        if record is None:
            skipped += 1
            continue
        records.append(record)

    with open(out_path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.as_dict(), ensure_ascii=False, sort_keys=True)
                    + "\n")
    yes = sum(1 for r in records if "[Guess]: Yes" in r.assistant)
    return ExportManifest(
        count=len(records), yes_count=yes, no_count=len(records) - yes,
        skipped=skipped, variant=variant.label(),
        teacher_model=teacher_model or (annotations[0].model if annotations else ""),
        template_hashes=_template_hashes(),
    )


@dataclass
class BalanceReport:
    yes_count: int
    no_count: int
    yes_fraction: float
    flagged: bool
    per_query: dict[str, dict[str, int]] = field(default_factory=dict)
    empty_queries: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "yes_count": self.yes_count, "no_count": self.no_count,
            "yes_fraction": self.yes_fraction, "flagged": self.flagged,
            "per_query": self.per_query, "empty_queries": self.empty_queries,
        }


def audit_balance(records: list[TrainingRecord],
                  band: tuple[float, float] = (0.25, 0.75),
                  expected_queries: Optional[list[str]] = None) -> BalanceReport:
    """Yes/No balance of an export; flags ratios outside the accepted band."""
    if not records:
        raise ValueError("audit_balance needs at least one record")
    per_query: dict[str, dict[str, int]] = {}
    yes = 0
    for record in records:
        guess_yes = "[Guess]: Yes" in record.assistant
        yes += guess_yes
        qid = record.meta.get("query_id", "?")
        bucket = per_query.setdefault(qid, {"yes": 0, "no": 0})
        bucket["yes" if guess_yes else "no"] += 1
    fraction = yes / len(records)
    empty = sorted(set(expected_queries or []) - set(per_query))
    return BalanceReport(
        yes_count=yes, no_count=len(records) - yes, yes_fraction=fraction,
        flagged=not band[0] <= fraction <= band[1],
        per_query=per_query, empty_queries=empty,
    )


def load_training_records(path: str | Path) -> list[TrainingRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            records.append(TrainingRecord(
                user=row["user"], assistant=row["assistant"],
                meta=row.get("meta", {}), system=row.get("system")))
    return records
