"""Balanced pair sampling and confidence-stratified disagreement sampling."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Optional

from .corpus import QueryDocPair
from .retrieval import Ranking

# Confidence bins for disagreement stratification; half-open, top bin closed.
BIN_EDGES = [
    ("lt90", 0.0, 0.90),
    ("b90_95", 0.90, 0.95),
    ("b95_98", 0.95, 0.98),
    ("b98_100", 0.98, 1.0),
]


@dataclass
class Disagreement:
    query_id: str
    doc_id: str
    model_guess: str       # relevant | irrelevant
    original_label: str    # relevant | irrelevant
    confidence: float
    bin: str


@dataclass
class SampleResult:
    pairs: list[QueryDocPair]
    warnings: list[str] = field(default_factory=list)


def confidence_bin(confidence: float) -> str:
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence out of range: {confidence}")
    for name, lo, hi in BIN_EDGES[:-1]:
        if lo <= confidence < hi:
            return name
    return BIN_EDGES[-1][0]


def balanced_sample(ranking: Ranking, k: int, per_side: int, seed: int,
                    fill_policy: str = "strict") -> SampleResult:
    """Sample per_side docs from ranks <= k and per_side from ranks > k.

    fill_policy="fill" borrows from the other side when one side is short;
    "strict" keeps the deficit and records a shortfall warning.
    """
    if k < 1 or per_side < 1:
        raise ValueError("k and per_side must be at least 1")
    if fill_policy not in ("strict", "fill"):
        raise ValueError(f"unknown fill_policy: {fill_policy}")
    if not ranking.entries:
        raise ValueError(f"empty ranking for query {ranking.query_id}")

    ranked = [(doc_id, rank) for rank, (doc_id, _) in enumerate(ranking.entries, start=1)]
    inside = ranked[:k]
    outside = ranked[k:]
    rng = random.Random(seed)
    take_in = rng.sample(inside, min(per_side, len(inside)))
    take_out = rng.sample(outside, min(per_side, len(outside)))

    warnings: list[str] = []
    deficit_in = per_side - len(take_in)
    deficit_out = per_side - len(take_out)
    if fill_policy == "fill":
        if deficit_in > 0:
            spare = [e for e in outside if e not in take_out]
            take_in += rng.sample(spare, min(deficit_in, len(spare)))
        if deficit_out > 0:
            spare = [e for e in inside if e not in take_in]
            take_out += rng.sample(spare, min(deficit_out, len(spare)))
    else:
        if deficit_in > 0:
            warnings.append(
                f"query {ranking.query_id}: top-{k} side short by {deficit_in}")
        if deficit_out > 0:
            warnings.append(
                f"query {ranking.query_id}: outside-top-{k} side short by {deficit_out}")

    pairs = [
        QueryDocPair(query_id=ranking.query_id, doc_id=doc_id, retriever_rank=rank)
        for doc_id, rank in sorted(take_in + take_out, key=lambda e: e[1])
    ]
    return SampleResult(pairs=pairs, warnings=warnings)


def stratify_disagreements(
    annotations: list[dict],
    original_labels: dict[tuple[str, str], str],
    per_bin: int,
    seed: int,
) -> tuple[list[Disagreement], list[str]]:
    """Keep (query, doc) pairs where the model guess contradicts the original
    label, partition by confidence bin, and sample per_bin from each bin.

    annotations: dicts with query_id, doc_id, guess ("Yes"/"No"), confidence.
    original_labels: (query_id, doc_id) -> "relevant" | "irrelevant".
    """
    disagreements: dict[str, list[Disagreement]] = {name: [] for name, _, _ in BIN_EDGES}
    for ann in annotations:
        key = (ann["query_id"], ann["doc_id"])
        original = original_labels.get(key)
        if original is None:
            continue
        model = "relevant" if ann["guess"] == "Yes" else "irrelevant"
        if model == original:
            continue
        conf = float(ann["confidence"])
        disagreements[confidence_bin(conf)].append(Disagreement(
            query_id=ann["query_id"], doc_id=ann["doc_id"],
            model_guess=model, original_label=original,
            confidence=conf, bin=confidence_bin(conf),
        ))

    rng = random.Random(seed)
    sampled: list[Disagreement] = []
    warnings: list[str] = []
    for name, _, _ in BIN_EDGES:
        bucket = disagreements[name]
        if len(bucket) < per_bin:
            warnings.append(f"bin {name}: only {len(bucket)} of {per_bin} disagreements")
        take = rng.sample(bucket, min(per_bin, len(bucket)))
        sampled.extend(sorted(take, key=lambda d: (d.query_id, d.doc_id)))
    return sampled, warnings


@dataclass
class AccuracyCell:
    count: int
    accuracy: Optional[float]  # percentage; None when the stratum is empty


def disagreement_accuracy_table(
    audited: list[tuple[Disagreement, str]],
    cutoff: float = 0.95,
    all_confidences: Optional[list[float]] = None,
) -> dict:
    """Accuracy of the model side of each disagreement, split at the cutoff.

    audited: (disagreement, human_verdict) where human_verdict is "model" or
    "original". Reported for All / original-relevant / original-irrelevant,
    for confidence <= cutoff and > cutoff.
    """
    def cell(items: list[tuple[Disagreement, str]]) -> AccuracyCell:
        if not items:
            return AccuracyCell(count=0, accuracy=None)
        wins = sum(1 for _, verdict in items if verdict == "model")
        return AccuracyCell(count=len(items), accuracy=100.0 * wins / len(items))

    table: dict = {}
    for stratum, pred in (("low_conf", lambda d: d.confidence <= cutoff),
                          ("high_conf", lambda d: d.confidence > cutoff)):
        items = [(d, v) for d, v in audited if pred(d)]
        table[stratum] = {
            "all": cell(items),
            "original_relevant": cell(
                [(d, v) for d, v in items if d.original_label == "relevant"]),
            "original_irrelevant": cell(
                [(d, v) for d, v in items if d.original_label == "irrelevant"]),
        }
    table["cutoff"] = cutoff
    if all_confidences:
        high = sum(1 for c in all_confidences if c > cutoff)
        table["high_conf_fraction"] = high / len(all_confidences)
    return table


def disagreement_to_dict(d: Disagreement) -> dict:
    return {
        "query_id": d.query_id, "doc_id": d.doc_id,
        "model_guess": d.model_guess, "original_label": d.original_label,
        "confidence": d.confidence, "bin": d.bin,
    }


def disagreement_from_dict(row: dict) -> Disagreement:
    return Disagreement(
        query_id=row["query_id"], doc_id=row["doc_id"],
        model_guess=row["model_guess"], original_label=row["original_label"],
        confidence=float(row["confidence"]), bin=row["bin"],
    )
