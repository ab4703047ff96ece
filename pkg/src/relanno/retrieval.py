"""Dense-retrieval ranking over chunks, plus top-k and threshold retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import DocumentChunk, Query, read_jsonl, write_jsonl
from .gateway import LLMGateway


@dataclass
class Ranking:
    query_id: str
    entries: list[tuple[str, float]]  # (doc_id, score), descending by score

    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.entries]


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (norm_a * norm_b)


def rank_documents(query: Query, chunks: list[DocumentChunk],
                   gateway: LLMGateway) -> Ranking:
    """Embed query and chunks, score by cosine, sort descending.

    Ties break lexicographically by doc_id so rankings are reproducible.
    """
    if not chunks:
        raise ValueError("rank_documents needs at least one chunk")
    query_vec = gateway.embed([query.text]).vectors[0]
    doc_vecs = gateway.embed([c.text for c in chunks]).vectors
    scored = [
        (chunk.id, cosine_similarity(query_vec, vec))
        for chunk, vec in zip(chunks, doc_vecs)
    ]
    scored.sort(key=lambda e: (-e[1], e[0]))
    return Ranking(query_id=query.id, entries=scored)


def retrieve_top_k(ranking: Ranking, k: int) -> list[str]:
    if k < 1:
        raise ValueError("k must be at least 1")
    return ranking.doc_ids()[:k]


def retrieve_by_threshold(scores: list[tuple[str, float]], theta: float) -> list[str]:
    """All doc ids with relevance score >= theta, descending by score."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must be in [0,1]")
    kept = [(doc_id, s) for doc_id, s in scores if s >= theta]
    kept.sort(key=lambda e: (-e[1], e[0]))
    return [doc_id for doc_id, _ in kept]


def load_rankings(path: str | Path) -> list[Ranking]:
    return [
        Ranking(query_id=row["query_id"],
                entries=[(doc_id, float(score)) for doc_id, score in row["entries"]])
        for row in read_jsonl(path)
    ]


def save_rankings(path: str | Path, rankings: list[Ranking]) -> None:
    write_jsonl(path, (
        {"query_id": r.query_id, "entries": [[d, s] for d, s in r.entries]}
        for r in rankings
    ))
