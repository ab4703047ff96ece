"""Pointwise annotation with dual calibration, listwise baseline, and
per-query relevant-information proxies."""

from __future__ import annotations

import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .corpus import DocumentChunk, Query, QueryDocPair, RelevanceDefinition
from .gateway import CapabilityError, ChatRequest, ChatResponse, LLMGateway
from .prompting import (
    GUESS_LABEL,
    ParseError,
    PromptVariant,
    parse_listwise_response,
    parse_pointwise_response,
    render_listwise_prompt,
    render_pointwise_prompt,
)
from .retrieval import Ranking

log = logging.getLogger(__name__)


class ExtractionError(ValueError):
    pass


@dataclass
class Annotation:
    query_id: str
    doc_id: str
    guess: str  # "Yes" | "No"
    relevance_score: float
    confidence_ask: Optional[float] = None
    confidence_tok: Optional[float] = None
    reason: Optional[str] = None
    model: str = ""
    variant: str = "point-ask-d"


@dataclass
class AnnotationError:
    query_id: str
    doc_id: str
    error: str
    raw_text: str = ""


def derive_relevance_score(guess: str, confidence: float) -> float:
    """Yes keeps the confidence; No takes the complement."""
    if not 0.0 <= confidence <= 1.0:
        raise ValueError(f"confidence out of range: {confidence}")
    return confidence if guess == "Yes" else 1.0 - confidence


def extract_tok_confidence(response: ChatResponse) -> float:
    """Probability of the realized Yes/No token after the final guess label."""
    if not response.tokens:
        raise CapabilityError("response carries no token logprobs")
    text = "".join(surface for surface, _ in response.tokens)
    label_pos = text.rfind(GUESS_LABEL)
    if label_pos < 0:
        raise ExtractionError("completion has no guess label")
    answer_start = label_pos + len(GUESS_LABEL)
    offset = 0
    for surface, logprob in response.tokens:
        token_end = offset + len(surface)
        if token_end > answer_start:
            stripped = re.sub(r"[^a-z]", "", surface.lower())
            if stripped in ("yes", "no"):
                return math.exp(logprob)
        offset = token_end
    raise ExtractionError("no yes/no token found after guess label")


def annotate_pair(
    pair: QueryDocPair,
    query: Query,
    chunk: DocumentChunk,
    variant: PromptVariant,
    gateway: LLMGateway,
    calibration: str = "both",  # ask | tok | both
    definition: Optional[RelevanceDefinition] = None,
    model: str = "",
) -> Annotation:
    if calibration not in ("ask", "tok", "both"):
        raise ValueError(f"unknown calibration source: {calibration}")
    definition = definition or query.definition
    prompt = render_pointwise_prompt(
        question=query.text, chunk_text=chunk.text,
        variant=variant, definition=definition)
    want_tok = calibration in ("tok", "both")
    response = gateway.chat_complete(ChatRequest(
        model=model, user=prompt, want_logprobs=want_tok))
    parsed = parse_pointwise_response(response.text, variant)

    confidence_ask = parsed.confidence if calibration in ("ask", "both") else None
    confidence_tok = extract_tok_confidence(response) if want_tok else None
    # Tok is the primary calibration source whenever logprobs are available.
    primary = confidence_tok if confidence_tok is not None else confidence_ask
    return Annotation(
        query_id=pair.query_id, doc_id=pair.doc_id,
        guess=parsed.guess,
        relevance_score=derive_relevance_score(parsed.guess, primary),
        confidence_ask=confidence_ask, confidence_tok=confidence_tok,
        reason=parsed.reason, model=response.model, variant=variant.label(),
    )


@dataclass
class CorpusAnnotationResult:
    annotations: list[Annotation]
    errors: list[AnnotationError] = field(default_factory=list)


def annotate_corpus(
    pairs: list[QueryDocPair],
    queries: dict[str, Query],
    chunks: dict[str, DocumentChunk],
    variant: PromptVariant,
    gateway: LLMGateway,
    calibration: str = "both",
    model: str = "",
    parallelism: int = 1,
) -> CorpusAnnotationResult:
    """Annotate all pairs; output order equals input order for any parallelism.

    Per-pair parse and extraction failures go to the error ledger; the run
    only aborts on configuration problems (unknown ids, bad settings).
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    for pair in pairs:
        if pair.query_id not in queries:
            raise KeyError(f"pair references unknown query id: {pair.query_id}")
        if pair.doc_id not in chunks:
            raise KeyError(f"pair references unknown doc id: {pair.doc_id}")

    def work(pair: QueryDocPair):
        try:
            return annotate_pair(
                pair, queries[pair.query_id], chunks[pair.doc_id],
                variant, gateway, calibration=calibration, model=model)
        except (ParseError, ExtractionError) as exc:
            raw = getattr(exc, "raw_text", "")
            return AnnotationError(pair.query_id, pair.doc_id, str(exc), raw)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        outcomes = list(pool.map(work, pairs))

    result = CorpusAnnotationResult(annotations=[])
    for outcome in outcomes:
        if isinstance(outcome, AnnotationError):
            result.errors.append(outcome)
            log.warning("annotation failed for (%s,%s): %s",
                        outcome.query_id, outcome.doc_id, outcome.error)
        else:
            result.annotations.append(outcome)
    return result


def listwise_rerank(
    query: Query,
    initial: Ranking,
    chunks: dict[str, DocumentChunk],
    gateway: LLMGateway,
    window: int = 10,
    step: int = 5,
    definition: Optional[RelevanceDefinition] = None,
    model: str = "",
) -> Ranking:
    """Sliding-window permutation pass from list tail toward the head.

    Each window is reranked in place via the listwise prompt; a window whose
    response fails to parse keeps its prior order.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    if not 1 <= step <= window:
        raise ValueError("step must be in [1, window]")
    order = initial.doc_ids()
    n = len(order)
    start = max(0, n - window)
    while True:
        ids = order[start:start + window]
        passages = [chunks[doc_id].text for doc_id in ids]
        system, user = render_listwise_prompt(query.text, passages, definition)
        response = gateway.chat_complete(ChatRequest(
            model=model, system=system, user=user))
        try:
            permutation = parse_listwise_response(response.text, len(ids))
        except ParseError as exc:
            log.warning("listwise window at %d left unchanged: %s", start, exc)
        else:
            order[start:start + window] = [ids[i - 1] for i in permutation]
        if start == 0:
            break
        start = max(0, start - step)
    # The method yields only an order; synthesize descending scores in (0,1].
    entries = [(doc_id, (n - i) / n) for i, doc_id in enumerate(order)]
    return Ranking(query_id=query.id, entries=entries)


def relevant_info_proxy(annotations: list[Annotation]) -> list[tuple[str, float]]:
    """Mean relevance score per query, sorted descending; a proxy for how much
    relevant information the corpus holds for each question."""
    by_query: dict[str, list[float]] = {}
    for ann in annotations:
        by_query.setdefault(ann.query_id, []).append(ann.relevance_score)
    means = [(qid, sum(scores) / len(scores)) for qid, scores in by_query.items()]
    means.sort(key=lambda e: (-e[1], e[0]))
    return means


# --- JSONL I/O -------------------------------------------------------------

def annotation_to_dict(a: Annotation) -> dict:
    row: dict = {
        "query_id": a.query_id, "doc_id": a.doc_id, "guess": a.guess,
        "relevance_score": a.relevance_score, "model": a.model,
        "variant": a.variant,
    }
    if a.confidence_ask is not None:
        row["confidence_ask"] = a.confidence_ask
    if a.confidence_tok is not None:
        row["confidence_tok"] = a.confidence_tok
    if a.reason is not None:
        row["reason"] = a.reason
    return row


def annotation_from_dict(row: dict) -> Annotation:
    return Annotation(
        query_id=row["query_id"], doc_id=row["doc_id"], guess=row["guess"],
        relevance_score=float(row["relevance_score"]),
        confidence_ask=row.get("confidence_ask"),
        confidence_tok=row.get("confidence_tok"),
        reason=row.get("reason"), model=row.get("model", ""),
        variant=row.get("variant", "point-ask-d"),
    )
