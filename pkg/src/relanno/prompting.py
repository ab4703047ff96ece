"""Prompt template rendering and structured response parsing.

Templates live as text assets under relanno/templates so they can be
versioned and iterated on without code changes.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

from .corpus import RelevanceDefinition

log = logging.getLogger(__name__)

QA_FIXED_DEFINITION_MEANING = (
    "The <paragraph> is useful only if some of its content directly answer the "
    "<question> or at least a part of the <question>. Content with relevant "
    "topic but without direct answers are not useful."
)


class ParseError(ValueError):
    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


@dataclass(frozen=True)
class PromptVariant:
    ranking_mode: str = "pointwise"  # pointwise | listwise
    cot: bool = False
    with_definition: bool = True
    confidence_phrasing: str = "ask_confidence"  # ask_confidence | ask_probability

    def label(self) -> str:
        if self.ranking_mode == "listwise":
            return "list-d" if self.with_definition else "list"
        parts = ["point"]
        if self.cot:
            parts.append("cot")
        parts.append("prob" if self.confidence_phrasing == "ask_probability" else "ask")
        if self.with_definition:
            parts.append("d")
        return "-".join(parts)

    @classmethod
    def from_label(cls, label: str) -> "PromptVariant":
        parts = label.lower().split("-")
        if parts[0] == "list":
            return cls(ranking_mode="listwise", with_definition="d" in parts)
        if parts[0] != "point":
            raise ValueError(f"unknown variant label: {label}")
        return cls(
            ranking_mode="pointwise",
            cot="cot" in parts,
            with_definition="d" in parts,
            confidence_phrasing="ask_probability" if "prob" in parts else "ask_confidence",
        )


@dataclass
class ParsedPointwise:
    guess: str  # "Yes" | "No"
    confidence: float
    reason: Optional[str] = None
    warnings: list[str] = field(default_factory=list)


def load_template(name: str) -> str:
    return resources.files("relanno.templates").joinpath(f"{name}.txt").read_text(
        encoding="utf-8")


def render_definition_prompt(question: str) -> str:
    if not question.strip():
        raise ValueError("question must be non-empty")
    return load_template("definition").format(question=question)


def render_improved_definition_prompt(question: str, gold_examples: list[str]) -> str:
    if not question.strip():
        raise ValueError("question must be non-empty")
    if not gold_examples:
        raise ValueError("improved definition prompt needs at least one gold example")
    examples = "\n".join(gold_examples)
    return load_template("definition_improved").format(
        question=question, examples=examples)


def render_fixed_qa_definition() -> RelevanceDefinition:
    """Constant definition used when annotating QA-style datasets."""
    return RelevanceDefinition(
        meaning=QA_FIXED_DEFINITION_MEANING, examples=[], provenance="fixed")


def _pointwise_template_name(variant: PromptVariant) -> str:
    if not variant.with_definition:
        return "pointwise_nodef_cot" if variant.cot else "pointwise_nodef"
    if variant.confidence_phrasing == "ask_probability":
        return "pointwise_prob_cot" if variant.cot else "pointwise_prob"
    return "pointwise_cot" if variant.cot else "pointwise"


def render_pointwise_prompt(
    question: str,
    chunk_text: str,
    variant: PromptVariant,
    definition: Optional[RelevanceDefinition] = None,
) -> str:
    if variant.ranking_mode != "pointwise":
        raise ValueError("render_pointwise_prompt needs a pointwise variant")
    if variant.with_definition and definition is None:
        raise ValueError("variant requires a relevance definition but none was given")
    template = load_template(_pointwise_template_name(variant))
    fields = {"question": question, "paragraph_chunk": chunk_text}
    if variant.with_definition:
        fields["background_information"] = definition.as_text()
    return template.format(**fields)


def render_listwise_prompt(
    question: str,
    passages: list[str],
    definition: Optional[RelevanceDefinition] = None,
) -> tuple[str, str]:
    """Returns (system, user) messages with passages numbered [1]..[n]."""
    if not passages:
        raise ValueError("need at least one passage")
    numbered = "\n".join(f"[{i}] {p}" for i, p in enumerate(passages, start=1))
    system = load_template("listwise_system").strip()
    if definition is not None:
        user = load_template("listwise_user_def").format(
            num=len(passages), query=question, passages=numbered,
            relevance_definition=definition.as_text())
    else:
        user = load_template("listwise_user").format(
            num=len(passages), query=question, passages=numbered)
    return system, user


# --- response parsing ------------------------------------------------------

MEANING_ANCHOR = "Meaning of the question:"
EXAMPLES_ANCHOR = "Examples of information that the question is looking for:"


def parse_definition_response(text: str,
                              provenance: str = "generated") -> RelevanceDefinition:
    """Split a definition completion into meaning text and numbered examples."""
    idx = text.find(MEANING_ANCHOR)
    if idx < 0:
        raise ParseError("no meaning anchor in definition response", raw_text=text)
    body = text[idx + len(MEANING_ANCHOR):]
    ex_idx = body.find(EXAMPLES_ANCHOR)
    if ex_idx < 0:
        meaning, examples_block = body, ""
    else:
        meaning, examples_block = body[:ex_idx], body[ex_idx + len(EXAMPLES_ANCHOR):]
    meaning = meaning.strip()
    if not meaning:
        raise ParseError("empty meaning in definition response", raw_text=text)
    examples = [
        re.sub(r"^\d+\.\s*", "", line.strip())
        for line in examples_block.splitlines()
        if re.match(r"^\s*\d+\.", line)
    ]
    return RelevanceDefinition(meaning=meaning, examples=examples,
                               provenance=provenance)

GUESS_LABEL = "[Guess]:"
REASON_LABEL = "[Reason]:"
CONFIDENCE_LABELS = ("[Confidence]:", "[Probability Helpful]:")
_FLOAT_RE = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?")


def _last_field(text: str, label: str) -> Optional[str]:
    """Text after the last occurrence of label, up to the next bracketed label."""
    idx = text.rfind(label)
    if idx < 0:
        return None
    rest = text[idx + len(label):]
    cut = len(rest)
    for other in (GUESS_LABEL, REASON_LABEL) + CONFIDENCE_LABELS:
        pos = rest.find(other)
        if pos >= 0:
            cut = min(cut, pos)
    return rest[:cut]


def _normalize_guess(raw: str) -> Optional[str]:
    cleaned = re.sub(r"[^a-z]", "", raw.strip().split("\n")[0].lower())
    if cleaned.startswith("yes"):
        return "Yes"
    if cleaned.startswith("no"):
        return "No"
    return None


def parse_pointwise_response(text: str, variant: PromptVariant) -> ParsedPointwise:
    """Extract guess/confidence (and reason for CoT) from a model completion.

    The last occurrence of each label wins: CoT text occasionally echoes
    labels before the final answer block.
    """
    guess_raw = _last_field(text, GUESS_LABEL)
    if guess_raw is None:
        raise ParseError("no [Guess] field found", raw_text=text)
    guess = _normalize_guess(guess_raw)
    if guess is None:
        raise ParseError(f"unparseable guess: {guess_raw.strip()!r}", raw_text=text)

    conf_raw = None
    for label in CONFIDENCE_LABELS:
        candidate = _last_field(text, label)
        if candidate is not None:
            conf_raw = candidate
            break
    if conf_raw is None:
        raise ParseError("no confidence field found", raw_text=text)
    match = _FLOAT_RE.search(conf_raw)
    if match is None:
        raise ParseError(f"unparseable confidence: {conf_raw.strip()!r}", raw_text=text)
    confidence = float(match.group(0))

    warnings: list[str] = []
    if not 0.0 <= confidence <= 1.0:
        clamped = min(max(confidence, 0.0), 1.0)
        warnings.append(f"confidence {confidence} clamped to {clamped}")
        log.warning("confidence %s out of range, clamped to %s", confidence, clamped)
        confidence = clamped

    reason = None
    if variant.cot:
        reason_raw = _last_field(text, REASON_LABEL)
        if reason_raw is not None:
            reason = reason_raw.strip()
    return ParsedPointwise(guess=guess, confidence=confidence,
                           reason=reason, warnings=warnings)


def format_pointwise_completion(guess: str, confidence: float,
                                reason: Optional[str] = None) -> str:
    """Inverse of parse_pointwise_response for valid inputs."""
    lines = []
    if reason is not None:
        lines.append(f"{REASON_LABEL} {reason}")
    lines.append(f"{GUESS_LABEL} {guess}")
    lines.append(f"[Confidence]: {confidence}")
    return "\n".join(lines)


def parse_listwise_response(text: str, n: int) -> list[int]:
    """Extract a permutation of 1..n from '[4] > [2] > ...' style output.

    Duplicates keep their first occurrence; missing identifiers are appended
    in original order so the result is always a full permutation.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    found = [int(m) for m in re.findall(r"\[(\d+)\]", text)]
    if not found:
        raise ParseError("no bracketed identifiers in listwise response", raw_text=text)
    seen: list[int] = []
    for ident in found:
        if 1 <= ident <= n and ident not in seen:
            seen.append(ident)
    seen.extend(i for i in range(1, n + 1) if i not in seen)
    return seen
