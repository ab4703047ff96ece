import json
import math

import pytest

from relanno.corpus import DocumentChunk, GoldLabel, Query, RelevanceDefinition
from relanno.gateway import GatewayConfig, LLMGateway
from relanno.mockserver import MockLLMServer


def make_definition(topic="the firm's Scope 3 emission"):
    return RelevanceDefinition(
        meaning=f"The question is asking for information about {topic}.",
        examples=[f"Statements quantifying {topic}.",
                  f"Targets or plans concerning {topic}."],
        provenance="generated",
    )


@pytest.fixture
def fixture_queries():
    return [
        Query(id="q1", text="What is the firm's Scope 3 emission?",
              definition=make_definition()),
        Query(id="q2", text="Does the report discuss water usage?",
              definition=make_definition("water usage in operations")),
    ]


@pytest.fixture
def fixture_chunks():
    return [
        DocumentChunk(id="d1", report_id="r1",
                      text="SCOPE3DOC The firm reports Scope 3 emissions of 1.2 Mt CO2e."),
        DocumentChunk(id="d2", report_id="r1",
                      text="WATERDOC Water usage fell by 10 percent across plants."),
        DocumentChunk(id="d3", report_id="r2",
                      text="GOVDOC The board oversees governance and audit matters."),
        DocumentChunk(id="d4", report_id="r2",
                      text="MIXDOC Emissions and water management are reviewed yearly."),
    ]


@pytest.fixture
def fixture_gold():
    return [
        GoldLabel("q1", "d1", grade=1.0, binary="relevant"),
        GoldLabel("q1", "d2", grade=0.0, binary="irrelevant"),
        GoldLabel("q1", "d3", grade=0.0, binary="irrelevant"),
        GoldLabel("q1", "d4", grade=0.5, binary="partial", uncertain=True),
        GoldLabel("q2", "d1", grade=0.0, binary="irrelevant"),
        GoldLabel("q2", "d2", grade=1.0, binary="relevant"),
        GoldLabel("q2", "d3", grade=0.0, binary="irrelevant"),
        GoldLabel("q2", "d4", grade=0.5, binary="partial", uncertain=True),
    ]


def yes_no_logprob_tokens(text, answer_logprob):
    """Token list concatenating exactly to text, with the Yes/No answer token
    after the guess label carrying answer_logprob."""
    import re
    tokens = []
    seen_guess = False
    for surface in re.findall(r"\s*\S+|\s+$", text):
        if seen_guess and surface.strip().rstrip(".,") in ("Yes", "No"):
            tokens.append([surface, answer_logprob])
            seen_guess = False
            continue
        if "[Guess]:" in surface or surface.strip() == "[Guess]:":
            seen_guess = True
        tokens.append([surface, -0.05])
    return tokens


CHAT_RULES = [
    {"match": "RETRYDOC", "text": "[Guess]: Yes\n[Confidence]: 0.6",
     "status_sequence": [429, 200]},
    {"match": "MALFORMEDDOC", "text": "I cannot decide about this passage."},
    {"match": "SCOPE3DOC", "text": "[Guess]: Yes\n[Confidence]: 0.9",
     "logprobs": yes_no_logprob_tokens("[Guess]: Yes\n[Confidence]: 0.9",
                                       math.log(0.8))},
    {"match": "WATERDOC", "text": "[Guess]: Yes\n[Confidence]: 0.8"},
    {"match": "GOVDOC", "text": "[Guess]: No\n[Confidence]: 0.95"},
    {"match": "MIXDOC", "text": "[Guess]: Yes\n[Confidence]: 0.55"},
    {"match": "LISTREV", "text": "[2] > [1]"},
    {"match": "LISTID", "text": "[1] > [2]"},
    {"match": "LISTBAD", "text": "these passages defy comparison"},
    {"match": "An analyst posts a <question> about a climate report",
     "text": ("Meaning of the question: The question asks about a reported "
              "quantity.\n"
              "Examples of information that the question is looking for:\n"
              "1. A disclosed figure.\n2. A stated target.")},
]


@pytest.fixture(scope="session")
def fixtures_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("chat_fixtures")
    with open(path / "rules.json", "w", encoding="utf-8") as f:
        json.dump(CHAT_RULES, f)
    return path


@pytest.fixture(scope="session")
def mock_server(fixtures_dir):
    with MockLLMServer(fixtures_dir=fixtures_dir) as server:
        yield server


@pytest.fixture
def gateway(mock_server, tmp_path):
    mock_server.reset_counters()
    return LLMGateway(GatewayConfig(
        base_url=mock_server.base_url,
        cache_dir=str(tmp_path / "cache"),
        backoff_base=0.01,
    ))


@pytest.fixture
def uncached_gateway(mock_server):
    mock_server.reset_counters()
    return LLMGateway(GatewayConfig(
        base_url=mock_server.base_url, cache_dir=None, backoff_base=0.01))
