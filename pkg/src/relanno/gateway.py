"""Client for OpenAI-style chat-completion and embedding endpoints.

Captures per-token log probabilities, retries transient failures with
exponential backoff, bounds in-flight concurrency, and caches raw endpoint
responses on disk so corpus-scale runs are cheap to resume.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests

log = logging.getLogger(__name__)

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


class TransportError(RuntimeError):
    """Endpoint unreachable or retries exhausted."""


class CapabilityError(RuntimeError):
    """Endpoint cannot provide a required feature (e.g. token logprobs)."""


@dataclass(frozen=True)
class ChatRequest:
    model: str
    user: str
    system: Optional[str] = None
    temperature: float = 0.0
    max_output_tokens: int = 1024
    want_logprobs: bool = False


@dataclass
class ChatResponse:
    text: str
    tokens: list[tuple[str, float]]
    model: str
    cached: bool = False


@dataclass
class EmbeddingResponse:
    vectors: list[list[float]]
    model: str
    cached: bool = False


def cache_key(kind: str, model: str, payload: object) -> str:
    """Stable content hash over everything that determines an endpoint answer."""
    blob = json.dumps({"kind": kind, "model": model, "payload": payload},
                      sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class DiskCache:
    """Write-once JSON cache keyed by content hash."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> Optional[dict]:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as f:
            return json.load(f)

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            path = self._path(key)
            if path.exists():
                return
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(value, f, ensure_ascii=False)
            tmp.replace(path)


@dataclass
class GatewayConfig:
    base_url: str
    chat_model: str = "gpt-4"
    embedding_model: str = "text-embedding-3-small"
    api_key_env: str = "RELANNO_API_KEY"
    cache_dir: Optional[str] = None
    max_attempts: int = 4
    backoff_base: float = 0.5
    max_in_flight: int = 8
    timeout: float = 60.0


class LLMGateway:
    """Thread-safe handle to chat + embedding endpoints with caching."""

    def __init__(self, config: GatewayConfig):
        self.config = config
        self.cache = DiskCache(config.cache_dir) if config.cache_dir else None
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._session = requests.Session()
        self.retry_count = 0
        self.network_calls = 0
        self._counter_lock = threading.Lock()

    # --- transport ---------------------------------------------------------

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, body: dict) -> dict:
        url = self.config.base_url.rstrip("/") + path
        last_error: Optional[str] = None
        for attempt in range(self.config.max_attempts):
            if attempt:
                delay = self.config.backoff_base * (2 ** (attempt - 1))
                time.sleep(delay)
                with self._counter_lock:
                    self.retry_count += 1
            try:
                with self._semaphore:
                    with self._counter_lock:
                        self.network_calls += 1
                    resp = self._session.post(
                        url, json=body, headers=self._headers(),
                        timeout=self.config.timeout,
                    )
            except requests.RequestException as exc:
                last_error = str(exc)
                log.warning("request to %s failed (%s), attempt %d", url, exc, attempt + 1)
                continue
            if resp.status_code == 200:
                return resp.json()
            last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
            if resp.status_code not in RETRYABLE_STATUS:
                raise TransportError(f"endpoint error at {url}: {last_error}")
            log.warning("retryable status from %s: %s", url, resp.status_code)
        raise TransportError(f"retries exhausted for {url}: {last_error}")

    # --- chat --------------------------------------------------------------

    def chat_complete(self, request: ChatRequest) -> ChatResponse:
        if not request.user.strip():
            raise ValueError("user prompt must be non-empty")
        model = request.model or self.config.chat_model
        # Reproducibility: the pipeline never runs above temperature 0.
        temperature = min(request.temperature, 0.0)
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body = {
            "model": model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": request.max_output_tokens,
        }
        if request.want_logprobs:
            body["logprobs"] = True

        key = cache_key("chat", model, body)
        cached = self.cache.get(key) if self.cache else None
        if cached is not None:
            return self._parse_chat(cached, model, request.want_logprobs, cached=True)
        raw = self._post("/chat/completions", body)
        if self.cache:
            self.cache.put(key, raw)
        return self._parse_chat(raw, model, request.want_logprobs, cached=False)

    @staticmethod
    def _parse_chat(raw: dict, model: str, want_logprobs: bool, cached: bool) -> ChatResponse:
        choice = raw["choices"][0]
        text = choice["message"]["content"]
        tokens: list[tuple[str, float]] = []
        if want_logprobs:
            logprobs = (choice.get("logprobs") or {}).get("content")
            if logprobs is None:
                raise CapabilityError(
                    "endpoint did not return token logprobs; "
                    "Tok calibration needs a logprob-capable endpoint"
                )
            tokens = [(t["token"], float(t["logprob"])) for t in logprobs]
        return ChatResponse(text=text, tokens=tokens, model=model, cached=cached)

    # --- embeddings --------------------------------------------------------

    def embed(self, texts: list[str]) -> EmbeddingResponse:
        if not texts:
            raise ValueError("embed needs a nonempty list of texts")
        if any(not t.strip() for t in texts):
            raise ValueError("embed texts must be non-empty")
        model = self.config.embedding_model
        vectors: list[Optional[list[float]]] = [None] * len(texts)
        missing: list[int] = []
        any_cached = False
        for i, text in enumerate(texts):
            if self.cache:
                hit = self.cache.get(cache_key("embedding", model, text))
                if hit is not None:
                    vectors[i] = hit["embedding"]
                    any_cached = True
                    continue
            missing.append(i)
        if missing:
            body = {"model": model, "input": [texts[i] for i in missing]}
            raw = self._post("/embeddings", body)
            data = sorted(raw["data"], key=lambda d: d["index"])
            for slot, item in zip(missing, data):
                vec = [float(x) for x in item["embedding"]]
                vectors[slot] = vec
                if self.cache:
                    self.cache.put(cache_key("embedding", model, texts[slot]),
                                   {"embedding": vec})
        out = [v for v in vectors if v is not None]
        if len(out) != len(texts):
            raise TransportError("embedding endpoint returned fewer vectors than inputs")
        dims = {len(v) for v in out}
        if len(dims) != 1 or 0 in dims:
            raise TransportError(f"inconsistent embedding dimensions: {dims}")
        return EmbeddingResponse(vectors=out, model=model,
                                 cached=any_cached and not missing)
