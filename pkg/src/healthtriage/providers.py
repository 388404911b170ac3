"""Chat-completion and embedding providers behind one uniform gateway.

Two providers exist: a remote HTTP JSON provider and a fully deterministic
mock used by every reproducible test. Requests are canonicalized into a
stable text form whose SHA-256 digest keys the mock's scripted answer table.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import unicodedata
from dataclasses import dataclass, field

import numpy as np

from . import prompts
from .errors import ConfigError, EmptyGeneration, EmptyText, TransportError

MOCK_FALLBACK = "unknown: 0.5"


@dataclass(frozen=True)
class PromptRequest:
    system_text: str
    user_text: str
    context_blocks: tuple[str, ...] = ()
    temperature: float = 0.0
    max_tokens: int = 512

    def __post_init__(self):
        object.__setattr__(self, "context_blocks", tuple(self.context_blocks))


@dataclass(frozen=True)
class CompletionText:
    text: str
    provider_id: str
    request_digest: str


@dataclass(frozen=True)
class ProviderConfig:
    kind: str  # "mock" | "remote_chat"
    model_name: str = "mock-model"
    embed_dim: int = 256
    seed: int | None = None
    base_url: str | None = None
    api_key_env: str | None = None
    retry_limit: int = 2
    max_inflight: int = 8

    def __post_init__(self):
        if self.kind not in ("mock", "remote_chat"):
            raise ConfigError(f"unknown provider kind {self.kind!r}")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")
        if self.kind == "mock" and self.seed is None:
            raise ConfigError("mock provider requires a seed")
        if self.kind == "remote_chat" and (not self.base_url or not self.api_key_env):
            raise ConfigError("remote provider requires base_url and api_key_env")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "model_name": self.model_name,
            "embed_dim": self.embed_dim,
            "seed": self.seed,
            "base_url": self.base_url,
            "api_key_env": self.api_key_env,
            "retry_limit": self.retry_limit,
            "max_inflight": self.max_inflight,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProviderConfig":
        return cls(**{k: d[k] for k in d if k in cls.__dataclass_fields__})


def canonical_prompt(request: PromptRequest) -> str:
    """Stable text form of a request: NFC-normalized, per-line rstripped.

    Trailing-whitespace differences (including a trailing newline) in any
    component do not change the result.
    """
    raw = (
        request.system_text
        + "\n---\n"
        + "\n---\n".join(request.context_blocks)
        + "\n---\n"
        + request.user_text
    )
    normalized = unicodedata.normalize("NFC", raw)
    lines = [line.rstrip() for line in normalized.split("\n")]
    return "\n".join(lines).rstrip()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def request_digest(request: PromptRequest) -> str:
    return text_digest(canonical_prompt(request))


def load_answer_table(path) -> dict[str, str]:
    """Load a scripted mock table: array of {prompt_digest | prompt_text, response}."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    table: dict[str, str] = {}
    for entry in entries:
        if "prompt_digest" in entry:
            key = entry["prompt_digest"]
        else:
            # Text entries are canonicalized the same way live prompts are.
            normalized = unicodedata.normalize("NFC", entry["prompt_text"])
            key = text_digest("\n".join(l.rstrip() for l in normalized.split("\n")).rstrip())
        table[key] = entry["response"]
    return table


_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


class MockProvider:
    """Deterministic provider: scripted answers, template rules, then a fixed fallback.

    Completions are a pure function of (seed, request digest). The embedder is
    a signed-hash bag of words at the configured dimension.
    """

    def __init__(self, config: ProviderConfig, answer_table: dict[str, str] | None = None):
        self.config = config
        self.provider_id = f"mock:{config.model_name}"
        self.answer_table = dict(answer_table or {})
        self._seed_key = int(config.seed).to_bytes(8, "big", signed=False)
        self._sem = threading.BoundedSemaphore(config.max_inflight)

    def complete(self, request: PromptRequest) -> CompletionText:
        if not request.user_text.strip():
            raise EmptyText("empty user_text")
        digest = request_digest(request)
        with self._sem:
            text = self._answer(request, digest)
        return CompletionText(text=text, provider_id=self.provider_id, request_digest=digest)

    def _answer(self, request: PromptRequest, digest: str) -> str:
        scripted = self.answer_table.get(digest)
        if scripted is not None:
            return scripted
        if request.system_text == prompts.ADVICE_SYSTEM:
            labels = _parse_condition_line(request.user_text)
            if labels:
                return prompts.mock_advice_text(labels)
        elif request.system_text == prompts.FOLLOWUP_SYSTEM:
            return prompts.FOLLOWUP_TEXT
        elif request.system_text == prompts.READINESS_SYSTEM:
            return "ready"
        return MOCK_FALLBACK

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        dim = self.config.embed_dim
        acc = np.zeros(dim, dtype=np.float64)
        with self._sem:
            for token in _TOKEN_SPLIT.split(text.lower()):
                if not token:
                    continue
                h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._seed_key)
                value = int.from_bytes(h.digest(), "big")
                sign = 1.0 if value & 1 == 0 else -1.0
                acc[(value >> 1) % dim] += sign
        norm = float(np.linalg.norm(acc))
        if norm == 0.0:
            acc[0] = 1.0
            return acc
        return acc / norm


def _parse_condition_line(user_text: str) -> list[str]:
    for line in user_text.split("\n"):
        if line.startswith(prompts.ADVICE_CONDITIONS_PREFIX):
            raw = line[len(prompts.ADVICE_CONDITIONS_PREFIX):]
            return [part.strip() for part in raw.split(",") if part.strip()]
    return []


class RemoteProvider:
    """HTTP JSON chat-completion and embedding client with bounded retries."""

    def __init__(self, config: ProviderConfig):
        self.config = config
        self.provider_id = f"remote:{config.model_name}"
        self._sem = threading.BoundedSemaphore(config.max_inflight)
        self._client = None  # lazy; tests may inject a transport

    def _http(self):
        import httpx

        if self._client is None:
            self._client = httpx.Client(base_url=self.config.base_url, timeout=60.0)
        return self._client

    def _api_key(self) -> str:
        key = os.environ.get(self.config.api_key_env or "")
        if not key:
            raise ConfigError(f"environment variable {self.config.api_key_env!r} is not set")
        return key

    def _post(self, path: str, payload: dict) -> dict:
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        import httpx

        last_error = None
        for _ in range(self.config.retry_limit + 1):
            try:
                resp = self._http().post(path, json=payload, headers=headers)
                resp.raise_for_status()
                return resp.json()
            except (httpx.TransportError, httpx.HTTPStatusError, OSError) as exc:
                last_error = exc
        raise TransportError(f"remote call failed after retries: {last_error}")

    def complete(self, request: PromptRequest) -> CompletionText:
        if not request.user_text.strip():
            raise EmptyText("empty user_text")
        digest = request_digest(request)
        user_content = "\n---\n".join((*request.context_blocks, request.user_text))
        payload = {
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": user_content},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        with self._sem:
            data = self._post("/chat/completions", payload)
        text = data["choices"][0]["message"]["content"]
        return CompletionText(text=text, provider_id=self.provider_id, request_digest=digest)

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise EmptyText("cannot embed empty text")
        payload = {"model": self.config.model_name, "input": text}
        with self._sem:
            data = self._post("/embeddings", payload)
        vec = np.asarray(data["data"][0]["embedding"], dtype=np.float64)
        if vec.shape != (self.config.embed_dim,):
            raise ConfigError(
                f"provider returned dimension {vec.shape}, expected {self.config.embed_dim}"
            )
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec = np.zeros(self.config.embed_dim)
            vec[0] = 1.0
            return vec
        return vec / norm


Provider = MockProvider | RemoteProvider


def make_provider(config: ProviderConfig, answer_table: dict[str, str] | None = None) -> Provider:
    if config.kind == "mock":
        return MockProvider(config, answer_table)
    return RemoteProvider(config)


def generate_symptoms(
    disease_name: str,
    exemplars: list[tuple[str, str]],
    provider: Provider,
) -> list[str]:
    """Produce a symptom list for a disease via in-context exemplars.

    The completion is split on commas; blank entries are dropped.
    """
    if not exemplars:
        raise ValueError("at least one exemplar pair is required")
    lines = [f"disease: {d}, symptoms: {s}" for d, s in exemplars]
    lines.append(f"disease: {disease_name}, symptoms:")
    request = PromptRequest(system_text=prompts.SYMPTOM_SYSTEM, user_text="\n".join(lines))
    completion = provider.complete(request)
    symptoms = [part.strip() for part in completion.text.split(",")]
    symptoms = [s for s in symptoms if s]
    if not symptoms:
        raise EmptyGeneration(f"no symptoms parsed for {disease_name!r}")
    return symptoms
