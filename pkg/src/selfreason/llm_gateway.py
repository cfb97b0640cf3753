"""Generation backends and prompt templates.

Two interchangeable backends: an HTTP client speaking the common
chat-completion wire shape (POST {base_url}/chat/completions), and a scripted
backend that replays canned responses by substring match, which keeps every
test and desk experiment fully offline and deterministic.

All prompt templates live here. Defaults follow the experiment settings this
toolkit targets: temperature 0.2 (0 selects greedy decoding on servers that
support it) and a 2048-token generation cap.
"""

from __future__ import annotations

import json
import math
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import httpx

from .trajectory import FACT_LABELS, Document, Question

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_TOKENS = 2048
API_KEY_ENV = "SR_API_KEY"


class GatewayError(Exception):
    """Base class for backend failures."""


class BackendUnavailable(GatewayError):
    """Transport kept failing after all retries."""


class AuthFailure(GatewayError):
    """Server rejected the credential."""


class ResponseMalformed(GatewayError):
    """Backend answered, but not with a usable generation."""


class NoScriptMatch(ResponseMalformed):
    """Scripted backend has no matching rule and no default response."""


@dataclass(frozen=True)
class GenerationRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not math.isfinite(self.temperature) or self.temperature < 0:
            raise ValueError(f"temperature must be finite and >= 0, got {self.temperature}")


@dataclass(frozen=True)
class GenerationResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    backend_id: str = ""

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class ScriptRule:
    match_substring: str
    response: str


class ScriptedBackend:
    """Deterministic offline backend: the first rule whose match_substring
    occurs anywhere in the prompt wins; otherwise the default response is
    used; otherwise NoScriptMatch. Keeps a call log so tests can assert how
    many generations a pipeline issued."""

    backend_id = "scripted"

    def __init__(self, rules: Sequence[ScriptRule] = (), default_response: str | None = None):
        self.rules = list(rules)
        self.default_response = default_response
        self.calls: list[GenerationRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_rules_file(cls, path: str | Path) -> "ScriptedBackend":
        """Load rules from JSON: {"rules": [{"match_substring", "response_file"}, ...],
        "default_response_file": optional}. Response paths are resolved
        relative to the rules file."""
        path = Path(path)
        spec = json.loads(path.read_text(encoding="utf-8"))
        base = path.parent
        rules = [
            ScriptRule(
                match_substring=entry["match_substring"],
                response=(base / entry["response_file"]).read_text(encoding="utf-8"),
            )
            for entry in spec.get("rules", [])
        ]
        default = None
        if spec.get("default_response_file"):
            default = (base / spec["default_response_file"]).read_text(encoding="utf-8")
        return cls(rules=rules, default_response=default)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        with self._lock:
            self.calls.append(req)
        haystack = req.system_prompt + "\n" + req.user_prompt
        for rule in self.rules:
            if rule.match_substring in haystack:
                return GenerationResponse(text=rule.response, backend_id=self.backend_id)
        if self.default_response is not None:
            return GenerationResponse(text=self.default_response, backend_id=self.backend_id)
        raise NoScriptMatch("no scripted rule matches the prompt and no default is configured")


class HttpBackend:
    """Chat-completion HTTP client with bounded concurrency and retries.

    Transient failures (transport errors, 5xx, 429) are retried up to
    max_retries times with exponential backoff starting at 500 ms. The
    credential comes from the SR_API_KEY environment variable unless passed
    explicitly.
    """

    def __init__(
        self,
        base_url: str,
        model_name: str,
        *,
        api_key: str | None = None,
        timeout_ms: int = 60_000,
        max_in_flight: int = 4,
        max_retries: int = 3,
        backoff_start_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_name = model_name
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_retries = max_retries
        self.backoff_start_s = backoff_start_s
        self.backend_id = f"http:{model_name}"
        self._sleep = sleep
        self._sem = threading.Semaphore(max_in_flight)
        self._client = httpx.Client(timeout=timeout_ms / 1000.0, transport=transport)

    def close(self) -> None:
        self._client.close()

    def generate(self, req: GenerationRequest) -> GenerationResponse:
        payload: dict = {
            "model": self.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            payload["seed"] = req.seed
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"

        last_error: Exception | None = None
        with self._sem:
            for attempt in range(self.max_retries + 1):
                if attempt:
                    self._sleep(self.backoff_start_s * 2 ** (attempt - 1))
                try:
                    resp = self._client.post(url, json=payload, headers=headers)
                except httpx.TransportError as exc:
                    last_error = exc
                    continue
                if resp.status_code in (401, 403):
                    raise AuthFailure(f"server rejected credential ({resp.status_code})")
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_error = ResponseMalformed(f"transient status {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise ResponseMalformed(f"unexpected status {resp.status_code}: {resp.text[:200]}")
                return self._parse_body(resp)
        raise BackendUnavailable(
            f"{url} still failing after {self.max_retries + 1} attempts: {last_error}"
        )

    def _parse_body(self, resp: httpx.Response) -> GenerationResponse:
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, ValueError, KeyError, IndexError, TypeError) as exc:
            raise ResponseMalformed(f"cannot extract generation from response: {exc}") from exc
        if not isinstance(text, str):
            raise ResponseMalformed("generation content is not a string")
        usage = body.get("usage") or {}
        return GenerationResponse(
            text=text,
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            backend_id=self.backend_id,
        )


def generate(backend, req: GenerationRequest) -> GenerationResponse:
    """Uniform entry point over any backend object exposing .generate()."""
    return backend.generate(req)


# --- prompt templates --------------------------------------------------------

_SCHEMA_EXAMPLE = (
    '{"relevant": true or false, "relevant_reason": "...", '
    '"evidence": [{"cite_content": "verbatim snippet copied from a document", '
    '"reason_for_cite": "...", "doc_index": 1}], '
    '"analysis": "...", "answer": "..."}'
)

_REASONING_STEPS = (
    "Reason in three steps before answering:\n"
    "1. Judge whether the retrieved documents are relevant to the question, and state why.\n"
    "2. From the relevant documents, quote the key sentences verbatim as evidence, giving for"
    " each snippet the reason it helps answer the question and the 1-based number of the"
    " document it came from.\n"
    "3. Analyze the collected evidence and give the final answer.\n"
)

_FORMAT_RULES = (
    "Respond with a single JSON object and nothing else, with fields in exactly this order:\n"
    + _SCHEMA_EXAMPLE
    + "\nInside the analysis, cite documents with bracketed document numbers such as [1] or"
    " [2][3].\nIf no document is relevant, set \"relevant\" to false, leave \"evidence\" as an"
    " empty list, and answer from your own knowledge."
)

_TASK_GUIDANCE = {
    "short_qa": "Keep the final answer short: a name, date, number, or brief phrase.",
    "long_qa": (
        "Write the analysis as a complete long-form answer that covers every aspect of the"
        " question, one claim per sentence, each sentence citing its supporting documents."
        " The final answer is a concise summary of it."
    ),
    "fact_verification": (
        "The question is a claim to verify. The final answer must be exactly one of: "
        + ", ".join(FACT_LABELS[:-1])
        + f", or {FACT_LABELS[-1]}."
        + " If all documents are irrelevant, answer NotEnoughInfo."
    ),
}

NO_DOCUMENTS_SENTINEL = "[no documents retrieved]"


def render_document_blocks(docs: Sequence[Document]) -> str:
    """Presentation-order document list: one "[n] title: body" block per doc."""
    if not docs:
        return NO_DOCUMENTS_SENTINEL
    return "\n".join(f"[{i}] {d.title}: {d.body}" for i, d in enumerate(docs, start=1))


def build_inference_prompt(q: Question, docs: Sequence[Document]) -> tuple[str, str]:
    """Prompt pair for answering a question over its retrieved documents."""
    system = (
        "You answer questions using the retrieved documents provided.\n"
        + _REASONING_STEPS
        + _FORMAT_RULES
        + "\n"
        + _TASK_GUIDANCE[q.task_kind]
    )
    user = render_document_blocks(docs) + f"\n\nQuestion: {q.text}"
    return system, user


def _render_gold(gold, task_kind: str) -> str:
    if task_kind == "fact_verification":
        return str(gold)
    return "\n".join("- " + " | ".join(alias_set) for alias_set in gold)


def build_datagen_prompt(
    q: Question,
    docs: Sequence[Document],
    gold,
    task_kind: str,
    *,
    polarity: str = "positive",
) -> tuple[str, str]:
    """Prompt pair asking a teacher model to produce a full reasoning record
    for a training sample. The gold answer is embedded in a delimited section
    the teacher's final answer must agree with. The negative variant presents
    documents retrieved for a different question and asks for an irrelevance
    judgment with reasons."""
    if polarity not in ("positive", "negative"):
        raise ValueError(f"polarity must be 'positive' or 'negative', got {polarity!r}")
    system = (
        "You produce training data for a question-answering model that reasons over retrieved"
        " documents.\n"
        + _REASONING_STEPS
        + _FORMAT_RULES
        + "\n"
        + _TASK_GUIDANCE[task_kind]
        + "\nA reference answer is provided between the REFERENCE ANSWER markers; your final"
        " answer field must agree with it."
    )
    if polarity == "negative":
        system += (
            "\nThe documents shown were retrieved for a different question and are expected to"
            " be irrelevant: label them irrelevant, explain in relevant_reason why these"
            " documents cannot answer the question, leave the evidence list empty, and answer"
            " from your own knowledge."
        )
    user = (
        render_document_blocks(docs)
        + f"\n\nQuestion: {q.text}\n\n"
        + "=== REFERENCE ANSWER ===\n"
        + _render_gold(gold, task_kind)
        + "\n=== END REFERENCE ANSWER ==="
    )
    return system, user
