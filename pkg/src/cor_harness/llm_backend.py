"""Uniform interface to answer-producing engines.

HttpBackend speaks the de-facto JSON chat-completions wire format so any
local inference server can serve the model under test. The mock backends
(oracle, adversarial, scripted) are deterministic and internally
synchronized; they let the whole pipeline run and be tested without any
model. Forced-prefix generation prefers assistant-message prefill and falls
back to embedding the prefix in the prompt, recording that the fallback
changed conditioning.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import requests

from .corpus import Example
from .prompting import ANSWER_PREFIX, context_line_text, render_id_line

logger = logging.getLogger(__name__)

TOKEN_ENV_VAR = "COR_BACKEND_TOKEN"

_CONTEXT_LINE = re.compile(r"^Context(\d+): (.*)$")
_QUESTION_LINE = re.compile(r"^Question: (.*)$")


class BackendError(Exception):
    """Raised when a backend cannot produce a completion."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class CapabilityError(BackendError):
    """Raised when a backend refuses a requested capability (e.g. prefill)."""


@dataclass
class GenRequest:
    prompt: str
    forced_prefix: str | None = None
    max_new_tokens: int = 256
    temperature: float = 0.0
    seed: int | None = None
    tag: str | None = None  # example id, used by scripted mocks

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class GenResponse:
    text: str
    backend_id: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


@dataclass
class GenOutcome:
    """Per-item result of a batch: a response or an error, never both."""

    response: GenResponse | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.response is not None


def _with_prefix(prefix: str | None, body: str) -> str:
    if not prefix:
        return body
    if prefix.endswith("\n"):
        return prefix + body
    return prefix + "\n" + body


class _PromptView:
    """The pieces of a rendered prompt that mocks need to act on."""

    def __init__(self, prompt: str):
        self.question = None
        self.context_lines: dict[int, str] = {}
        for line in prompt.split("\n"):
            qm = _QUESTION_LINE.match(line)
            if qm and self.question is None:
                self.question = qm.group(1)
            cm = _CONTEXT_LINE.match(line)
            if cm:
                self.context_lines[int(cm.group(1))] = cm.group(2)


class _MockBackend:
    """Shared machinery for the deterministic mocks."""

    backend_id = "mock"

    def __init__(self, examples: list[Example], latency_fn=None):
        self._by_question = {}
        for ex in examples:
            if ex.question in self._by_question:
                logger.warning("duplicate question %r; mock keeps the first example", ex.question)
                continue
            self._by_question[ex.question] = ex
        self._latency_fn = latency_fn
        self._lock = threading.Lock()

    def _resolve(self, request: GenRequest) -> tuple[Example, list[int]]:
        view = _PromptView(request.prompt)
        if view.question is None or view.question not in self._by_question:
            raise BackendError(f"mock cannot identify the example for prompt {request.prompt[:60]!r}")
        example = self._by_question[view.question]
        gold_texts = {context_line_text(d) for d in example.gold_docs()}
        gold_positions = sorted(p for p, text in view.context_lines.items() if text in gold_texts)
        return example, gold_positions

    def _sleep(self, request: GenRequest) -> None:
        if self._latency_fn is not None:
            with self._lock:
                delay = self._latency_fn(request)
            time.sleep(delay)

    def _answer(self, example: Example) -> str:
        if example.task_kind == "api":
            return example.gold_api.api_call
        return example.gold_answers[0]

    def _respond(self, request: GenRequest, body: str) -> GenResponse:
        text = _with_prefix(request.forced_prefix, body)
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            prompt_tokens=len(request.prompt.split()),
            completion_tokens=len(text.split()),
        )


class OracleBackend(_MockBackend):
    """Emits the gold selection and gold answer for every prompt."""

    backend_id = "oracle-mock"

    def generate(self, request: GenRequest) -> GenResponse:
        self._sleep(request)
        example, gold_positions = self._resolve(request)
        answer_line = f"{ANSWER_PREFIX} {self._answer(example)}"
        if request.forced_prefix is not None:
            return self._respond(request, answer_line)
        return self._respond(request, f"{render_id_line(gold_positions)}\n{answer_line}")


class AdversarialBackend(_MockBackend):
    """Selects only non-gold positions while answering correctly."""

    backend_id = "adversarial-mock"

    def generate(self, request: GenRequest) -> GenResponse:
        self._sleep(request)
        example, gold_positions = self._resolve(request)
        view = _PromptView(request.prompt)
        wrong = sorted(set(view.context_lines) - set(gold_positions))
        answer_line = f"{ANSWER_PREFIX} {self._answer(example)}"
        if request.forced_prefix is not None:
            return self._respond(request, answer_line)
        return self._respond(request, f"{render_id_line(wrong)}\n{answer_line}")


class ScriptedBackend:
    """Replays responses from a script file keyed by example id."""

    backend_id = "scripted-mock"

    def __init__(self, script: str | Path | list[dict], latency_fn=None):
        if isinstance(script, (str, Path)):
            entries = []
            for line in Path(script).read_text(encoding="utf-8").splitlines():
                if line.strip():
                    entries.append(json.loads(line))
            self.backend_id = f"scripted:{Path(script).name}"
        else:
            entries = script
        self._responses = {str(e["match"]): str(e["response"]) for e in entries}
        self._latency_fn = latency_fn
        self._lock = threading.Lock()

    def generate(self, request: GenRequest) -> GenResponse:
        if self._latency_fn is not None:
            with self._lock:
                delay = self._latency_fn(request)
            time.sleep(delay)
        if request.tag is None or request.tag not in self._responses:
            raise BackendError(f"no scripted response for tag {request.tag!r}")
        body = self._responses[request.tag]
        text = body if request.forced_prefix is None else _with_prefix(request.forced_prefix, body)
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            prompt_tokens=len(request.prompt.split()),
            completion_tokens=len(text.split()),
        )


class ConstantBackend:
    """Replies with one fixed text; handy as an always-yes judge in tests."""

    def __init__(self, text: str):
        self.text = text
        self.backend_id = f"constant:{text[:20]!r}"

    def generate(self, request: GenRequest) -> GenResponse:
        text = self.text if request.forced_prefix is None else _with_prefix(request.forced_prefix, self.text)
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            prompt_tokens=len(request.prompt.split()),
            completion_tokens=len(text.split()),
        )


class HttpBackend:
    """Chat-completions client with retries, backoff, and prefill support."""

    def __init__(
        self,
        url: str,
        model: str,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.url = url
        self.model = model
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.backend_id = f"http:{model}@{url}"
        self.prefix_fallback_used = False
        self._session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(TOKEN_ENV_VAR)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, payload: dict, prefilled: bool = False) -> dict:
        last_error = None
        attempts = 0
        for attempt in range(self.max_retries + 1):
            attempts = attempt + 1
            try:
                resp = self._session.post(
                    self.url, json=payload, headers=self._headers(), timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    return resp.json()
                if resp.status_code in (429,) or resp.status_code >= 500:
                    last_error = RuntimeError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    message = f"backend rejected request: HTTP {resp.status_code}: {resp.text[:200]}"
                    if prefilled:
                        raise CapabilityError(message, attempts=attempts)
                    raise BackendError(message, attempts=attempts)
            if attempt < self.max_retries:
                time.sleep(self.backoff_base * (2**attempt))
        raise BackendError(f"transport failed after {attempts} attempts: {last_error}", attempts=attempts)

    def _payload(self, request: GenRequest, embed_prefix: bool) -> dict:
        prompt = request.prompt
        messages = [{"role": "user", "content": prompt}]
        if request.forced_prefix and embed_prefix:
            messages = [{"role": "user", "content": prompt + request.forced_prefix}]
        elif request.forced_prefix:
            messages.append({"role": "assistant", "content": request.forced_prefix})
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_new_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        return payload

    def generate(self, request: GenRequest) -> GenResponse:
        embed_prefix = self.prefix_fallback_used
        prefilled = bool(request.forced_prefix) and not embed_prefix
        try:
            data = self._post(self._payload(request, embed_prefix), prefilled=prefilled)
        except CapabilityError:
            # Server refuses assistant-prefill message shapes; embed the
            # prefix in the prompt instead (changes conditioning, recorded).
            logger.warning("prefill rejected, falling back to prompt-embedded prefix")
            self.prefix_fallback_used = True
            data = self._post(self._payload(request, True))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc
        usage = data.get("usage") or {}
        text = content
        if request.forced_prefix and not content.startswith(request.forced_prefix):
            text = request.forced_prefix + content
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


def generate_batch(backend, requests_: list[GenRequest], max_in_flight: int) -> list[GenOutcome]:
    """Run requests with bounded parallelism; results keep request order.

    Item failures are isolated: a failing request yields a GenOutcome with
    its error message and never aborts the batch.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")

    def run_one(request: GenRequest) -> GenOutcome:
        try:
            return GenOutcome(response=backend.generate(request))
        except Exception as exc:
            return GenOutcome(error=f"{type(exc).__name__}: {exc}")

    if max_in_flight == 1:
        return [run_one(r) for r in requests_]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(run_one, requests_))
