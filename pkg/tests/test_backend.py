from __future__ import annotations

import json
import random
import threading

import pytest

from cor_harness.llm_backend import (
    AdversarialBackend,
    BackendError,
    ConstantBackend,
    GenRequest,
    HttpBackend,
    OracleBackend,
    ScriptedBackend,
    generate_batch,
)
from cor_harness.output_parser import parse_cor
from cor_harness.prompting import render_cor

from synth import make_qa_examples


def prompt_for(example, order=None):
    contexts = [example.doc_by_id(d) for d in (order or [c.doc_id for c in example.contexts])]
    return render_cor(example.question, contexts)


class TestGenRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            GenRequest(prompt="p", max_new_tokens=0)
        with pytest.raises(ValueError):
            GenRequest(prompt="p", temperature=-0.5)


class TestOracleBackend:
    def test_emits_gold_positions_and_answer(self):
        examples = make_qa_examples(3, seed=1, n_contexts=5)
        ex = examples[0]
        # present docs in an order that moves the gold around
        order = sorted((c.doc_id for c in ex.contexts), reverse=True)
        rendered = prompt_for(ex, order)
        backend = OracleBackend(examples)
        response = backend.generate(GenRequest(prompt=rendered.text, tag=ex.example_id))
        parsed = parse_cor(response.text, rendered.context_order)
        assert set(parsed.selected_doc_ids) == ex.gold_ids
        assert parsed.answer == ex.gold_answers[0]
        assert parsed.parse_flags == set()

    def test_forced_prefix_verbatim_head(self):
        examples = make_qa_examples(1, seed=2, n_contexts=4)
        rendered = prompt_for(examples[0])
        backend = OracleBackend(examples)
        prefix = "## Relevant Context ID: 2\n"
        response = backend.generate(GenRequest(prompt=rendered.text, forced_prefix=prefix))
        assert response.text.startswith(prefix)
        parsed = parse_cor(response.text, rendered.context_order)
        assert parsed.selected_positions == [2]
        assert parsed.answer == examples[0].gold_answers[0]

    def test_unknown_prompt_fails(self):
        backend = OracleBackend(make_qa_examples(1))
        with pytest.raises(BackendError):
            backend.generate(GenRequest(prompt="Question: never seen?\n"))

    def test_usage_reported(self):
        examples = make_qa_examples(1, seed=3, n_contexts=4)
        rendered = prompt_for(examples[0])
        response = OracleBackend(examples).generate(GenRequest(prompt=rendered.text))
        assert response.prompt_tokens > 0 and response.completion_tokens > 0


class TestAdversarialBackend:
    def test_selects_only_non_gold(self):
        examples = make_qa_examples(2, seed=4, n_contexts=6)
        ex = examples[1]
        rendered = prompt_for(ex)
        backend = AdversarialBackend(examples)
        response = backend.generate(GenRequest(prompt=rendered.text))
        parsed = parse_cor(response.text, rendered.context_order)
        assert parsed.selected_doc_ids
        assert not set(parsed.selected_doc_ids) & ex.gold_ids
        assert parsed.answer == ex.gold_answers[0]


class TestScriptedBackend:
    def test_match_by_tag(self, tmp_path):
        script = tmp_path / "script.jsonl"
        lines = [
            json.dumps({"match": "e1", "response": "## Answer: one"}),
            json.dumps({"match": "e2", "response": "## Answer: two"}),
        ]
        script.write_text("\n".join(lines) + "\n", encoding="utf-8")
        backend = ScriptedBackend(script)
        assert backend.generate(GenRequest(prompt="p", tag="e2")).text == "## Answer: two"

    def test_missing_tag_errors(self):
        backend = ScriptedBackend([{"match": "known", "response": "x"}])
        with pytest.raises(BackendError):
            backend.generate(GenRequest(prompt="p", tag="unknown"))

    def test_prefix_prepended(self):
        backend = ScriptedBackend([{"match": "e", "response": "body"}])
        response = backend.generate(GenRequest(prompt="p", tag="e", forced_prefix="HEAD\n"))
        assert response.text == "HEAD\nbody"


class TestGenerateBatch:
    def test_sequential_order(self):
        backend = ScriptedBackend([{"match": str(i), "response": f"r{i}"} for i in range(10)])
        requests_ = [GenRequest(prompt="p", tag=str(i)) for i in range(10)]
        outcomes = generate_batch(backend, requests_, max_in_flight=1)
        assert [o.response.text for o in outcomes] == [f"r{i}" for i in range(10)]

    def test_order_preserved_under_random_latency(self):
        rng = random.Random(0)
        lock = threading.Lock()

        def latency(request):
            with lock:
                return rng.uniform(0, 0.02)

        backend = ScriptedBackend(
            [{"match": str(i), "response": f"r{i}"} for i in range(20)], latency_fn=latency
        )
        requests_ = [GenRequest(prompt="p", tag=str(i)) for i in range(20)]
        outcomes = generate_batch(backend, requests_, max_in_flight=8)
        assert [o.response.text for o in outcomes] == [f"r{i}" for i in range(20)]

    def test_partial_failure_isolated(self):
        backend = ScriptedBackend([{"match": str(i), "response": "ok"} for i in range(4)])
        requests_ = [GenRequest(prompt="p", tag=str(i)) for i in range(5)]  # tag "4" missing
        outcomes = generate_batch(backend, requests_, max_in_flight=2)
        assert sum(o.ok for o in outcomes) == 4
        assert outcomes[4].error is not None

    def test_bad_max_in_flight(self):
        with pytest.raises(ValueError):
            generate_batch(ConstantBackend("x"), [], 0)

    def test_in_flight_bound_respected(self):
        import time as time_module

        class Tracking:
            backend_id = "tracking"

            def __init__(self):
                self.lock = threading.Lock()
                self.active = 0
                self.peak = 0

            def generate(self, request):
                with self.lock:
                    self.active += 1
                    self.peak = max(self.peak, self.active)
                time_module.sleep(0.005)
                with self.lock:
                    self.active -= 1
                from cor_harness.llm_backend import GenResponse

                return GenResponse(text="ok", backend_id=self.backend_id)

        backend = Tracking()
        requests_ = [GenRequest(prompt="p", tag=str(i)) for i in range(24)]
        outcomes = generate_batch(backend, requests_, max_in_flight=3)
        assert all(o.ok for o in outcomes)
        assert backend.peak <= 3


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = text or json.dumps(self._payload)

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        return self.responses.pop(0)


def chat_payload(content, usage=None):
    payload = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage:
        payload["usage"] = usage
    return payload


class TestHttpBackend:
    def make(self, responses, **kw):
        session = FakeSession(responses)
        backend = HttpBackend(
            "http://host/v1/chat/completions", "model-x", backoff_base=0.0, session=session, **kw
        )
        return backend, session

    def test_success_with_usage(self):
        backend, session = self.make(
            [FakeResponse(200, chat_payload("hello", {"prompt_tokens": 7, "completion_tokens": 2}))]
        )
        response = backend.generate(GenRequest(prompt="hi"))
        assert response.text == "hello"
        assert response.prompt_tokens == 7 and response.completion_tokens == 2
        body = session.calls[0]["json"]
        assert body["model"] == "model-x"
        assert body["messages"] == [{"role": "user", "content": "hi"}]
        assert body["temperature"] == 0.0

    def test_bearer_token_from_environment(self, monkeypatch):
        monkeypatch.setenv("COR_BACKEND_TOKEN", "secret123")
        backend, session = self.make([FakeResponse(200, chat_payload("x"))])
        backend.generate(GenRequest(prompt="p"))
        assert session.calls[0]["headers"]["Authorization"] == "Bearer secret123"

    def test_retry_then_success(self):
        backend, session = self.make(
            [FakeResponse(500, text="boom"), FakeResponse(200, chat_payload("ok"))]
        )
        assert backend.generate(GenRequest(prompt="p")).text == "ok"
        assert len(session.calls) == 2

    def test_exhausted_retries_carry_attempts(self):
        backend, _ = self.make([FakeResponse(503, text="down")] * 3, max_retries=2)
        with pytest.raises(BackendError) as err:
            backend.generate(GenRequest(prompt="p"))
        assert err.value.attempts == 3

    def test_client_error_no_retry(self):
        backend, session = self.make([FakeResponse(404, text="nope")])
        with pytest.raises(BackendError):
            backend.generate(GenRequest(prompt="p"))
        assert len(session.calls) == 1

    def test_prefill_assistant_message(self):
        backend, session = self.make([FakeResponse(200, chat_payload("rest"))])
        response = backend.generate(GenRequest(prompt="p", forced_prefix="HEAD "))
        assert session.calls[0]["json"]["messages"][1] == {"role": "assistant", "content": "HEAD "}
        assert response.text == "HEAD rest"

    def test_prefill_rejected_falls_back_to_prompt(self):
        backend, session = self.make(
            [FakeResponse(400, text="no prefill"), FakeResponse(200, chat_payload("rest"))]
        )
        response = backend.generate(GenRequest(prompt="p", forced_prefix="HEAD "))
        assert backend.prefix_fallback_used is True
        assert session.calls[1]["json"]["messages"] == [{"role": "user", "content": "pHEAD "}]
        assert response.text == "HEAD rest"

    def test_capability_error_type(self):
        backend, _ = self.make([FakeResponse(400, text="no"), FakeResponse(400, text="still no")])
        with pytest.raises(BackendError):
            backend.generate(GenRequest(prompt="p", forced_prefix="H"))

    def test_malformed_response(self):
        backend, _ = self.make([FakeResponse(200, {"weird": True})])
        with pytest.raises(BackendError, match="malformed"):
            backend.generate(GenRequest(prompt="p"))
