from __future__ import annotations

import json
import logging

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualloop.actions import AnswerAction, ToolCall
from dualloop.backend import (
    ChatRequest,
    ChatResponse,
    OpenAIChatBackend,
    SamplingParams,
    ScriptedBackend,
    parse_message,
    render_response,
)
from dualloop.errors import BackendError, ContractViolation, ScriptExhausted

from conftest import answer_msg, tool_msg


def _req(text="hello", limit=262_144):
    return ChatRequest(({"role": "user", "content": text},), sampling=SamplingParams(context_limit=limit))


def test_sampling_defaults():
    s = SamplingParams()
    assert (s.temperature, s.top_p, s.max_output_tokens, s.context_limit) == (1.0, 0.95, 16384, 262_144)


@pytest.mark.parametrize("kw", [{"top_p": 1.5}, {"top_p": -0.1}, {"max_output_tokens": 0}])
def test_sampling_rejects_invalid(kw):
    with pytest.raises(ContractViolation):
        SamplingParams(**kw)


def test_scripted_queue_in_order_then_exhausted():
    b = ScriptedBackend([tool_msg("google_search", {"q": "x"}), answer_msg("42")])
    first = b.complete(_req())
    assert first.action == ToolCall("google_search", {"q": "x"})
    assert b.complete(_req()).action == AnswerAction("42")
    with pytest.raises(ScriptExhausted):
        b.complete(_req())
    assert len(b.request_log) == 3


def test_scripted_exhaustion_is_not_a_transport_error():
    assert not issubclass(ScriptExhausted, BackendError)


def test_scripted_needs_queue():
    with pytest.raises(ContractViolation):
        ScriptedBackend([])


def test_scripted_records_requests_verbatim():
    b = ScriptedBackend([answer_msg("a"), answer_msg("a")])
    r = _req("same")
    b.complete(r)
    b.complete(r)
    assert b.request_log[0] == b.request_log[1] == r.to_json()
    assert b.requests[0] is r


def test_context_limit_enforced_locally():
    calls = []
    client = httpx.Client(transport=httpx.MockTransport(lambda req: calls.append(req) or httpx.Response(200)))
    live = OpenAIChatBackend("http://model.test/v1", "m", client=client, sleep=lambda s: None)
    big = _req("x" * 400, limit=50)
    with pytest.raises(ContractViolation):
        live.complete(big)
    with pytest.raises(ContractViolation):
        ScriptedBackend([answer_msg("a")]).complete(big)
    assert calls == []


def test_multi_tool_call_keeps_first(caplog):
    recorded = {
        "role": "assistant",
        "content": "",
        "reasoning_content": "two things at once",
        "tool_calls": [
            {"id": "a", "type": "function", "function": {"name": "google_search", "arguments": "{\"q\": \"first\"}"}},
            {"id": "b", "type": "function", "function": {"name": "google_search", "arguments": "{\"q\": \"second\"}"}},
        ],
    }
    with caplog.at_level(logging.INFO, logger="dualloop.backend"):
        resp = parse_message(recorded)
    assert resp.action == ToolCall("google_search", {"q": "first"})
    assert resp.thought == "two things at once"
    assert "dropping 1" in caplog.text


def test_parse_answer_forms():
    assert parse_message({"content": "so <answer> 7 </answer>"}).action == AnswerAction("7")
    assert parse_message({"content": "result \\boxed{x^2}"}).action == AnswerAction("x^2")
    bad = parse_message({"content": "no tags here"})
    assert bad.action == AnswerAction("no tags here", well_formed=False)


def test_parse_bad_arguments_marks_parse_error():
    msg = tool_msg("google_search")
    msg["tool_calls"][0]["function"]["arguments"] = "{not json"
    assert parse_message(msg).action.parse_error


_text = st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=40)
_arg_values = st.one_of(st.integers(-5, 5), _text, st.booleans())


@settings(max_examples=150, deadline=None)
@given(_text, st.from_regex(r"[a-z][a-z_]{0,15}", fullmatch=True), st.dictionaries(st.from_regex(r"[a-z]{1,6}", fullmatch=True), _arg_values, max_size=3))
def test_render_parse_round_trip_tool_call(thought, name, args):
    resp = ChatResponse(thought, ToolCall(name, args))
    assert parse_message(render_response(resp)) == resp


@settings(max_examples=150, deadline=None)
@given(_text, _text.filter(lambda s: s.strip() == s and s and "</answer>" not in s))
def test_render_parse_round_trip_answer(thought, text):
    resp = ChatResponse(thought, AnswerAction(text))
    assert parse_message(render_response(resp)) == resp


def _completion(message):
    return httpx.Response(200, json={"choices": [{"message": message}], "usage": {"prompt_tokens": 3, "completion_tokens": 2}})


def test_live_client_retries_with_doubling_backoff():
    seen, sleeps = [], []

    def handler(request):
        seen.append(json.loads(request.content))
        if len(seen) < 3:
            return httpx.Response(503)
        return _completion(answer_msg("ok"))

    client = httpx.Client(transport=httpx.MockTransport(handler))
    live = OpenAIChatBackend("http://model.test/v1/", "policy", client=client, base_delay=0.5, sleep=sleeps.append)
    resp = live.complete(_req())
    assert resp.action == AnswerAction("ok")
    assert resp.usage == {"prompt_tokens": 3, "completion_tokens": 2}
    assert sleeps == [0.5, 1.0]
    assert seen[0]["model"] == "policy" and seen[0]["temperature"] == 1.0 and seen[0]["top_p"] == 0.95


def test_live_client_surfaces_error_after_three_retries():
    attempts, sleeps = [], []
    client = httpx.Client(transport=httpx.MockTransport(lambda r: attempts.append(r) or httpx.Response(500)))
    live = OpenAIChatBackend("http://model.test/v1", "m", client=client, sleep=sleeps.append)
    with pytest.raises(BackendError):
        live.complete(_req())
    assert len(attempts) == 4
    assert sleeps == [0.5, 1.0, 2.0]


def test_live_client_does_not_mutate_request():
    client = httpx.Client(transport=httpx.MockTransport(lambda r: _completion(answer_msg("x"))))
    live = OpenAIChatBackend("http://model.test/v1", "m", client=client)
    r = _req()
    before = r.to_json()
    live.complete(r)
    assert r.to_json() == before


def test_from_env(monkeypatch):
    monkeypatch.setenv("DUALLOOP_ENDPOINT", "http://e.test/v1")
    monkeypatch.setenv("DUALLOOP_MODEL", "mm")
    b = OpenAIChatBackend.from_env()
    assert b.url == "http://e.test/v1/chat/completions" and b.model == "mm"
    monkeypatch.delenv("DUALLOOP_MODEL")
    with pytest.raises(ContractViolation):
        OpenAIChatBackend.from_env()


@pytest.mark.parametrize("message", [None, 7, "plain", ["a"], {"tool_calls": [None]}, {"tool_calls": "x"}, {"reasoning_content": 3, "content": "hi"}])
def test_non_object_messages_are_malformed_not_fatal(message):
    resp = parse_message(message)
    if isinstance(resp.action, ToolCall):
        assert resp.action.parse_error
    else:
        assert not resp.action.well_formed
