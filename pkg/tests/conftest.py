from __future__ import annotations

import json

import pytest

from dualloop.gateway import Blocklist, MockSearchBackend, MockTransport, ToolGateway
from dualloop.gateway.sandbox import LocalSandboxes

CORPUS = [
    {"url": "https://en.example.org/paris", "title": "Paris", "snippet": "Paris is the capital of France.", "body": "Paris is the capital of France. Population about two million."},
    {"url": "https://en.example.org/lyon", "title": "Lyon", "snippet": "Lyon is a city in France.", "body": "Lyon is the third largest city of France."},
    {"url": "https://huggingface.co/datasets/leak", "title": "Leaked answers", "snippet": "capital of France answer key", "body": "answer key"},
]


def tool_msg(name: str, args: dict | None = None, thought: str = "", call_id: str = "call_0") -> dict:
    return {
        "role": "assistant",
        "reasoning_content": thought,
        "content": "",
        "tool_calls": [{"id": call_id, "type": "function", "function": {"name": name, "arguments": json.dumps(args or {})}}],
    }


def answer_msg(text: str, thought: str = "") -> dict:
    return {"role": "assistant", "reasoning_content": thought, "content": f"<answer>{text}</answer>"}


def garbage_msg(text: str = "I am not sure", thought: str = "") -> dict:
    return {"role": "assistant", "reasoning_content": thought, "content": text}


def make_gateway(tmp_path=None, corpus=CORPUS, blocked=("huggingface.co",), pages=None):
    routes = {d["url"]: d["body"] for d in corpus}
    routes.update(pages or {})
    transport = MockTransport(routes)
    sandboxes = LocalSandboxes(tmp_path / "sandboxes", timeout=10) if tmp_path is not None else None
    gw = ToolGateway(
        blocklist=Blocklist(blocked),
        transport=transport,
        search_backend=MockSearchBackend(corpus),
        sandboxes=sandboxes,
    )
    return gw, transport


@pytest.fixture
def gateway(tmp_path):
    gw, _ = make_gateway(tmp_path)
    return gw


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Records one PASS/FAIL line per criterion and asserts on it."""

    def record(number: int, name: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
