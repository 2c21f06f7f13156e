"""Web search backends returning ranked {title, url, snippet, rank} results."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Iterable, Protocol

from dualloop.gateway.transport import Transport, TransportError


@dataclass(frozen=True)
class SearchHit:
    title: str
    url: str
    snippet: str
    rank: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"title": self.title, "url": self.url, "snippet": self.snippet, "rank": self.rank}


class SearchBackend(Protocol):
    def search(self, query: str, num_results: int = 10) -> list[SearchHit]: ...


_WORD = re.compile(r"\w+", re.UNICODE)


def _terms(text: str) -> set[str]:
    return {w.lower() for w in _WORD.findall(text)}


class MockSearchBackend:
    """Ranks an in-memory corpus by query-term overlap. No network."""

    def __init__(self, corpus: Iterable[dict[str, str]]):
        self.corpus = [dict(d) for d in corpus]
        self.queries: list[str] = []

    def search(self, query: str, num_results: int = 10) -> list[SearchHit]:
        self.queries.append(query)
        q = _terms(query)
        scored = []
        for pos, doc in enumerate(self.corpus):
            score = len(q & _terms(doc.get("title", "") + " " + doc.get("snippet", "") + " " + doc.get("body", "")))
            if score:
                scored.append((-score, pos, doc))
        scored.sort(key=lambda x: (x[0], x[1]))
        return [
            SearchHit(d.get("title", ""), d["url"], d.get("snippet", ""), rank)
            for rank, (_, _, d) in enumerate(scored[:num_results], start=1)
        ]


class SerperSearchBackend:
    """Google results through a Serper-style JSON endpoint."""

    def __init__(self, transport: Transport, api_key: str, endpoint: str = "https://google.serper.dev/search"):
        self.transport = transport
        self.api_key = api_key
        self.endpoint = endpoint

    def search(self, query: str, num_results: int = 10) -> list[SearchHit]:
        resp = self.transport.request(
            "POST", self.endpoint, json={"q": query, "num": num_results}, headers={"X-API-KEY": self.api_key}
        )
        if resp.status >= 400:
            raise TransportError(f"search endpoint returned HTTP {resp.status}")
        organic = resp.json().get("organic", [])
        return [
            SearchHit(r.get("title", ""), r.get("link", ""), r.get("snippet", ""), int(r.get("position", i)))
            for i, r in enumerate(organic, start=1)
        ]


def format_hits(hits: list[SearchHit]) -> str:
    if not hits:
        return "No results found."
    return "\n\n".join(f"{h.rank}. {h.title}\n   {h.url}\n   {h.snippet}" for h in hits)
