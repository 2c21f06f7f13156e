"""Page retrieval through an ordered list of backends, then directive-conditioned extraction."""

from __future__ import annotations

import html
import re
from dataclasses import dataclass
from typing import Protocol

from dualloop import prompts
from dualloop.backend import ChatRequest, SamplingParams
from dualloop.gateway.transport import BlockedRequest, Transport, TransportError

_TAG = re.compile(r"<(script|style)\b.*?</\1>|<[^>]+>", re.DOTALL | re.IGNORECASE)


class PageFetcher(Protocol):
    name: str

    def fetch(self, url: str) -> str: ...


class JinaReader:
    """Reader-proxy backend: GET {endpoint}/{url} returns the page as text."""

    name = "jina"

    def __init__(self, transport: Transport, endpoint: str = "https://r.jina.ai", api_key: str | None = None):
        self.transport = transport
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key

    def fetch(self, url: str) -> str:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else None
        resp = self.transport.request("GET", f"{self.endpoint}/{url}", headers=headers)
        if resp.status >= 400:
            raise TransportError(f"HTTP {resp.status}")
        if not resp.text.strip():
            raise TransportError("empty page")
        return resp.text


class DirectFetcher:
    """Plain GET of the page with tags stripped."""

    name = "direct"

    def __init__(self, transport: Transport):
        self.transport = transport

    def fetch(self, url: str) -> str:
        resp = self.transport.request("GET", url)
        if resp.status >= 400:
            raise TransportError(f"HTTP {resp.status}")
        text = html.unescape(_TAG.sub(" ", resp.text))
        text = re.sub(r"[ \t]+", " ", text)
        text = re.sub(r"\n\s*\n+", "\n\n", text).strip()
        if not text:
            raise TransportError("empty page")
        return text


class Summarizer(Protocol):
    def summarize(self, page: str, directive: str, url: str) -> str: ...


class ModelSummarizer:
    """Distills a page with one call to a lightweight model."""

    def __init__(self, backend, sampling: SamplingParams | None = None):
        self.backend = backend
        self.sampling = sampling or SamplingParams(temperature=0.0, top_p=1.0, max_output_tokens=4096)

    def summarize(self, page: str, directive: str, url: str) -> str:
        prompt = prompts.load("summarize").format(directive=directive, url=url, page=page)
        resp = self.backend.complete(ChatRequest(({"role": "user", "content": prompt},), sampling=self.sampling))
        action = resp.action
        text = getattr(action, "text", "") or resp.thought
        return text.strip()


class KeywordSummarizer:
    """Model-free extractor: keeps the page's lines that share a word with the directive."""

    def summarize(self, page: str, directive: str, url: str) -> str:
        wanted = {w for w in re.findall(r"\w+", directive.lower()) if len(w) > 2}
        lines = [ln.strip() for ln in page.splitlines() if ln.strip()]
        keep = [ln for ln in lines if wanted & set(re.findall(r"\w+", ln.lower()))]
        return "\n".join(keep) if keep else "No information relevant to the request was found on the page."


@dataclass
class Extraction:
    evidence: str
    backend: str
    failures: list[tuple[str, str]]


class ScrapeError(RuntimeError):
    def __init__(self, failures: list[tuple[str, str]]):
        super().__init__("; ".join(f"{name}: {err}" for name, err in failures) or "no retrieval backends configured")
        self.failures = failures


def scrape_and_extract(url: str, directive: str, fetchers: list[PageFetcher], summarizer: Summarizer) -> Extraction:
    """Try ``fetchers`` in order; distill the first page retrieved. Never returns the raw page."""
    failures: list[tuple[str, str]] = []
    for fetcher in fetchers:
        try:
            page = fetcher.fetch(url)
        except BlockedRequest:
            raise
        except TransportError as exc:
            failures.append((fetcher.name, str(exc)))
            continue
        return Extraction(summarizer.summarize(page, directive, url), fetcher.name, failures)
    raise ScrapeError(failures)
