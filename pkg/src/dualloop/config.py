"""Run configuration file (YAML or JSON) and construction of the runtime pieces from it.

Example::

    context: {window: 5, obs_limit: 2048, tokenizer: bytes4}
    episode: {max_turns: 200, max_retries: 5}
    sampling: {temperature: 1.0, top_p: 0.95, max_output_tokens: 16384, context_limit: 262144}
    verifier: {mode: none, budget_multiplier: 16, threshold: 0.8, local_every: 1}
    blocklist: blocklist.txt
    endpoints:
      model: {url: https://host/v1, model: name, api_key_env: DUALLOOP_API_KEY}
      auditor: {...}        # defaults to model
      summarizer: {...}     # defaults to keyword extraction
      judge: {...}
    search: {provider: serper, api_key_env: SERPER_API_KEY}   # or {provider: mock, corpus: corpus.jsonl}
    scrape: {backends: [jina, direct]}
    sandbox: {kind: local}  # or {kind: remote, url: https://sandbox-service}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from dualloop.agent import EpisodeConfig
from dualloop.backend import OpenAIChatBackend, SamplingParams
from dualloop.context import ContextPolicy
from dualloop.errors import ContractViolation
from dualloop.gateway import Blocklist, MockSearchBackend, SerperSearchBackend, ToolGateway
from dualloop.gateway.sandbox import LocalSandboxes, RemoteSandboxes
from dualloop.gateway.scrape import DirectFetcher, JinaReader, KeywordSummarizer, ModelSummarizer
from dualloop.gateway.transport import HttpxTransport
from dualloop.verifier import ComputeBudget

VERIFY_MODES = ("none", "local", "global", "heavy")


@dataclass
class RunConfig:
    data: dict[str, Any] = field(default_factory=dict)
    base: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        p = Path(path)
        return cls(yaml.safe_load(p.read_text(encoding="utf-8")) or {}, p.parent)

    def section(self, name: str) -> dict[str, Any]:
        return dict(self.data.get(name) or {})

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    def episode_config(self, max_turns: int | None = None) -> EpisodeConfig:
        ctx = self.section("context")
        ep = self.section("episode")
        policy = ContextPolicy(
            window=int(ctx.get("window", 5)), obs_limit=int(ctx.get("obs_limit", 2048)), tokenizer=ctx.get("tokenizer", "bytes4")
        )
        sampling = SamplingParams(**self.section("sampling"))
        return EpisodeConfig(
            max_turns=int(max_turns or ep.get("max_turns", 200)),
            max_retries=int(ep.get("max_retries", 5)),
            context_policy=policy,
            sampling=sampling,
            format_error_limit=int(ep.get("format_error_limit", 3)),
        )

    @property
    def verify_mode(self) -> str:
        return self.section("verifier").get("mode", "none")

    def budget(self) -> ComputeBudget:
        v = self.section("verifier")
        return ComputeBudget(int(v.get("budget_multiplier", 16)), v.get("max_candidates"))

    @property
    def threshold(self) -> float:
        return float(self.section("verifier").get("threshold", 0.8))

    @property
    def local_every(self) -> int:
        return int(self.section("verifier").get("local_every", 1))

    def endpoint(self, name: str) -> dict[str, Any] | None:
        eps = self.section("endpoints")
        return eps.get(name)

    def model_backend(self, name: str = "model"):
        spec = self.endpoint(name)
        if spec is None and name != "model":
            spec = self.endpoint("model")
        if spec is None:
            return OpenAIChatBackend.from_env()
        key = os.environ.get(spec["api_key_env"]) if spec.get("api_key_env") else spec.get("api_key")
        return OpenAIChatBackend(spec["url"], spec["model"], key, max_in_flight=int(spec.get("max_in_flight", 8)))

    def blocklist(self) -> Blocklist:
        value = self.data.get("blocklist")
        bl = Blocklist.from_file(self.path(value)) if value else Blocklist()
        for d in self.data.get("blocked_domains") or ():
            bl.add(d)
        return bl

    def gateway(self, transport=None, corpus: list[dict[str, str]] | None = None, sandboxes=None) -> ToolGateway:
        search = self.section("search")
        scrape = self.section("scrape")
        provider = search.get("provider", "mock" if corpus is not None or "corpus" in search else "serper")
        if provider not in ("mock", "serper"):
            raise ContractViolation(f"unknown search provider {provider!r}")
        order = list(scrape.get("backends", ["jina", "direct"]))
        unknown = [n for n in order if n not in ("jina", "direct")]
        if unknown:
            raise ContractViolation(f"unknown scrape backend(s) {unknown}")

        def fetchers(guarded):
            made = {
                "jina": lambda: JinaReader(guarded, scrape.get("jina_url", "https://r.jina.ai"), os.environ.get("JINA_API_KEY")),
                "direct": lambda: DirectFetcher(guarded),
            }
            return [made[n]() for n in order]

        if sandboxes is None:
            sb = self.section("sandbox")
            if sb.get("kind") == "remote":
                sandboxes = RemoteSandboxes(HttpxTransport(), sb["url"])
            elif sb.get("root"):
                sandboxes = LocalSandboxes(self.path(sb["root"]))

        summarizer = ModelSummarizer(self.model_backend("summarizer")) if self.endpoint("summarizer") else KeywordSummarizer()
        gw = ToolGateway(
            blocklist=self.blocklist(),
            transport=transport if transport is not None else HttpxTransport(),
            fetchers=fetchers,
            summarizer=summarizer,
            sandboxes=sandboxes,
        )
        if provider == "mock":
            docs = list(corpus or [])
            if search.get("corpus"):
                docs += load_corpus(self.path(search["corpus"]))
            gw.search_backend = MockSearchBackend(docs)
        else:
            key = os.environ.get(search.get("api_key_env", "SERPER_API_KEY"), "")
            # search traffic goes through the same guarded transport as scraping
            gw.search_backend = SerperSearchBackend(gw.transport, key, search.get("url", "https://google.serper.dev/search"))
        return gw


def load_corpus(path: str | Path) -> list[dict[str, str]]:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".jsonl"):
        return [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    data = yaml.safe_load(text)
    return list(data or [])
