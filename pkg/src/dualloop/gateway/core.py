"""The tool gateway: correction, uniform blocklist enforcement, dispatch."""

from __future__ import annotations

import logging
import threading
import time
from typing import Any, Callable

from dualloop.actions import ToolCall
from dualloop.errors import UncorrectableToolCall
from dualloop.gateway.blocklist import Blocklist, check_blocklist
from dualloop.gateway.registry import ParamSpec, Registry, ToolResult, ToolSpec, correct_tool_call
from dualloop.gateway.sandbox import (
    LocalSandboxes,
    SandboxError,
    Sandboxes,
    download_internet_to_sandbox,
    download_sandbox_to_local,
    upload_local_to_sandbox,
)
from dualloop.gateway.scrape import DirectFetcher, JinaReader, KeywordSummarizer, ScrapeError, scrape_and_extract
from dualloop.gateway.search import MockSearchBackend, format_hits
from dualloop.gateway.transport import BlockedRequest, GuardedTransport, HttpxTransport, TransportError

logger = logging.getLogger(__name__)

P = ParamSpec

DEFAULT_TOOLS = (
    ToolSpec(
        "google_search",
        (P("q", "text", description="search query"), P("num_results", "integer", required=False)),
        "Search the web. Returns ranked results with titles, URLs and snippets.",
    ),
    ToolSpec(
        "scrape_and_extract_info",
        (P("url", "url"), P("info_to_extract", "text", description="what to extract from the page")),
        "Fetch a web page and return only the information relevant to info_to_extract.",
    ),
    ToolSpec("create_sandbox", (), "Create a Linux sandbox and return its id."),
    ToolSpec("run_command", (P("sandbox_id"), P("command", "text")), "Run a shell command inside a sandbox."),
    ToolSpec("run_python_code", (P("sandbox_id"), P("code", "text")), "Run a Python script inside a sandbox."),
    ToolSpec(
        "upload_file_from_local_to_sandbox",
        (P("sandbox_id"), P("local_file_path", "path"), P("sandbox_file_path", "path")),
        "Copy a local file into a sandbox.",
    ),
    ToolSpec(
        "download_file_from_sandbox_to_local",
        (P("sandbox_id"), P("sandbox_file_path", "path"), P("local_file_path", "path")),
        "Copy a file out of a sandbox to local storage.",
    ),
    ToolSpec(
        "download_file_from_internet_to_sandbox",
        (P("sandbox_id"), P("url", "url"), P("sandbox_file_path", "path")),
        "Download a file from the web directly into a sandbox.",
    ),
)


class ToolGateway:
    """Single entry point for every tool call the agent makes.

    All network access from the adapters goes through one guarded transport,
    and :meth:`dispatch` converts every failure into a :class:`ToolResult`.
    Safe for concurrent dispatch.
    """

    def __init__(
        self,
        *,
        blocklist: Blocklist | None = None,
        transport=None,
        search_backend=None,
        fetchers: list | Callable[[Any], list] | None = None,
        summarizer=None,
        sandboxes: Sandboxes | None = None,
        registry: Registry | None = None,
        default_num_results: int = 10,
    ):
        self.blocklist = blocklist if blocklist is not None else Blocklist()
        self.transport = GuardedTransport(transport if transport is not None else HttpxTransport(), self.blocklist)
        self.search_backend = search_backend if search_backend is not None else MockSearchBackend([])
        if fetchers is None:
            self.fetchers = [JinaReader(self.transport), DirectFetcher(self.transport)]
        elif callable(fetchers):
            self.fetchers = fetchers(self.transport)
        else:
            self.fetchers = list(fetchers)
        self.summarizer = summarizer if summarizer is not None else KeywordSummarizer()
        self._sandboxes = sandboxes
        self._sandbox_lock = threading.Lock()
        self.registry = registry if registry is not None else Registry(DEFAULT_TOOLS)
        self.default_num_results = default_num_results
        self.invocations: list[tuple[str, dict[str, Any]]] = []
        self._log_lock = threading.Lock()
        self._handlers = {
            "google_search": self._search,
            "scrape_and_extract_info": self._scrape,
            "create_sandbox": self._create_sandbox,
            "run_command": self._run_command,
            "run_python_code": self._run_python,
            "upload_file_from_local_to_sandbox": self._upload,
            "download_file_from_sandbox_to_local": self._download_local,
            "download_file_from_internet_to_sandbox": self._download_internet,
        }

    @property
    def sandboxes(self) -> Sandboxes:
        with self._sandbox_lock:
            if self._sandboxes is None:
                self._sandboxes = LocalSandboxes()
            return self._sandboxes

    def catalog(self) -> list[dict[str, Any]]:
        return self.registry.catalog()

    def register(self, spec: ToolSpec, handler: Callable[..., ToolResult]) -> None:
        self.registry.register(spec)
        self._handlers[spec.name] = handler

    def dispatch(self, call: ToolCall) -> tuple[ToolCall, ToolResult]:
        """Correct, then execute ``call``. Returns the call actually run and its result."""
        start = time.perf_counter()
        try:
            fixed = correct_tool_call(call, self.registry)
        except UncorrectableToolCall as exc:
            return call, ToolResult.error(call.tool_name, str(exc))
        if fixed != call:
            logger.info("corrected tool call %s%s -> %s%s", call.tool_name, sorted(call.arguments), fixed.tool_name, sorted(fixed.arguments))
        with self._log_lock:
            self.invocations.append((fixed.tool_name, dict(fixed.arguments)))
        try:
            result = self._handlers[fixed.tool_name](**fixed.arguments)
        except BlockedRequest as exc:
            result = ToolResult.blocked(fixed.tool_name, exc.domain or exc.url)
        except (SandboxError, TransportError, ScrapeError, OSError, ValueError, TypeError) as exc:
            result = ToolResult.error(fixed.tool_name, str(exc))
        except Exception as exc:  # the loop must never see an exception from a tool
            logger.exception("tool %s failed", fixed.tool_name)
            result = ToolResult.error(fixed.tool_name, f"{type(exc).__name__}: {exc}")
        result.latency = time.perf_counter() - start
        return fixed, result

    # -- adapters --------------------------------------------------------------

    def _check(self, tool: str, url: str) -> ToolResult | None:
        decision = check_blocklist(url, self.blocklist)
        if decision.allowed:
            return None
        return ToolResult.blocked(tool, decision.domain or f"an unparseable URL ({url!r})", reason=decision.reason)

    def _search(self, q: str, num_results: int | None = None) -> ToolResult:
        if not str(q).strip():
            return ToolResult.error("google_search", "query must not be empty")
        try:
            hits = self.search_backend.search(q, int(num_results or self.default_num_results))
        except (TransportError, OSError) as exc:
            return ToolResult.error("google_search", f"search backend unavailable: {exc}")
        kept = [h for h in hits if check_blocklist(h.url, self.blocklist).allowed]
        kept = [type(h)(h.title, h.url, h.snippet, rank) for rank, h in enumerate(kept, start=1)]
        return ToolResult(
            "google_search", format_hits(kept), metadata={"results": [h.to_dict() for h in kept], "removed": len(hits) - len(kept)}
        )

    def _scrape(self, url: str, info_to_extract: str) -> ToolResult:
        blocked = self._check("scrape_and_extract_info", url)
        if blocked:
            return blocked
        try:
            ex = scrape_and_extract(url, info_to_extract, self.fetchers, self.summarizer)
        except ScrapeError as exc:
            return ToolResult.error("scrape_and_extract_info", f"all retrieval backends failed ({exc})", failures=exc.failures)
        return ToolResult("scrape_and_extract_info", ex.evidence, metadata={"backend": ex.backend, "fallbacks": ex.failures})

    def _create_sandbox(self) -> ToolResult:
        sid = self.sandboxes.create()
        return ToolResult("create_sandbox", f"sandbox_id: {sid}", metadata={"sandbox_id": sid})

    def _exec_result(self, tool: str, r) -> ToolResult:
        if r.timed_out:
            return ToolResult(tool, f"Error: execution timed out\n{r.output}", "error", metadata={"timed_out": True, "exit_code": r.exit_code})
        out = r.output if r.exit_code == 0 else f"{r.output}\n[exit code: {r.exit_code}]"
        return ToolResult(tool, out, metadata={"exit_code": r.exit_code, "timed_out": False})

    def _run_command(self, sandbox_id: str, command: str) -> ToolResult:
        return self._exec_result("run_command", self.sandboxes.run_command(sandbox_id, command))

    def _run_python(self, sandbox_id: str, code: str) -> ToolResult:
        return self._exec_result("run_python_code", self.sandboxes.run_python(sandbox_id, code))

    def _upload(self, sandbox_id: str, local_file_path: str, sandbox_file_path: str) -> ToolResult:
        t = upload_local_to_sandbox(self.sandboxes, sandbox_id, local_file_path, sandbox_file_path)
        return ToolResult("upload_file_from_local_to_sandbox", f"uploaded {t.nbytes} bytes to {t.destination}", metadata={"destination": t.destination, "bytes": t.nbytes})

    def _download_local(self, sandbox_id: str, sandbox_file_path: str, local_file_path: str) -> ToolResult:
        t = download_sandbox_to_local(self.sandboxes, sandbox_id, sandbox_file_path, local_file_path)
        return ToolResult("download_file_from_sandbox_to_local", f"downloaded {t.nbytes} bytes to {t.destination}", metadata={"destination": t.destination, "bytes": t.nbytes})

    def _download_internet(self, sandbox_id: str, url: str, sandbox_file_path: str) -> ToolResult:
        blocked = self._check("download_file_from_internet_to_sandbox", url)
        if blocked:
            return blocked
        t = download_internet_to_sandbox(self.sandboxes, self.transport, sandbox_id, url, sandbox_file_path)
        return ToolResult("download_file_from_internet_to_sandbox", f"downloaded {t.nbytes} bytes to {t.destination}", metadata={"destination": t.destination, "bytes": t.nbytes})
