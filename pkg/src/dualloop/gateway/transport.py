"""HTTP transports used by the retrieval adapters.

Every adapter receives a :class:`GuardedTransport`, so no request can reach a
blocked host regardless of which tool issued it.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from dualloop.gateway.blocklist import Blocklist, check_blocklist


@dataclass
class Response:
    status: int
    content: bytes = b""
    headers: dict[str, str] = field(default_factory=dict)

    @property
    def text(self) -> str:
        return self.content.decode("utf-8", errors="replace")

    def json(self) -> Any:
        import json

        return json.loads(self.content)


class TransportError(RuntimeError):
    pass


class BlockedRequest(TransportError):
    def __init__(self, url: str, domain: str | None, reason: str):
        super().__init__(reason)
        self.url = url
        self.domain = domain


class Transport(Protocol):
    def request(self, method: str, url: str, *, json: Any = None, headers: dict[str, str] | None = None) -> Response: ...


class HttpxTransport:
    def __init__(self, timeout: float = 60.0, client=None):
        import httpx

        self._client = client or httpx.Client(timeout=timeout, follow_redirects=True)

    def request(self, method, url, *, json=None, headers=None) -> Response:
        import httpx

        try:
            r = self._client.request(method, url, json=json, headers=headers)
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        return Response(r.status_code, r.content, dict(r.headers))


_EMBEDDED_URL = re.compile(r"https?://[^\s?#&]+", re.IGNORECASE)


class GuardedTransport:
    """Refuses any request whose URL fails the blocklist; delegates the rest.

    URLs embedded in the request URL (reader proxies of the form
    ``https://proxy/https://target``) are checked as well.
    """

    def __init__(self, inner: Transport, blocklist: Blocklist):
        self.inner = inner
        self.blocklist = blocklist

    def request(self, method, url, *, json=None, headers=None) -> Response:
        for candidate in [url, *_EMBEDDED_URL.findall(url[1:])]:
            decision = check_blocklist(candidate, self.blocklist)
            if not decision.allowed:
                raise BlockedRequest(url, decision.domain, decision.reason)
        return self.inner.request(method, url, json=json, headers=headers)


class MockTransport:
    """Routes requests to handlers by URL prefix and counts every attempt."""

    def __init__(self, routes: dict[str, Callable[..., Response] | Response | bytes | str] | None = None):
        self.routes = dict(routes or {})
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def request(self, method, url, *, json=None, headers=None) -> Response:
        with self._lock:
            self.calls.append((method, url))
        for prefix in sorted(self.routes, key=len, reverse=True):
            if url.startswith(prefix):
                h = self.routes[prefix]
                if callable(h):
                    return h(method, url, json=json)
                if isinstance(h, Response):
                    return h
                return Response(200, h.encode() if isinstance(h, str) else h)
        return Response(404, b"not found")

    def attempts_to(self, host: str) -> int:
        from dualloop.gateway.blocklist import host_of

        return sum(1 for _, u in self.calls if (host_of(u) or "") == host or (host_of(u) or "").endswith("." + host))
