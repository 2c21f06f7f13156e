"""Contamination blocklist shared by every retrieval-capable tool."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from urllib.parse import urlsplit


@dataclass(frozen=True)
class BlockDecision:
    allowed: bool
    domain: str | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.allowed


ALLOW = BlockDecision(True)


def _normalize(domain: str) -> str:
    d = domain.strip().lower().rstrip(".")
    if d.startswith("*."):
        d = d[2:]
    return d


def host_of(url: str) -> str | None:
    try:
        host = urlsplit(url.strip()).hostname
    except ValueError:
        return None
    return host.rstrip(".") if host else None


class Blocklist:
    """Suffix-matched domain denylist. Additions are allowed during a run; removals are not."""

    def __init__(self, domains: Iterable[str] = ()):
        self._lock = threading.Lock()
        self._domains: frozenset[str] = frozenset()
        for d in domains:
            self.add(d)

    @classmethod
    def from_file(cls, path: str | Path) -> "Blocklist":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(ln.split("#", 1)[0] for ln in lines)

    def add(self, domain: str) -> None:
        d = _normalize(domain)
        if not d:
            return
        with self._lock:
            # readers see either the old or the new frozenset, never a partial update
            self._domains = self._domains | {d}

    @property
    def domains(self) -> frozenset[str]:
        return self._domains

    def __len__(self) -> int:
        return len(self._domains)

    def match(self, host: str) -> str | None:
        host = host.lower().rstrip(".")
        for d in self._domains:
            if host == d or host.endswith("." + d):
                return d
        return None

    def check(self, url: str) -> BlockDecision:
        return check_blocklist(url, self)


def check_blocklist(url: str, blocklist: Blocklist) -> BlockDecision:
    host = host_of(url)
    if not host:
        # fail closed
        return BlockDecision(False, None, f"could not determine host of {url!r}")
    hit = blocklist.match(host)
    if hit:
        return BlockDecision(False, hit, f"{host} is blocked ({hit})")
    return ALLOW
