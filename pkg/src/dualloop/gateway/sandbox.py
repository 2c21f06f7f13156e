"""Code-execution sandboxes and file transfer between sandbox, local disk and the web.

:class:`LocalSandboxes` runs each sandbox as a scratch directory with commands
executed by subprocess; it gives reproducibility, not security isolation.
:class:`RemoteSandboxes` speaks a small JSON protocol to a sandbox service.
"""

from __future__ import annotations

import base64
import itertools
import os
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Protocol

from dualloop.gateway.transport import Transport, TransportError


class SandboxError(RuntimeError):
    pass


class UnknownSandbox(SandboxError):
    def __init__(self, sandbox_id: str):
        super().__init__(f"unknown sandbox id {sandbox_id!r}")
        self.sandbox_id = sandbox_id


@dataclass(frozen=True)
class ExecResult:
    output: str
    exit_code: int
    timed_out: bool = False


class Sandboxes(Protocol):
    def create(self) -> str: ...
    def destroy(self, sandbox_id: str) -> None: ...
    def run_command(self, sandbox_id: str, command: str, timeout: float | None = None) -> ExecResult: ...
    def run_python(self, sandbox_id: str, source: str, timeout: float | None = None) -> ExecResult: ...
    def write_file(self, sandbox_id: str, path: str, data: bytes) -> str: ...
    def read_file(self, sandbox_id: str, path: str) -> bytes: ...


class LocalSandboxes:
    def __init__(self, root: str | Path | None = None, timeout: float = 60.0):
        self._root = Path(root) if root else Path(tempfile.mkdtemp(prefix="dualloop-sbx-"))
        self._root.mkdir(parents=True, exist_ok=True)
        self.timeout = timeout
        self._dirs: dict[str, Path] = {}
        self._ids = itertools.count(1)
        self._lock = threading.Lock()

    def create(self) -> str:
        with self._lock:
            while True:
                sid = f"sandbox-{next(self._ids)}"
                d = self._root / sid
                if not d.exists():
                    break
            d.mkdir(parents=True)
            self._dirs[sid] = d
        return sid

    def destroy(self, sandbox_id: str) -> None:
        with self._lock:
            d = self._dirs.pop(sandbox_id, None)
        if d is None:
            raise UnknownSandbox(sandbox_id)
        shutil.rmtree(d, ignore_errors=True)

    def _dir(self, sandbox_id: str) -> Path:
        with self._lock:
            d = self._dirs.get(sandbox_id)
        if d is None:
            raise UnknownSandbox(sandbox_id)
        return d

    def resolve(self, sandbox_id: str, path: str) -> Path:
        """Map a sandbox path (absolute paths are rooted at the sandbox) onto disk."""
        root = self._dir(sandbox_id)
        rel = PurePosixPath(path)
        parts = [p for p in rel.parts if p not in ("/", "")]
        if ".." in parts:
            raise SandboxError(f"path {path!r} escapes the sandbox")
        return root.joinpath(*parts)

    def _run(self, sandbox_id: str, argv: list[str] | str, shell: bool, timeout: float | None) -> ExecResult:
        cwd = self._dir(sandbox_id)
        env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "HOME": str(cwd), "LANG": "C.UTF-8"}
        proc = subprocess.Popen(
            argv,
            shell=shell,
            cwd=cwd,
            env=env,
            stdin=subprocess.DEVNULL,
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            start_new_session=True,
        )
        try:
            out, _ = proc.communicate(timeout=timeout or self.timeout)
        except subprocess.TimeoutExpired:
            os.killpg(proc.pid, signal.SIGKILL)
            out, _ = proc.communicate()
            return ExecResult(out.decode("utf-8", errors="replace"), -9, timed_out=True)
        return ExecResult(out.decode("utf-8", errors="replace"), proc.returncode)

    def run_command(self, sandbox_id, command, timeout=None) -> ExecResult:
        return self._run(sandbox_id, command, True, timeout)

    def run_python(self, sandbox_id, source, timeout=None) -> ExecResult:
        script = self._dir(sandbox_id) / ".run.py"
        script.write_text(source, encoding="utf-8")
        return self._run(sandbox_id, [sys.executable, "-I", str(script)], False, timeout)

    def write_file(self, sandbox_id, path, data) -> str:
        dest = self.resolve(sandbox_id, path)
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(data)
        return path

    def read_file(self, sandbox_id, path) -> bytes:
        src = self.resolve(sandbox_id, path)
        if not src.is_file():
            raise SandboxError(f"no such file in sandbox: {path}")
        return src.read_bytes()


class RemoteSandboxes:
    """Client for a sandbox service.

    Endpoints: ``POST /sandboxes``, ``DELETE /sandboxes/{id}``,
    ``POST /sandboxes/{id}/exec`` with ``{command}`` or ``{code}``,
    ``POST /sandboxes/{id}/files`` with ``{path, data_b64}``, and
    ``POST /sandboxes/{id}/files/read`` with ``{path}``.
    """

    def __init__(self, transport: Transport, base_url: str, timeout: float = 60.0):
        self.transport = transport
        self.base = base_url.rstrip("/")
        self.timeout = timeout

    def _call(self, method: str, path: str, body=None) -> dict:
        resp = self.transport.request(method, self.base + path, json=body)
        if resp.status == 404:
            raise UnknownSandbox(path.split("/")[2] if path.count("/") >= 2 else path)
        if resp.status >= 400:
            raise SandboxError(f"sandbox service returned HTTP {resp.status}: {resp.text[:200]}")
        return resp.json() if resp.content else {}

    def create(self) -> str:
        return self._call("POST", "/sandboxes", {})["id"]

    def destroy(self, sandbox_id):
        self._call("DELETE", f"/sandboxes/{sandbox_id}")

    def _exec(self, sandbox_id, body, timeout) -> ExecResult:
        body["timeout"] = timeout or self.timeout
        r = self._call("POST", f"/sandboxes/{sandbox_id}/exec", body)
        return ExecResult(r.get("output", ""), int(r.get("exit_code", -1)), bool(r.get("timed_out", False)))

    def run_command(self, sandbox_id, command, timeout=None):
        return self._exec(sandbox_id, {"command": command}, timeout)

    def run_python(self, sandbox_id, source, timeout=None):
        return self._exec(sandbox_id, {"code": source}, timeout)

    def write_file(self, sandbox_id, path, data):
        self._call("POST", f"/sandboxes/{sandbox_id}/files", {"path": path, "data_b64": base64.b64encode(data).decode()})
        return path

    def read_file(self, sandbox_id, path):
        r = self._call("POST", f"/sandboxes/{sandbox_id}/files/read", {"path": path})
        return base64.b64decode(r["data_b64"])


@dataclass(frozen=True)
class Transfer:
    destination: str
    nbytes: int


def upload_local_to_sandbox(sandboxes: Sandboxes, sandbox_id: str, local_path: str, sandbox_path: str) -> Transfer:
    src = Path(local_path)
    if not src.is_file():
        raise SandboxError(f"local file not found: {local_path}")
    data = src.read_bytes()
    return Transfer(sandboxes.write_file(sandbox_id, sandbox_path, data), len(data))


def download_sandbox_to_local(sandboxes: Sandboxes, sandbox_id: str, sandbox_path: str, local_path: str) -> Transfer:
    data = sandboxes.read_file(sandbox_id, sandbox_path)
    dest = Path(local_path)
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_bytes(data)
    return Transfer(str(dest), len(data))


def download_internet_to_sandbox(
    sandboxes: Sandboxes, transport: Transport, sandbox_id: str, url: str, sandbox_path: str
) -> Transfer:
    """``transport`` should be the gateway's guarded transport."""
    # validate id and destination before touching the network
    if isinstance(sandboxes, LocalSandboxes):
        sandboxes.resolve(sandbox_id, sandbox_path)
    resp = transport.request("GET", url)
    if resp.status >= 400:
        raise TransportError(f"download failed with HTTP {resp.status}")
    return Transfer(sandboxes.write_file(sandbox_id, sandbox_path, resp.content), len(resp.content))
