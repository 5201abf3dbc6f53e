"""Line protocol for black-box evaluators running in a child process.

Each request is one line ``id x_1 ... x_d`` and each response one line
``id f_1 ... f_m``. Numbers travel as decimal text with 17 significant
digits, which round-trips IEEE doubles exactly.
"""
from __future__ import annotations

import math
import os
import select
import shlex
import subprocess
import sys
import tempfile
import time

import numpy as np

from .errors import BlackBoxError

DIGITS = 17


def format_values(values) -> str:
    return " ".join(format(float(v), f".{DIGITS}g") for v in np.asarray(values, dtype=float).ravel())


def format_record(seq: int, values) -> str:
    return f"{int(seq)} {format_values(values)}\n"


def parse_record(line: str, expected_len: int | None = None):
    """``(id, values)`` from one protocol line; raises on anything malformed."""
    parts = line.split()
    if len(parts) < 2:
        raise BlackBoxError("malformed response: need an id and at least one value", raw=line)
    try:
        seq = int(parts[0])
        values = np.array([float(p) for p in parts[1:]])
    except ValueError:
        raise BlackBoxError("malformed response: non-numeric field", raw=line) from None
    if not np.all(np.isfinite(values)):
        raise BlackBoxError("malformed response: non-finite value", raw=line)
    if expected_len is not None and values.size != expected_len:
        raise BlackBoxError(f"malformed response: expected {expected_len} values, got {values.size}", raw=line)
    return seq, values


class ExternalBlackBox:
    """Evaluator backed by a long-lived child process.

    One request is outstanding at a time. After any failure the child is
    killed; the next call starts a fresh one, which is how the orchestrator's
    single retry gets a clean process. Sequence ids keep increasing across
    restarts.
    """

    def __init__(self, command, m: int | None = None, timeout: float = 60.0):
        self.command = shlex.split(command) if isinstance(command, str) else [str(c) for c in command]
        if not self.command:
            raise BlackBoxError("empty black-box command")
        self.m = m
        self.timeout = float(timeout)
        self._proc = None
        self._stderr = None
        self._buffer = b""
        self._seq = 0

    # process management
    def start(self):
        if self._proc is not None and self._proc.poll() is None:
            return
        self._stderr = tempfile.TemporaryFile()
        try:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=self._stderr, bufsize=0)
        except OSError as exc:
            raise BlackBoxError(f"cannot spawn black box {self.command!r}: {exc}") from exc
        self._buffer = b""

    def _stderr_tail(self, limit=2000):
        if self._stderr is None:
            return ""
        try:
            self._stderr.seek(0)
            return self._stderr.read().decode(errors="replace")[-limit:]
        except (OSError, ValueError):
            return ""

    def close(self):
        proc, self._proc = self._proc, None
        if proc is not None:
            for stream in (proc.stdin, proc.stdout):
                try:
                    stream.close()
                except OSError:
                    pass
            if proc.poll() is None:
                proc.kill()
            proc.wait()
        if self._stderr is not None:
            self._stderr.close()
            self._stderr = None
        self._buffer = b""

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass

    # protocol
    def _read_line(self, deadline):
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buffer:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise BlackBoxError(f"timeout after {self.timeout:g} s waiting for a response",
                                    raw=self._buffer.decode(errors="replace"))
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                continue
            chunk = os.read(fd, 65536)
            if not chunk:
                self._proc.wait()
                raise BlackBoxError(
                    f"black box exited with code {self._proc.returncode}; stderr: {self._stderr_tail()!r}",
                    raw=self._buffer.decode(errors="replace"))
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line.decode(errors="replace")

    def __call__(self, x) -> np.ndarray:
        self.start()
        self._seq += 1
        seq = self._seq
        request = format_record(seq, x).encode()
        try:
            try:
                self._proc.stdin.write(request)
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError):
                self._proc.wait()
                raise BlackBoxError(
                    f"black box exited with code {self._proc.returncode} before accepting a request; "
                    f"stderr: {self._stderr_tail()!r}", raw="") from None
            line = self._read_line(time.monotonic() + self.timeout)
            got, values = parse_record(line, self.m)
            if got != seq:
                raise BlackBoxError(f"response id {got} does not match request id {seq}", raw=line)
        except BlackBoxError:
            self.close()
            raise
        if self.m is None:
            self.m = values.size
        return values


def external_blackbox(command, m: int | None = None, timeout: float = 60.0) -> ExternalBlackBox:
    """Evaluator that forwards each design to ``command`` over the line protocol."""
    return ExternalBlackBox(command, m=m, timeout=timeout)


def serve(function, stdin=None, stdout=None) -> int:
    """Answer protocol requests with ``function`` until end of input.

    The in-process twin of a child black box: ``gamebo serve <problem>``
    runs this with an analytic problem.
    """
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    for line in stdin:
        if not line.strip():
            continue
        parts = line.split()
        seq = int(parts[0])
        x = np.array([float(p) for p in parts[1:]])
        y = np.asarray(function(x), dtype=float)
        if not all(math.isfinite(v) for v in y):
            raise ValueError(f"non-finite objective at request {seq}")
        stdout.write(format_record(seq, y))
        stdout.flush()
    return 0
