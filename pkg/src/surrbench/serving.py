"""Serve a trained benchmark over newline-delimited JSON.

One JSON object per line in both directions, over stdio or TCP:

    {"id": 1, "op": "run", "config": {...}, "instance": "i3", "seed": 7}
    {"id": 2, "op": "info"}
    {"id": 3, "op": "shutdown"}

Success responses carry {"id", "result"}; failures carry {"id",
"error": {"code", "message"}} where code is "bad_request" for anything
wrong with the request and "internal" otherwise. A run result reports
the measured cost (cutoff semantics already applied), the quantile that
was drawn, and the raw uncapped prediction so clients can apply their
own per-run caps. The info result is self-describing: it includes the
parameter space text and the instance table, which is how RemoteBackend
bootstraps without local files.
"""
from __future__ import annotations

import json
import socket
import socketserver
import sys
import threading
import time
from dataclasses import dataclass

import numpy as np

from .backends import EvalResult, truncate_runtime
from .rundata import InstanceSet, RunStatus
from .space import parse_space, render_space
from .surrogate import SurrogateBenchmark

__all__ = [
    "BenchmarkServer",
    "RemoteBackend",
    "RemoteError",
    "handle_request",
    "serve_stdio",
    "serve_tcp",
]


class RemoteError(RuntimeError):
    """Server answered with an error object."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class _LatencyStats:
    def __init__(self):
        self._lock = threading.Lock()
        self.requests = 0
        self.total_ms = 0.0
        self.max_ms = 0.0

    def record(self, elapsed_ms: float) -> None:
        with self._lock:
            self.requests += 1
            self.total_ms += elapsed_ms
            self.max_ms = max(self.max_ms, elapsed_ms)

    def snapshot(self) -> dict:
        with self._lock:
            mean = self.total_ms / self.requests if self.requests else 0.0
            return {
                "requests": self.requests,
                "mean_ms": mean,
                "max_ms": self.max_ms,
            }


def _error(req_id, code: str, message: str) -> dict:
    return {"id": req_id, "error": {"code": code, "message": message}}


def _run_result(bench: SurrogateBenchmark, req: dict) -> dict:
    config = req.get("config")
    instance = req.get("instance")
    seed = req.get("seed")
    if not isinstance(config, dict):
        raise ValueError("config must be an object")
    if not isinstance(instance, str):
        raise ValueError("instance must be a string")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ValueError("seed must be an integer")
    res = bench.predict_run(config, instance, seed)
    return {
        "status": res.status.value,
        "cost": res.cost,
        "quantile": res.quantile,
        "raw_prediction": res.raw_prediction,
    }


def _info_result(bench: SurrogateBenchmark, stats: _LatencyStats) -> dict:
    info = bench.describe()
    info["space"] = render_space(bench.space)
    info["features"] = bench.instances.features.tolist()
    info["split"] = list(bench.instances.split)
    info["latency"] = stats.snapshot()
    return info


def handle_request(
    bench: SurrogateBenchmark, line: str, stats: _LatencyStats
) -> tuple[dict, bool]:
    """Answer one request line. Returns (response, stop_serving)."""
    start = time.perf_counter()
    try:
        req = json.loads(line)
    except json.JSONDecodeError as exc:
        return _error(None, "bad_request", f"not valid JSON: {exc}"), False
    if not isinstance(req, dict):
        return _error(None, "bad_request", "request must be a JSON object"), False
    req_id = req.get("id")
    op = req.get("op")
    try:
        if op == "run":
            response = {"id": req_id, "result": _run_result(bench, req)}
        elif op == "info":
            response = {"id": req_id, "result": _info_result(bench, stats)}
        elif op == "shutdown":
            return {"id": req_id, "result": {"stopping": True}}, True
        else:
            return _error(req_id, "bad_request", f"unknown op {op!r}"), False
        return response, False
    except (ValueError, KeyError) as exc:
        return _error(req_id, "bad_request", str(exc)), False
    except Exception as exc:  # pragma: no cover - defensive
        return _error(req_id, "internal", f"{type(exc).__name__}: {exc}"), False
    finally:
        stats.record((time.perf_counter() - start) * 1000.0)


def serve_stdio(bench: SurrogateBenchmark, stdin=None, stdout=None) -> int:
    """Blocking request loop over text streams. Returns requests served."""
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    stats = _LatencyStats()
    served = 0
    for line in stdin:
        if not line.strip():
            continue
        response, stop = handle_request(bench, line, stats)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
        served += 1
        if stop:
            break
    return served


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server: BenchmarkServer = self.server  # type: ignore[assignment]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            if not line.strip():
                continue
            response, stop = handle_request(server.bench, line, server.stats)
            self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
            self.wfile.flush()
            if stop:
                server.shutdown()
                return


class BenchmarkServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, bench: SurrogateBenchmark, host: str, port: int):
        self.bench = bench
        self.stats = _LatencyStats()
        super().__init__((host, port), _Handler)

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]


def serve_tcp(
    bench: SurrogateBenchmark,
    host: str = "127.0.0.1",
    port: int = 0,
    background: bool = False,
) -> BenchmarkServer:
    """Listen on host:port (0 picks a free port).

    With background=True the accept loop runs in a daemon thread and the
    server is returned immediately; otherwise this blocks until a
    shutdown request arrives.
    """
    server = BenchmarkServer(bench, host, port)

    def run() -> None:
        try:
            server.serve_forever()
        finally:
            server.server_close()

    if background:
        thread = threading.Thread(target=run, daemon=True)
        thread.start()
        server._thread = thread
    else:
        run()
    return server


class RemoteBackend:
    """Evaluation backend that talks to a server over one TCP connection.

    The space, instance table, objective and cutoff are pulled from the
    server's info response. Per-run caps are applied locally from the
    raw prediction, matching what an in-process backend would return.
    """

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rw", encoding="utf-8", newline="\n")
        self._next_id = 0
        self.n_evaluations = 0
        info = self.info()
        self.space = parse_space(info["space"])
        self.instances = InstanceSet(
            ids=tuple(info["instances"]),
            features=np.asarray(info["features"], dtype=np.float64),
            split=tuple(info["split"]),
        )
        self.objective = info["objective"]
        self.cutoff = info["cutoff"]

    def _call(self, op: str, **fields) -> dict:
        self._next_id += 1
        req_id = self._next_id
        request = {"id": req_id, "op": op, **fields}
        self._file.write(json.dumps(request) + "\n")
        self._file.flush()
        line = self._file.readline()
        if not line:
            raise RemoteError("connection", "server closed the connection")
        response = json.loads(line)
        if response.get("id") != req_id:
            raise RemoteError(
                "protocol", f"response id {response.get('id')!r} != {req_id}"
            )
        if "error" in response:
            err = response["error"]
            raise RemoteError(err.get("code", "unknown"), err.get("message", ""))
        return response["result"]

    def info(self) -> dict:
        return self._call("info")

    def shutdown_server(self) -> None:
        self._call("shutdown")

    def evaluate(
        self, config: dict, instance_id: str, seed: int, cap: float | None = None
    ) -> EvalResult:
        self.n_evaluations += 1
        result = self._call(
            "run", config=config, instance=instance_id, seed=int(seed)
        )
        if self.objective == "quality":
            if cap is not None:
                raise ValueError("caps only apply to runtime objectives")
            return EvalResult(RunStatus(result["status"]), result["cost"])
        return truncate_runtime(result["raw_prediction"], cap, self.cutoff)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()

    def __enter__(self) -> "RemoteBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
