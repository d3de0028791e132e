"""HTTP service exposing the pipeline: POST /query, POST /classify, GET /healthz.

Thin JSON layer over the same runtime the CLI uses. Malformed bodies get a
400 naming the offending field, backend failures a 502 naming the stage,
and snapshot payloads over 1 MiB a 413. Every response carries latency_ms.
"""

from __future__ import annotations

import base64
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .config import Runtime
from .errors import ContractError, DataIntegrityError, EmptyIndexError, ParameterError
from .pipeline import StageError, run_classify, run_query
from .promptkit import DetailLevel, GenParams
from .signalgen import N_BINS, N_CHANNELS, Snapshot

MAX_SNAPSHOT_BYTES = 1 << 20


class RequestError(Exception):
    def __init__(self, status: int, message: str, field: str | None = None):
        super().__init__(message)
        self.status = status
        self.field = field


def _decode_snapshot_b64(payload: str) -> Snapshot:
    try:
        raw = base64.b64decode(payload, validate=True)
    except Exception as exc:
        raise RequestError(400, f"snapshot_b64 is not valid base64: {exc}", "snapshot_b64")
    expected = N_CHANNELS * N_BINS * 4
    if len(raw) != expected:
        raise RequestError(
            400,
            f"snapshot_b64 decodes to {len(raw)} bytes, expected {expected}",
            "snapshot_b64",
        )
    data = np.frombuffer(raw, dtype="<f4").reshape(N_CHANNELS, N_BINS).astype(np.float64)
    try:
        return Snapshot(id=0, data=data, meta=None)
    except DataIntegrityError as exc:
        raise RequestError(400, str(exc), "snapshot_b64")


class _Handler(BaseHTTPRequestHandler):
    runtime: Runtime  # set by serve()

    # Silence per-request logging; the service is often run under tests.
    def log_message(self, fmt, *args):
        pass

    def _send_json(self, status: int, payload: dict):
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        if length > MAX_SNAPSHOT_BYTES:
            # Drain (bounded) so the client reliably receives the 413
            # instead of a reset mid-upload.
            remaining = min(length, 8 * MAX_SNAPSHOT_BYTES)
            while remaining > 0:
                chunk = self.rfile.read(min(remaining, 65536))
                if not chunk:
                    break
                remaining -= len(chunk)
            raise RequestError(413, f"payload of {length} bytes exceeds 1 MiB limit")
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise RequestError(400, f"body is not valid JSON: {exc}", "$")
        if not isinstance(body, dict):
            raise RequestError(400, "body must be a JSON object", "$")
        return body

    def _resolve_query_vector(self, body: dict):
        """Returns (snapshot, vector) with exactly one of them set."""
        given = [key for key in ("snapshot_id", "snapshot_b64", "vector") if key in body]
        if len(given) != 1:
            raise RequestError(
                400, "provide exactly one of snapshot_id, snapshot_b64, vector",
                "|".join(given) or "snapshot_id",
            )
        key = given[0]
        if key == "snapshot_id":
            try:
                rid = int(body["snapshot_id"])
            except (TypeError, ValueError):
                raise RequestError(400, "snapshot_id must be an integer", "snapshot_id")
            try:
                vec, _meta = self.runtime.index.get(rid)
            except ValueError:
                raise RequestError(400, f"snapshot_id {rid} not in index", "snapshot_id")
            return None, vec
        if key == "snapshot_b64":
            if not isinstance(body["snapshot_b64"], str):
                raise RequestError(400, "snapshot_b64 must be a string", "snapshot_b64")
            return _decode_snapshot_b64(body["snapshot_b64"]), None
        vector = body["vector"]
        if not isinstance(vector, list):
            raise RequestError(400, "vector must be an array of numbers", "vector")
        arr = np.asarray(vector, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] != self.runtime.index.dimension:
            raise RequestError(
                400,
                f"vector has dimension {arr.shape[0] if arr.ndim == 1 else arr.shape}, "
                f"index declares {self.runtime.index.dimension}",
                "vector",
            )
        return None, arr

    def _parse_k(self, body: dict) -> int | None:
        if "k" not in body:
            return None
        try:
            k = int(body["k"])
        except (TypeError, ValueError):
            raise RequestError(400, "k must be an integer", "k")
        if k < 1:
            raise RequestError(400, "k must be >= 1", "k")
        return k

    def _parse_params(self, body: dict) -> GenParams | None:
        if "params" not in body:
            return None
        raw = body["params"]
        if not isinstance(raw, dict):
            raise RequestError(400, "params must be an object", "params")
        try:
            return GenParams(
                temperature=float(raw.get("temperature", 0.7)),
                top_k=int(raw.get("top_k", 40)),
                max_tokens=int(raw.get("max_tokens", 500)),
            )
        except (ParameterError, TypeError, ValueError) as exc:
            field = next(
                (f"params.{name}" for name in ("temperature", "top_k", "max_tokens")
                 if name in str(exc)),
                "params",
            )
            raise RequestError(400, str(exc), field)

    def do_GET(self):
        if self.path != "/healthz":
            self._send_json(404, {"error": "not found"})
            return
        start = time.perf_counter()
        payload = {"status": "ok", "index_size": len(self.runtime.index)}
        payload["latency_ms"] = (time.perf_counter() - start) * 1000.0
        self._send_json(200, payload)

    def do_POST(self):
        if self.path not in ("/query", "/classify"):
            self._send_json(404, {"error": "not found"})
            return
        start = time.perf_counter()
        try:
            body = self._read_body()
            if self.path == "/query":
                snapshot, vector = self._resolve_query_vector(body)
                question = body.get("question")
                if not isinstance(question, str) or not question.strip():
                    raise RequestError(400, "question must be a non-empty string", "question")
                level = body.get("detail_level", DetailLevel.SIGNAL_INFO_GENERAL.value)
                try:
                    level = DetailLevel(level)
                except ValueError:
                    raise RequestError(
                        400, f"unknown detail_level {level!r}", "detail_level"
                    )
                result = run_query(
                    self.runtime,
                    question=question,
                    detail_level=level,
                    snapshot=snapshot,
                    vector=vector,
                    k=self._parse_k(body),
                    params=self._parse_params(body),
                )
            else:
                snapshot, vector = self._resolve_query_vector(body)
                result = run_classify(
                    self.runtime, snapshot=snapshot, vector=vector, k=self._parse_k(body)
                )
            payload = dict(result.payload)
            payload["latency_ms"] = (time.perf_counter() - start) * 1000.0
            payload["stage_latencies_ms"] = result.latencies_ms
            self._send_json(200, payload)
        except RequestError as exc:
            body = {"error": str(exc)}
            if exc.field:
                body["field"] = exc.field
            body["latency_ms"] = (time.perf_counter() - start) * 1000.0
            self._send_json(exc.status, body)
        except StageError as exc:
            cause = exc.cause
            if isinstance(cause, (ParameterError, ContractError, EmptyIndexError)):
                self._send_json(
                    400,
                    {
                        "error": str(cause),
                        "field": "body",
                        "stage": exc.stage,
                        "latency_ms": (time.perf_counter() - start) * 1000.0,
                    },
                )
            else:
                self._send_json(
                    502,
                    {
                        "error": str(cause),
                        "stage": exc.stage,
                        "latency_ms": (time.perf_counter() - start) * 1000.0,
                    },
                )


def make_server(runtime: Runtime, host: str = "127.0.0.1", port: int = 8841) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"runtime": runtime})
    return ThreadingHTTPServer((host, port), handler)


def serve(runtime: Runtime, host: str = "127.0.0.1", port: int = 8841) -> None:
    server = make_server(runtime, host, port)
    print(f"gnssrag service on http://{host}:{port} (index size {len(runtime.index)})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def serve_background(runtime: Runtime, host: str = "127.0.0.1", port: int = 0):
    """Start the service on a thread; returns (server, thread). Port 0 picks
    a free port; read it from server.server_address."""
    server = make_server(runtime, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, thread
