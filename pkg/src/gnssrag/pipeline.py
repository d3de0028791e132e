"""End-to-end query execution shared by the CLI and the HTTP service.

Keeping this in one place is what makes the two surfaces answer
byte-identically for the same inputs under the templated describer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tasks
from .config import Runtime
from .errors import GnssRagError
from .promptkit import (
    DetailLevel,
    GenParams,
    QueryText,
    assemble_in_context,
    assemble_task_instruction,
    retrieve_context,
)
from .signalgen import Snapshot


class StageError(GnssRagError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class QueryResult:
    payload: dict          # deterministic under the templated describer
    latencies_ms: dict     # per-stage wall clock plus total


def _timed(stage: str, timings: dict, fn, *args, **kwargs):
    start = time.perf_counter()
    try:
        result = fn(*args, **kwargs)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    timings[stage] = (time.perf_counter() - start) * 1000.0
    return result


def run_query(
    runtime: Runtime,
    question: str,
    detail_level: DetailLevel | str = DetailLevel.SIGNAL_INFO_GENERAL,
    snapshot: Snapshot | None = None,
    vector: np.ndarray | None = None,
    image_ref: str | None = None,
    k: int | None = None,
    params: GenParams | None = None,
) -> QueryResult:
    """Embed -> retrieve -> assemble -> describe, with per-stage latency.

    Either a snapshot (embedded with the configured embedder) or a
    precomputed vector must be provided.
    """
    total_start = time.perf_counter()
    timings: dict = {}
    t = QueryText(text=question, detail_level=DetailLevel(detail_level))
    k = k if k is not None else runtime.config.k
    params = params or runtime.config.gen_params

    if vector is None:
        if snapshot is None:
            raise StageError("embed", ValueError("need a snapshot or a vector"))
        embedding = _timed("embed", timings, runtime.embed_fn, snapshot)
        ref = image_ref or f"snapshot:{snapshot.id}"
    else:
        from .embedder import Embedding, EmbeddingSource

        embedding = Embedding(
            snapshot_id=0, vector=np.asarray(vector), source=EmbeddingSource.EXTERNAL
        )
        timings["embed"] = 0.0
        ref = image_ref or "vector:inline"

    ctx = _timed("retrieve", timings, retrieve_context, runtime.index, embedding, t, k)
    if ctx.hits:
        prompt = _timed("assemble", timings, assemble_in_context, ctx, ref, t, params)
    else:
        prompt = _timed("assemble", timings, assemble_task_instruction, ref, t, params)
    description = _timed("describe", timings, runtime.describe_fn, prompt)
    timings["total"] = (time.perf_counter() - total_start) * 1000.0

    payload = {
        "description": description.text,
        "backend": description.backend.value,
        "token_count": description.token_count,
        "truncated": description.truncated,
        "detail_level": t.detail_level.value,
        "k": k,
        "metric": runtime.index.metric.label,
        "context": [hit.to_dict() for hit in ctx.hits],
    }
    return QueryResult(payload=payload, latencies_ms=timings)


def run_classify(
    runtime: Runtime,
    snapshot: Snapshot | None = None,
    vector: np.ndarray | None = None,
    k: int | None = None,
) -> QueryResult:
    """Embed (if needed) then kNN-predict type/subjammer/power/bandwidth."""
    total_start = time.perf_counter()
    timings: dict = {}
    k = k if k is not None else runtime.config.k
    if vector is None:
        if snapshot is None:
            raise StageError("embed", ValueError("need a snapshot or a vector"))
        embedding = _timed("embed", timings, runtime.embed_fn, snapshot)
        query = embedding.vector
    else:
        query = np.asarray(vector)
        timings["embed"] = 0.0
    prediction = _timed("classify", timings, tasks.predict, runtime.index, query, k)
    timings["total"] = (time.perf_counter() - total_start) * 1000.0
    payload = prediction.to_dict()
    payload["k"] = k
    return QueryResult(payload=payload, latencies_ms=timings)
