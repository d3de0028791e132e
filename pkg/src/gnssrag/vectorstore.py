"""Exact flat vector index with checksummed persistence.

Search is a full scan, identical to brute force by construction, with ties
broken by ascending id so every downstream result is reproducible. The
index file is the system of record for experiment reproducibility, hence
the per-section CRC32s.
"""

from __future__ import annotations

import json
import struct
import threading
import zlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping

import numpy as np

from .embedder import Embedding
from .errors import (
    ContractError,
    DataIntegrityError,
    EmptyIndexError,
    FormatError,
    ParameterError,
    UniquenessError,
)

INDEX_MAGIC = b"GVIX"
INDEX_VERSION = 1
DEFAULT_DIMENSION = 512

_UNIT_NORM_TOL = 1e-6


class Metric(Enum):
    COSINE = 0
    L2 = 1

    @property
    def label(self) -> str:
        return "cosine" if self is Metric.COSINE else "l2"

    @classmethod
    def from_label(cls, label: str) -> "Metric":
        try:
            return {"cosine": cls.COSINE, "l2": cls.L2}[label.lower()]
        except KeyError:
            raise ParameterError(f"unknown metric {label!r}") from None


@dataclass(frozen=True)
class SearchHit:
    id: int
    score: float
    metadata: dict

    def to_dict(self) -> dict:
        return {"id": self.id, "score": self.score, "metadata": self.metadata}


class _RWLock:
    """Many readers or one writer. Writers take preference: once one is
    waiting, new readers block, so a stream of searches cannot starve adds."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._writers_waiting += 1
            try:
                while self._writer or self._readers:
                    self._cond.wait()
            finally:
                self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class VectorIndex:
    """Ordered collection of (id, vector, metadata) supporting exact top-k."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, metric: Metric = Metric.COSINE):
        if dimension <= 0:
            raise ParameterError(f"dimension must be positive, got {dimension}")
        self.dimension = int(dimension)
        self.metric = metric
        self._ids: list[int] = []
        self._id_set: set[int] = set()
        self._vectors: list[np.ndarray] = []
        self._meta: list[dict] = []
        self._matrix: np.ndarray | None = None
        self._lock = _RWLock()

    def __len__(self) -> int:
        return len(self._ids)

    @property
    def size(self) -> int:
        return len(self._ids)

    def ids(self) -> list[int]:
        return list(self._ids)

    def get(self, record_id: int) -> tuple[np.ndarray, dict]:
        i = self._ids.index(record_id)
        return self._vectors[i].copy(), dict(self._meta[i])

    def _coerce(self, embedding) -> tuple[int | None, np.ndarray]:
        if isinstance(embedding, Embedding):
            return int(embedding.snapshot_id), np.asarray(embedding.vector, dtype=np.float32)
        return None, np.asarray(embedding, dtype=np.float32).reshape(-1)

    def add(self, embedding, metadata: Mapping | None = None, record_id: int | None = None) -> int:
        """Insert one record; returns its id.

        The id comes from ``record_id``, else the embedding's snapshot id,
        else the next free integer. Ids are u64 on disk, so they must be
        non-negative.
        """
        implied_id, vector = self._coerce(embedding)
        if vector.shape[0] != self.dimension:
            raise ContractError(
                f"vector has dimension {vector.shape[0]}, index declares {self.dimension}"
            )
        if not np.isfinite(vector).all():
            raise DataIntegrityError("vector contains non-finite components")
        if self.metric is Metric.COSINE:
            norm = float(np.linalg.norm(vector.astype(np.float64)))
            if abs(norm - 1.0) > _UNIT_NORM_TOL:
                raise ContractError(
                    f"cosine index requires unit-norm vectors, got norm {norm:.8f}"
                )
        new_id = record_id if record_id is not None else implied_id
        self._lock.acquire_write()
        try:
            if new_id is None:
                new_id = (max(self._ids) + 1) if self._ids else 0
            new_id = int(new_id)
            if new_id < 0 or new_id >= 2**64:
                raise ParameterError(f"record id {new_id} is not a 64-bit unsigned integer")
            if new_id in self._id_set:
                raise UniquenessError(f"record id {new_id} already present")
            self._ids.append(new_id)
            self._id_set.add(new_id)
            self._vectors.append(vector.copy())
            self._meta.append(dict(metadata) if metadata else {})
            self._matrix = None
        finally:
            self._lock.release_write()
        return new_id

    def _dense(self) -> np.ndarray:
        # Scores are computed in float64; caching the promoted matrix keeps
        # per-query cost at one GEMV instead of an 8-byte copy of the store.
        if self._matrix is None:
            self._matrix = np.vstack(self._vectors).astype(np.float64)
        return self._matrix

    def search(self, query, k: int) -> list[SearchHit]:
        """Exact top-k: best-first, ties broken by ascending id."""
        if isinstance(query, Embedding):
            query = query.vector
        q = np.asarray(query, dtype=np.float32).reshape(-1)
        if q.shape[0] != self.dimension:
            raise ContractError(
                f"query has dimension {q.shape[0]}, index declares {self.dimension}"
            )
        if not isinstance(k, (int, np.integer)) or k < 1:
            raise ParameterError(f"k must be a positive integer, got {k!r}")
        self._lock.acquire_read()
        try:
            if not self._ids:
                raise EmptyIndexError("search on an empty index")
            matrix = self._dense()
            ids = np.asarray(self._ids, dtype=np.uint64)
            if self.metric is Metric.COSINE:
                scores = matrix @ q.astype(np.float64)
                order = np.lexsort((ids, -scores))
            else:
                diff = matrix - q.astype(np.float64)
                scores = np.sqrt(np.einsum("ij,ij->i", diff, diff))
                order = np.lexsort((ids, scores))
            top = order[: min(int(k), len(self._ids))]
            return [
                SearchHit(id=int(ids[i]), score=float(scores[i]), metadata=dict(self._meta[i]))
                for i in top
            ]
        finally:
            self._lock.release_read()

    # --- persistence -----------------------------------------------------

    def save(self, path: Path | str) -> None:
        """Write magic/header/records with a CRC32 per section."""
        self._lock.acquire_read()
        try:
            header = struct.pack(
                "<4sHBIQ",
                INDEX_MAGIC,
                INDEX_VERSION,
                self.metric.value,
                self.dimension,
                len(self._ids),
            )
            parts = [header, struct.pack("<I", zlib.crc32(header))]
            records = bytearray()
            for rid, vec, meta in zip(self._ids, self._vectors, self._meta):
                records += struct.pack("<Q", rid)
                records += vec.astype("<f4").tobytes()
                blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
                records += struct.pack("<I", len(blob))
                records += blob
            parts.append(bytes(records))
            parts.append(struct.pack("<I", zlib.crc32(bytes(records))))
            with open(path, "wb") as f:
                for part in parts:
                    f.write(part)
        finally:
            self._lock.release_read()


def load_index(path: Path | str) -> VectorIndex:
    """Read an index file; any corruption is a FormatError with a byte offset."""
    path = Path(path)
    raw = path.read_bytes()
    header_len = struct.calcsize("<4sHBIQ")
    if len(raw) < header_len + 4:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    magic, version, metric_code, dimension, count = struct.unpack(
        "<4sHBIQ", raw[:header_len]
    )
    if magic != INDEX_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != INDEX_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    (header_crc,) = struct.unpack("<I", raw[header_len : header_len + 4])
    if header_crc != zlib.crc32(raw[:header_len]):
        raise FormatError(f"{path}: header checksum mismatch", offset=header_len)
    try:
        metric = Metric(metric_code)
    except ValueError:
        raise FormatError(f"{path}: unknown metric code {metric_code}", offset=6) from None
    index = VectorIndex(dimension=dimension, metric=metric)
    offset = header_len + 4
    records_start = offset
    records_end = len(raw) - 4
    if records_end < records_start:
        raise FormatError(f"{path}: truncated records section", offset=len(raw))
    vec_bytes = dimension * 4
    for _ in range(count):
        if offset + 8 + vec_bytes + 4 > records_end:
            raise FormatError(f"{path}: truncated record", offset=offset)
        (rid,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        vector = np.frombuffer(raw, dtype="<f4", count=dimension, offset=offset).copy()
        offset += vec_bytes
        (blob_len,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + blob_len > records_end:
            raise FormatError(f"{path}: truncated metadata blob", offset=offset)
        try:
            meta = json.loads(raw[offset : offset + blob_len].decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: corrupt metadata: {exc}", offset=offset) from exc
        offset += blob_len
        index._ids.append(int(rid))
        index._id_set.add(int(rid))
        index._vectors.append(vector)
        index._meta.append(meta)
    if offset != records_end:
        raise FormatError(f"{path}: {records_end - offset} trailing bytes", offset=offset)
    (records_crc,) = struct.unpack("<I", raw[records_end:])
    if records_crc != zlib.crc32(raw[records_start:records_end]):
        raise FormatError(f"{path}: records checksum mismatch", offset=records_start)
    if len(set(index._ids)) != len(index._ids):
        raise FormatError(f"{path}: duplicate record ids", offset=records_start)
    return index
