"""Snapshot -> unit-length 512-d embedding.

Two routes: a deterministic spectral featurizer that keeps the whole
pipeline verifiable offline, and a client for an external pre-trained
encoder reached over HTTP or loaded from a local interchange file.
"""

from __future__ import annotations

import base64
import json
import socket
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import interchange
from .errors import (
    ContractError,
    DataIntegrityError,
    ParameterError,
    RemoteTimeoutError,
    TransportError,
)
from .signalgen import N_BINS, N_CHANNELS, Snapshot

EMBEDDING_DIM = 512

# Fraction of cells assumed to be floor when estimating the per-snapshot
# reference level; the widest jammer occupies ~61% of cells.
_FLOOR_QUANTILE = 0.2

# Channels whose mean power sits within this many dB of the floor reference
# are treated as unoccupied. Calibrated so a clean snapshot's channels all
# clamp to zero while persistent jammers stay visible.
_VISIBILITY_MARGIN_DB = 4.0

_PROJECTION_SEED = 42
_projection_matrix: np.ndarray | None = None


class EmbeddingSource(str, Enum):
    BASELINE = "Baseline"
    EXTERNAL = "External"


@dataclass
class Embedding:
    snapshot_id: int
    vector: np.ndarray
    source: EmbeddingSource

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if self.vector.shape != (EMBEDDING_DIM,):
            raise ContractError(
                f"embedding must have dimension {EMBEDDING_DIM}, got {self.vector.shape[0]}"
            )
        if not np.isfinite(self.vector).all():
            raise DataIntegrityError("embedding contains non-finite components")


def projection_matrix() -> np.ndarray:
    """Fixed seeded random projection, 512 x 1024, scaled by 1/sqrt(512).

    Versioned by its seed so stored indexes stay comparable across runs.
    """
    global _projection_matrix
    if _projection_matrix is None:
        rng = np.random.default_rng(_PROJECTION_SEED)
        _projection_matrix = rng.standard_normal((EMBEDDING_DIM, N_CHANNELS)) / np.sqrt(
            EMBEDDING_DIM
        )
    return _projection_matrix


# Weight of the sub-margin texture tilt blended into every embedding;
# large enough that distinct snapshots get distinct embeddings in float32
# (sparse one-channel features are otherwise scale-invariant), small enough
# not to disturb the occupied-channel geometry.
_TEXTURE_TILT = 0.01


def channel_profile_db(data: np.ndarray) -> np.ndarray:
    """Per-channel mean power in dB over the snapshot's own floor reference.

    Mean power is taken in the linear domain and expressed in dB, so brief
    strong occupancy still registers. The reference is the 20th percentile
    of all cells; being an empirical quantile, it makes the profile exactly
    invariant to a constant dB offset on every cell.
    """
    mean_power_db = 10.0 * np.log10(np.mean(10.0 ** (data / 10.0), axis=1))
    floor_ref = np.quantile(data, _FLOOR_QUANTILE)
    return mean_power_db - floor_ref


def channel_features(data: np.ndarray) -> np.ndarray:
    """Occupied-channel excess: profile minus the visibility margin, clamped
    at zero so floor-only channels vanish."""
    return np.maximum(channel_profile_db(data) - _VISIBILITY_MARGIN_DB, 0.0)


def embed_baseline(snap: Snapshot) -> Embedding:
    """Deterministic featurizer: channel profile -> random projection -> L2.

    The projected occupied-channel excess carries the jammer geometry; a
    small fixed-weight tilt from the full (centered) profile texture makes
    every snapshot's direction unique. Snapshots with no channel above the
    visibility margin (the clean signature) additionally share a fixed
    anchor direction, so interference-free snapshots form one tight cluster.
    """
    if not np.isfinite(snap.data).all():
        raise DataIntegrityError("snapshot contains non-finite cells")
    features = channel_features(snap.data)
    vec = projection_matrix() @ features
    if float(np.linalg.norm(vec)) < 1e-12:
        anchor = np.zeros(EMBEDDING_DIM)
        anchor[0] = 1.0
        vec = anchor
    texture = channel_profile_db(snap.data)
    texture = texture - texture.mean()
    tilt = projection_matrix() @ texture
    tilt_norm = float(np.linalg.norm(tilt))
    if tilt_norm > 1e-12:
        vec = vec + _TEXTURE_TILT * tilt / tilt_norm
    vec = vec / float(np.linalg.norm(vec))
    return Embedding(snapshot_id=snap.id, vector=vec, source=EmbeddingSource.BASELINE)


@dataclass
class EncoderHandle:
    """Where the external encoder lives: an HTTP endpoint or a local
    interchange-format model file. Exactly one must be set."""

    url: str | None = None
    model_path: str | Path | None = None
    output_dim: int = EMBEDDING_DIM
    timeout_ms: int = 30000

    def __post_init__(self):
        if (self.url is None) == (self.model_path is None):
            raise ParameterError("EncoderHandle needs exactly one of url or model_path")
        if self.timeout_ms <= 0:
            raise ParameterError(f"timeout_ms must be positive, got {self.timeout_ms}")


_model_cache: dict[tuple[str, float], interchange.InterchangeModel] = {}
_model_cache_lock = threading.Lock()


def _load_local_model(path: str | Path) -> interchange.InterchangeModel:
    resolved = Path(path).resolve()
    key = (str(resolved), resolved.stat().st_mtime)
    with _model_cache_lock:
        if key not in _model_cache:
            _model_cache.clear()
            _model_cache[key] = interchange.load_model(resolved)
        return _model_cache[key]


def encode_request_payload(snap: Snapshot) -> bytes:
    """Wire format for remote encoding: raw snapshot floats, base64 LE f32."""
    return json.dumps(
        {
            "snapshot_id": int(snap.id),
            "shape": [N_CHANNELS, N_BINS],
            "data": base64.b64encode(snap.data.astype("<f4").tobytes()).decode("ascii"),
        },
        sort_keys=True,
    ).encode("utf-8")


def _remote_vector(snap: Snapshot, handle: EncoderHandle) -> np.ndarray:
    request = urllib.request.Request(
        handle.url,
        data=encode_request_payload(snap),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=handle.timeout_ms / 1000.0) as resp:
            body = resp.read()
    except socket.timeout as exc:
        raise RemoteTimeoutError(f"encoder at {handle.url} timed out") from exc
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, socket.timeout):
            raise RemoteTimeoutError(f"encoder at {handle.url} timed out") from exc
        raise TransportError(f"encoder at {handle.url} unreachable: {exc}") from exc
    try:
        payload = json.loads(body.decode("utf-8"))
        vector = payload["vector"]
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ContractError(f"encoder response is not {{'vector': [...]}}: {exc}") from exc
    return np.asarray(vector, dtype=np.float64).reshape(-1)


def embed_external(snap: Snapshot, handle: EncoderHandle) -> Embedding:
    """Fetch the external encoder's vector and re-normalize to unit length."""
    if handle.output_dim != EMBEDDING_DIM:
        raise ContractError(
            f"encoder must declare output dimension {EMBEDDING_DIM}, "
            f"declared {handle.output_dim}"
        )
    if handle.model_path is not None:
        model = _load_local_model(handle.model_path)
        vector = interchange.run_model(model, snap.data)
    else:
        vector = _remote_vector(snap, handle)
    if vector.shape[0] != EMBEDDING_DIM:
        raise ContractError(
            f"encoder returned dimension {vector.shape[0]}, expected {EMBEDDING_DIM}"
        )
    if not np.isfinite(vector).all():
        raise DataIntegrityError("encoder returned non-finite components")
    norm = float(np.linalg.norm(vector))
    if norm < 1e-12:
        raise DataIntegrityError("encoder returned a zero vector")
    return Embedding(
        snapshot_id=snap.id, vector=vector / norm, source=EmbeddingSource.EXTERNAL
    )
