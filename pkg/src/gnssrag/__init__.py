"""GNSS interference characterization toolkit.

Snapshot synthesis, embedding, exact vector retrieval, prompt assembly,
description backends, retrieval-based task heads, and t-SNE projection,
wired together by a CLI and a small HTTP service.
"""

__version__ = "0.1.0"

from .embedder import Embedding, EncoderHandle, embed_baseline, embed_external
from .signalgen import (
    DatasetConfig,
    DatasetManifest,
    InterferenceType,
    JammerSpec,
    Snapshot,
    apply_multipath,
    generate_dataset,
    generate_snapshot,
    load_manifest,
    load_snapshot,
    save_snapshot,
    subjammer,
)
from .vectorstore import Metric, SearchHit, VectorIndex, load_index

__all__ = [
    "DatasetConfig",
    "DatasetManifest",
    "Embedding",
    "EncoderHandle",
    "InterferenceType",
    "JammerSpec",
    "Metric",
    "SearchHit",
    "Snapshot",
    "VectorIndex",
    "apply_multipath",
    "embed_baseline",
    "embed_external",
    "generate_dataset",
    "generate_snapshot",
    "load_index",
    "load_manifest",
    "load_snapshot",
    "save_snapshot",
    "subjammer",
    "__version__",
]
