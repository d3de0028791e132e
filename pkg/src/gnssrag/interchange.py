"""Loader and evaluator for the neutral encoder interchange format.

An interchange model is a single ``.npz`` file holding a JSON graph spec
under the key ``meta`` plus the weight arrays it references. The graph is a
flat list of ops applied to a 1024x34 float snapshot, ending in a vector of
``output_dim`` components. The op set is deliberately small and closed; an
unknown op is a format error, never silently skipped.

Supported ops::

    {"op": "minmax_scale"}                      -> (x - min) / (max - min)
    {"op": "resize_bilinear", "height": H, "width": W}
    {"op": "replicate_channels", "count": C}    -> (C, H, W)
    {"op": "normalize_channels", "mean": [...], "std": [...]}
    {"op": "flatten"}
    {"op": "matmul", "weights": "<key>"}        -> x @ W, W is (in, out)
    {"op": "bias_add", "weights": "<key>"}
    {"op": "relu"} | {"op": "tanh"}
    {"op": "l2_normalize"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError

INTERCHANGE_FORMAT_VERSION = 1


@dataclass
class InterchangeModel:
    input_shape: tuple[int, int]
    output_dim: int
    ops: list[dict]
    weights: dict[str, np.ndarray]


def load_model(path: Path | str) -> InterchangeModel:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise FormatError(f"{path}: not a readable interchange archive: {exc}") from exc
    if "meta" not in archive:
        raise FormatError(f"{path}: missing 'meta' graph spec")
    try:
        meta = json.loads(str(archive["meta"]))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: graph spec is not valid JSON: {exc}") from exc
    if meta.get("format_version") != INTERCHANGE_FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format_version {meta.get('format_version')!r}"
        )
    weights = {k: archive[k] for k in archive.files if k != "meta"}
    for op in meta["ops"]:
        key = op.get("weights")
        if key is not None and key not in weights:
            raise FormatError(f"{path}: op references missing weight array {key!r}")
    return InterchangeModel(
        input_shape=tuple(meta["input_shape"]),
        output_dim=int(meta["output_dim"]),
        ops=list(meta["ops"]),
        weights=weights,
    )


def _resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    """Align-corners bilinear resize of the trailing two axes."""
    if x.ndim == 2:
        x = x[None, ...]
        squeeze = True
    else:
        squeeze = False
    _, h, w = x.shape
    rows = np.linspace(0.0, h - 1.0, height) if height > 1 else np.zeros(1)
    cols = np.linspace(0.0, w - 1.0, width) if width > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[None, :, None]
    fc = (cols - c0)[None, None, :]
    top = x[:, r0][:, :, c0] * (1 - fc) + x[:, r0][:, :, c1] * fc
    bot = x[:, r1][:, :, c0] * (1 - fc) + x[:, r1][:, :, c1] * fc
    out = top * (1 - fr) + bot * fr
    return out[0] if squeeze else out


def run_model(model: InterchangeModel, snapshot_data: np.ndarray) -> np.ndarray:
    """Run the graph on raw snapshot values; returns the output vector."""
    x = np.asarray(snapshot_data, dtype=np.float64)
    if x.shape != model.input_shape:
        raise FormatError(
            f"model expects input {model.input_shape}, got {x.shape}"
        )
    for op in model.ops:
        name = op["op"]
        if name == "minmax_scale":
            lo, hi = float(x.min()), float(x.max())
            x = np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)
        elif name == "resize_bilinear":
            x = _resize_bilinear(x, int(op["height"]), int(op["width"]))
        elif name == "replicate_channels":
            x = np.repeat(x[None, ...], int(op["count"]), axis=0)
        elif name == "normalize_channels":
            mean = np.asarray(op["mean"], dtype=np.float64)[:, None, None]
            std = np.asarray(op["std"], dtype=np.float64)[:, None, None]
            x = (x - mean) / std
        elif name == "flatten":
            x = x.reshape(-1)
        elif name == "matmul":
            x = x @ model.weights[op["weights"]].astype(np.float64)
        elif name == "bias_add":
            x = x + model.weights[op["weights"]].astype(np.float64)
        elif name == "relu":
            x = np.maximum(x, 0.0)
        elif name == "tanh":
            x = np.tanh(x)
        elif name == "l2_normalize":
            norm = float(np.linalg.norm(x))
            if norm > 0:
                x = x / norm
        else:
            raise FormatError(f"unknown interchange op {name!r}")
    return np.asarray(x, dtype=np.float64).reshape(-1)
