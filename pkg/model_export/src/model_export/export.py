"""Export a pretrained vision encoder to the neutral interchange format.

The output is a single ``.npz`` graph file (JSON op list under ``meta`` plus
weight arrays) and a JSON manifest next to it. The graph maps a raw
1024 x 34 snapshot to a 512-vector and embeds the full preprocessing chain
(min-max scaling, bilinear resize to the encoder's native input, channel
replication, per-channel normalization), so the consumer never guesses.

Model sources:

    file:<checkpoint.npz>   a local checkpoint (weights already retrieved)
    hub:<model-id>          a pretrained CLIP-style checkpoint via torch +
                            open_clip; aborts cleanly when unavailable

Checkpoint schema (``file:``): an ``.npz`` holding an ``arch`` JSON string::

    {"native_input": [H, W],
     "normalize": {"mean": [...], "std": [...]},
     "layers": [{"weights": "<key>", "bias": "<key>|null",
                 "activation": "relu"|"tanh"|null}, ...]}

plus the referenced weight arrays. Linear weights are (in, out).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

INTERCHANGE_FORMAT_VERSION = 1
SNAPSHOT_SHAPE = (1024, 34)
REQUIRED_OUTPUT_DIM = 512


class ExportError(Exception):
    """Export aborted: bad source, unreachable weights, or contract breach."""


@dataclass
class ExportManifest:
    source_model: str
    output_dimension: int
    preprocessing: str
    file_hash: str
    revision: str
    format_version: int = INTERCHANGE_FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "source_model": self.source_model,
            "output_dimension": self.output_dimension,
            "preprocessing": self.preprocessing,
            "file_hash": self.file_hash,
            "revision": self.revision,
            "format_version": self.format_version,
        }


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_checkpoint(path: Path) -> tuple[dict, dict]:
    if not path.exists():
        raise ExportError(f"checkpoint not retrievable: {path}")
    try:
        archive = np.load(path, allow_pickle=False)
        arch = json.loads(str(archive["arch"]))
        weights = {key: archive[key] for key in archive.files if key != "arch"}
    except Exception as exc:
        raise ExportError(f"corrupt checkpoint {path}: {exc}") from exc
    for layer in arch.get("layers", []):
        if layer["weights"] not in weights:
            raise ExportError(f"checkpoint {path} is missing weight array {layer['weights']!r}")
        if layer.get("bias") and layer["bias"] not in weights:
            raise ExportError(f"checkpoint {path} is missing bias array {layer['bias']!r}")
    return arch, weights


def _graph_from_checkpoint(arch: dict, weights: dict) -> tuple[list[dict], dict, str]:
    """Build the interchange op list; returns (ops, graph weights, description)."""
    native_h, native_w = arch["native_input"]
    normalize = arch.get("normalize") or {}
    mean = list(normalize.get("mean", [0.0, 0.0, 0.0]))
    std = list(normalize.get("std", [1.0, 1.0, 1.0]))
    ops = [
        {"op": "minmax_scale"},
        {"op": "resize_bilinear", "height": int(native_h), "width": int(native_w)},
        {"op": "replicate_channels", "count": 3},
        {"op": "normalize_channels", "mean": mean, "std": std},
        {"op": "flatten"},
    ]
    graph_weights: dict[str, np.ndarray] = {}
    expected_in = 3 * int(native_h) * int(native_w)
    for i, layer in enumerate(arch["layers"]):
        w = np.asarray(weights[layer["weights"]], dtype=np.float32)
        if w.ndim != 2 or w.shape[0] != expected_in:
            raise ExportError(
                f"layer {i}: weight shape {w.shape} does not accept {expected_in} inputs"
            )
        key = f"w{i}"
        graph_weights[key] = w
        ops.append({"op": "matmul", "weights": key})
        if layer.get("bias"):
            b = np.asarray(weights[layer["bias"]], dtype=np.float32).reshape(-1)
            if b.shape[0] != w.shape[1]:
                raise ExportError(f"layer {i}: bias length {b.shape[0]} != {w.shape[1]}")
            bkey = f"b{i}"
            graph_weights[bkey] = b
            ops.append({"op": "bias_add", "weights": bkey})
        activation = layer.get("activation")
        if activation in ("relu", "tanh"):
            ops.append({"op": activation})
        elif activation is not None:
            raise ExportError(f"layer {i}: unsupported activation {activation!r}")
        expected_in = w.shape[1]
    description = (
        "min-max scale to [0,1]; bilinear resize (align corners) to "
        f"{native_h}x{native_w}; replicate to 3 channels; per-channel "
        f"normalize mean={mean} std={std}; flatten; "
        f"{len(arch['layers'])} linear layer(s)"
    )
    return ops, graph_weights, description


def _resize_bilinear(x: np.ndarray, height: int, width: int) -> np.ndarray:
    h, w = x.shape
    rows = np.linspace(0.0, h - 1.0, height) if height > 1 else np.zeros(1)
    cols = np.linspace(0.0, w - 1.0, width) if width > 1 else np.zeros(1)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = x[r0][:, c0] * (1 - fc) + x[r0][:, c1] * fc
    bot = x[r1][:, c0] * (1 - fc) + x[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def run_graph(ops: list[dict], weights: dict, x: np.ndarray) -> np.ndarray:
    """Evaluate the exported graph (the exporter's own implementation of the
    interchange semantics, used for the pre-flight probe)."""
    x = np.asarray(x, dtype=np.float64)
    for op in ops:
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
            x = x @ weights[op["weights"]].astype(np.float64)
        elif name == "bias_add":
            x = x + weights[op["weights"]].astype(np.float64)
        elif name == "relu":
            x = np.maximum(x, 0.0)
        elif name == "tanh":
            x = np.tanh(x)
        else:
            raise ExportError(f"graph op {name!r} is not part of the interchange contract")
    return np.asarray(x, dtype=np.float64).reshape(-1)


def probe_input() -> np.ndarray:
    """Deterministic snapshot-shaped probe used for the dimension check."""
    rng = np.random.default_rng(20240501)
    return rng.normal(-100.0, 2.0, size=SNAPSHOT_SHAPE)


def _export_from_hub(model_id: str) -> tuple[dict, dict, str]:
    try:
        import open_clip  # noqa: F401
        import torch  # noqa: F401
    except ImportError as exc:
        raise ExportError(
            f"cannot download {model_id!r}: torch/open_clip are not installed "
            "(install the [hub] extra)"
        ) from exc
    # Conversion of a full ViT tower to the flat interchange op set is out of
    # scope; hub checkpoints must be distilled into the file: schema first.
    raise ExportError(
        f"hub source {model_id!r} requires a distilled file: checkpoint; "
        "see the checkpoint schema in the module docstring"
    )


def export_encoder(model_id: str, out_path: Path | str) -> ExportManifest:
    """Write the interchange graph + manifest; returns the manifest.

    Aborts (ExportError) on unreachable weights, corrupt checkpoints, or a
    probed output dimension other than 512; no partial files are left.
    """
    out_path = Path(out_path)
    if model_id.startswith("file:"):
        source = Path(model_id[len("file:"):])
        arch, weights = _load_checkpoint(source)
        revision = _sha256(source)
    elif model_id.startswith("hub:"):
        arch, weights, revision = _export_from_hub(model_id[len("hub:"):])
    else:
        raise ExportError(f"model id must start with file: or hub:, got {model_id!r}")

    ops, graph_weights, preprocessing = _graph_from_checkpoint(arch, weights)
    probed = run_graph(ops, graph_weights, probe_input())
    if probed.shape[0] != REQUIRED_OUTPUT_DIM:
        raise ExportError(
            f"probed output dimension {probed.shape[0]} != required {REQUIRED_OUTPUT_DIM}; "
            "export aborted"
        )
    if not np.isfinite(probed).all():
        raise ExportError("probe produced non-finite outputs; export aborted")

    meta = {
        "format_version": INTERCHANGE_FORMAT_VERSION,
        "input_shape": list(SNAPSHOT_SHAPE),
        "output_dim": REQUIRED_OUTPUT_DIM,
        "ops": ops,
    }
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    np.savez(tmp_path, meta=json.dumps(meta), **graph_weights)
    # np.savez appends .npz to paths without it.
    written = tmp_path if tmp_path.exists() else tmp_path.with_suffix(tmp_path.suffix + ".npz")
    written.replace(out_path)

    manifest = ExportManifest(
        source_model=model_id,
        output_dimension=REQUIRED_OUTPUT_DIM,
        preprocessing=preprocessing,
        file_hash=_sha256(out_path),
        revision=revision,
    )
    manifest_path = out_path.with_suffix(".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


def make_reference_checkpoint(path: Path | str, seed: int = 7, hidden: int = 256) -> Path:
    """Write a small deterministic checkpoint in the file: schema.

    Stands in for a distilled encoder in offline environments; weights come
    from a fixed-seed generator so exports are reproducible.
    """
    path = Path(path)
    rng = np.random.default_rng(seed)
    native = 32
    d_in = 3 * native * native
    arch = {
        "native_input": [native, native],
        "normalize": {"mean": [0.481, 0.458, 0.408], "std": [0.269, 0.261, 0.276]},
        "layers": [
            {"weights": "fc1.weight", "bias": "fc1.bias", "activation": "tanh"},
            {"weights": "fc2.weight", "bias": None, "activation": None},
        ],
    }
    np.savez(
        path,
        arch=json.dumps(arch),
        **{
            "fc1.weight": (rng.standard_normal((d_in, hidden)) / np.sqrt(d_in)).astype(np.float32),
            "fc1.bias": np.zeros(hidden, dtype=np.float32),
            "fc2.weight": (rng.standard_normal((hidden, REQUIRED_OUTPUT_DIM)) / np.sqrt(hidden)).astype(np.float32),
        },
    )
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="export-encoder",
        description="Export a pretrained vision encoder to the interchange format.",
    )
    parser.add_argument("--model", required=True,
                        help="file:<checkpoint.npz> or hub:<model-id>")
    parser.add_argument("--out", required=True, type=Path, help="output graph file (.npz)")
    parser.add_argument("--make-reference-checkpoint", action="store_true",
                        help="first write a deterministic reference checkpoint at the "
                             "file: path, then export it")
    args = parser.parse_args(argv)
    try:
        if args.make_reference_checkpoint:
            if not args.model.startswith("file:"):
                raise ExportError("--make-reference-checkpoint requires a file: model id")
            make_reference_checkpoint(Path(args.model[len("file:"):]))
        manifest = export_encoder(args.model, args.out)
    except ExportError as exc:
        print(f"export failed: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(manifest.to_dict(), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
