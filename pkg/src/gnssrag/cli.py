"""Command-line entry point.

Subcommands: generate, embed, index, query, classify, bench, tsne, serve.
Exit codes: 0 success, 1 usage, 2 IO/load, 3 backend.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import projection, signalgen
from .config import build_runtime, load_config
from .embedder import embed_baseline
from .errors import (
    ConfigError,
    FormatError,
    GnssRagError,
    MalformedResponseError,
    ParameterError,
    TransportError,
)
from .pipeline import StageError, run_classify, run_query
from .promptkit import DetailLevel
from .signalgen import DatasetConfig, InterferenceType, load_snapshot
from .vectorstore import Metric, VectorIndex, load_index

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; this toolkit reserves 2
    # for IO failures, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _print_latencies(latencies: dict):
    parts = ", ".join(f"{name}={ms:.2f}ms" for name, ms in latencies.items())
    print(f"latency: {parts}", file=sys.stderr)


def _load_runtime(args):
    return build_runtime(load_config(args.config))


def cmd_generate(args) -> int:
    counts = {t.value: args.per_class for t in InterferenceType if t is not InterferenceType.NONE}
    counts["None"] = args.clean if args.clean is not None else args.per_class
    config = DatasetConfig(
        counts=counts,
        bandwidths=tuple(args.bandwidths),
        powers=tuple(args.powers),
        scenarios=tuple(args.scenarios),
        base_seed=args.seed,
        id_start=args.id_start,
    )
    manifest = signalgen.generate_dataset(config, args.out)
    summary = {"entries": len(manifest.entries), "counts": manifest.counts, "out": str(args.out)}
    print(_dump_json(summary) if args.json else
          f"wrote {len(manifest.entries)} snapshots to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    snap = load_snapshot(args.snapshot)
    embedding = embed_baseline(snap)
    if args.json:
        print(_dump_json({
            "snapshot_id": embedding.snapshot_id,
            "source": embedding.source.value,
            "vector": [float(x) for x in embedding.vector],
        }))
    else:
        head = ", ".join(f"{x:.5f}" for x in embedding.vector[:6])
        print(f"snapshot {embedding.snapshot_id}: 512-d unit vector [{head}, ...]")
    return EXIT_OK


def cmd_index(args) -> int:
    manifest = signalgen.load_manifest(Path(args.dataset) / "manifest.json")
    index = VectorIndex(metric=Metric.from_label(args.metric))
    for entry in manifest.entries:
        snap = load_snapshot(Path(args.dataset) / entry.file)
        embedding = embed_baseline(snap)
        meta = entry.spec.to_dict()
        meta["subjammer"] = signalgen.subjammer(entry.spec)
        index.add(embedding, metadata=meta, record_id=entry.id)
    index.save(args.out)
    print(_dump_json({"records": len(index), "out": str(args.out)}) if args.json
          else f"indexed {len(index)} snapshots -> {args.out}")
    return EXIT_OK


def cmd_query(args) -> int:
    runtime = _load_runtime(args)
    snap = load_snapshot(args.snapshot)
    result = run_query(
        runtime,
        question=args.question,
        detail_level=DetailLevel(args.detail_level),
        snapshot=snap,
        k=args.k,
    )
    _print_latencies(result.latencies_ms)
    if args.json:
        print(_dump_json(result.payload))
    else:
        print(result.payload["description"])
    return EXIT_OK


def cmd_classify(args) -> int:
    runtime = _load_runtime(args)
    snap = load_snapshot(args.snapshot)
    result = run_classify(runtime, snapshot=snap, k=args.k)
    _print_latencies(result.latencies_ms)
    if args.json:
        print(_dump_json(result.payload))
    else:
        p = result.payload
        print(f"type={p['intf_type']} subjammer={p['subjammer']} "
              f"power={p['power']} bandwidth={p['bandwidth']}")
    return EXIT_OK


def cmd_bench(args) -> int:
    runtime = _load_runtime(args)
    rng = np.random.default_rng(args.seed)
    latencies = []
    for i in range(args.queries):
        snap = signalgen.generate_snapshot(
            signalgen.JammerSpec(
                intf_type=InterferenceType.CHIRP,
                bandwidth=10.0,
                power=0.0,
                scenario=1,
                seed=int(rng.integers(0, 2**32)),
            ),
            snapshot_id=i,
        )
        start = time.perf_counter()
        embedding = runtime.embed_fn(snap)
        runtime.index.search(embedding, args.k)
        latencies.append((time.perf_counter() - start) * 1000.0)
    report = {
        "queries": args.queries,
        "k": args.k,
        "index_size": len(runtime.index),
        "median_ms": statistics.median(latencies),
        "p90_ms": sorted(latencies)[int(0.9 * (len(latencies) - 1))],
        "max_ms": max(latencies),
    }
    print(_dump_json(report) if args.json else
          f"median {report['median_ms']:.2f} ms over {args.queries} queries "
          f"(index size {report['index_size']}, k={args.k})")
    return EXIT_OK


def cmd_tsne(args) -> int:
    index = load_index(args.index)
    ids = index.ids()
    if args.max_points and len(ids) > args.max_points:
        ids = ids[: args.max_points]
    vectors, labels = [], []
    for rid in ids:
        vec, meta = index.get(rid)
        vectors.append(vec)
        labels.append(meta.get("intf_type", ""))
    learning_rate = args.learning_rate
    if learning_rate is None:
        # Small runs oscillate at the corpus-scale default of 200.
        learning_rate = max(len(ids) / (4.0 * 12.0), 50.0)
    params = projection.TsneParams(
        perplexity=args.perplexity,
        iterations=args.iterations,
        seed=args.seed,
        learning_rate=learning_rate,
    )
    pp = projection.tsne(np.stack(vectors), params, labels=labels)
    projection.write_projection_csv(pp, ids, args.out_csv)
    note = "classes are synthetic interference types standing in for the recorded corpus"
    projection.write_run_report(pp, params, args.out_report, note=note)
    if args.out_svg:
        projection.write_scatter_svg(pp, args.out_svg)
    print(_dump_json({"n": len(ids), "final_kl": pp.final_kl, "csv": str(args.out_csv)})
          if args.json else
          f"projected {len(ids)} points, final KL {pp.final_kl:.4f} -> {args.out_csv}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    runtime = _load_runtime(args)
    serve(runtime, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gnssrag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a snapshot dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--clean", type=int, default=None,
                   help="clean-class count (defaults to --per-class)")
    p.add_argument("--bandwidths", type=float, nargs="+",
                   default=list(DatasetConfig.bandwidths))
    p.add_argument("--powers", type=float, nargs="+", default=list(DatasetConfig.powers))
    p.add_argument("--scenarios", type=int, nargs="+", default=list(DatasetConfig.scenarios))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--id-start", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("embed", help="embed one snapshot file")
    p.add_argument("--snapshot", required=True, type=Path)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("index", help="build a vector index from a dataset")
    p.add_argument("--dataset", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("query", help="end-to-end snapshot characterization")
    p.add_argument("--snapshot", required=True, type=Path)
    p.add_argument("--question", required=True)
    p.add_argument("--detail-level", default="SignalInfoGeneral",
                   choices=[l.value for l in DetailLevel])
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("classify", help="kNN prediction for one snapshot")
    p.add_argument("--snapshot", required=True, type=Path)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_classify)

    p = sub.add_parser("bench", help="embed+search latency benchmark")
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("tsne", help="2-D projection of indexed embeddings")
    p.add_argument("--index", required=True, type=Path)
    p.add_argument("--out-csv", required=True, type=Path)
    p.add_argument("--out-report", required=True, type=Path)
    p.add_argument("--out-svg", type=Path, default=None)
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--learning-rate", type=float, default=None,
                   help="default scales with point count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-points", type=int, default=2000)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_tsne)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8841)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        cause = exc.cause
        if isinstance(cause, (TransportError, MalformedResponseError)):
            return EXIT_BACKEND
        if isinstance(cause, (OSError, FormatError)):
            return EXIT_IO
        if isinstance(cause, ParameterError):
            return EXIT_USAGE
        return EXIT_BACKEND
    except (TransportError, MalformedResponseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParameterError, GnssRagError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
