"""Retrieval-based multi-task prediction and the benchmark harness.

Interference type and subjammer class come from a majority vote over the
top-k neighbors; power and bandwidth are similarity-weighted means over the
non-clean neighbors. The metric code also scores externally produced
prediction CSVs, so other predictors can be benchmarked identically.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedder import Embedding, embed_baseline
from .errors import LeakageError, NotEstimableError, ParameterError
from .signalgen import (
    BANDWIDTH_RANGE,
    POWER_RANGE,
    DatasetManifest,
    InterferenceType,
    JammerSpec,
    load_snapshot,
    subjammer,
)
from .vectorstore import Metric, SearchHit, VectorIndex

WEIGHT_EPSILON = 1e-6

DEFAULT_K = 5


@dataclass
class Prediction:
    intf_type: str
    subjammer: str
    power: float | None
    bandwidth: float | None
    votes: dict[str, int]
    neighbor_ids: list[int]

    def to_dict(self) -> dict:
        return {
            "intf_type": self.intf_type,
            "subjammer": self.subjammer,
            "power": self.power,
            "bandwidth": self.bandwidth,
            "votes": dict(self.votes),
            "neighbor_ids": list(self.neighbor_ids),
        }


@dataclass
class Metrics:
    type_accuracy: float
    subjammer_accuracy: float
    power_mse: float | None
    bandwidth_mse: float | None
    n: int
    k: int
    metric: str

    def to_dict(self) -> dict:
        return {
            "type_accuracy": self.type_accuracy,
            "subjammer_accuracy": self.subjammer_accuracy,
            "power_mse": self.power_mse,
            "bandwidth_mse": self.bandwidth_mse,
            "n": self.n,
            "k": self.k,
            "metric": self.metric,
        }


def hit_similarity(hit: SearchHit, metric: Metric) -> float:
    """Similarity in [0, 1]-ish space; L2 distances map through 1/(1+d)."""
    if metric is Metric.COSINE:
        return float(hit.score)
    return 1.0 / (1.0 + float(hit.score))


def _majority(hits: Sequence[SearchHit], label_of: Callable[[SearchHit], str]) -> tuple[str, dict]:
    votes: dict[str, int] = {}
    for hit in hits:
        label = label_of(hit)
        votes[label] = votes.get(label, 0) + 1
    best = max(votes.values())
    tied = {label for label, count in votes.items() if count == best}
    if len(tied) == 1:
        return tied.pop(), votes
    # Tie: the nearest neighbor among the tied classes decides.
    for hit in hits:
        label = label_of(hit)
        if label in tied:
            return label, votes
    raise AssertionError("unreachable: hits are non-empty")


def _hit_subjammer(hit: SearchHit) -> str:
    meta = hit.metadata
    if "subjammer" in meta:
        return meta["subjammer"]
    spec = JammerSpec(
        intf_type=InterferenceType(meta["intf_type"]),
        bandwidth=meta.get("bandwidth"),
        power=meta.get("power"),
        scenario=int(meta.get("scenario", 1)),
        seed=int(meta.get("seed", 0)),
    )
    return subjammer(spec)


def knn_classify(index: VectorIndex, query, k: int = DEFAULT_K) -> tuple[str, str, dict]:
    """Majority vote over the top-k neighbor labels.

    Returns (interference type, subjammer class, per-type vote counts).
    """
    hits = index.search(query, k)
    intf_type, votes = _majority(hits, lambda h: h.metadata.get("intf_type", "None"))
    sub, _ = _majority(hits, _hit_subjammer)
    return intf_type, sub, votes


def weighted_param_estimate(
    hits: Sequence[SearchHit], metric: Metric
) -> tuple[float, float]:
    """Similarity-weighted mean power and bandwidth over non-clean hits.

    Weights are max(similarity, 0) + epsilon; estimates clamp to the label
    ranges. Raises NotEstimableError when every hit is the clean class.
    """
    usable = [h for h in hits if h.metadata.get("intf_type", "None") != "None"]
    if not usable:
        raise NotEstimableError("all neighbors are interference-free; no numeric labels")
    weights = np.array([max(hit_similarity(h, metric), 0.0) + WEIGHT_EPSILON for h in usable])
    powers = np.array([float(h.metadata["power"]) for h in usable])
    bandwidths = np.array([float(h.metadata["bandwidth"]) for h in usable])
    power = float(np.clip((weights * powers).sum() / weights.sum(), *POWER_RANGE))
    bandwidth = float(np.clip((weights * bandwidths).sum() / weights.sum(), *BANDWIDTH_RANGE))
    return power, bandwidth


def knn_regress(index: VectorIndex, query, k: int = DEFAULT_K) -> tuple[float, float]:
    """Similarity-weighted (power, bandwidth) estimate from the top-k hits."""
    hits = index.search(query, k)
    return weighted_param_estimate(hits, index.metric)


def predict(index: VectorIndex, query, k: int = DEFAULT_K) -> Prediction:
    hits = index.search(query, k)
    intf_type, votes = _majority(hits, lambda h: h.metadata.get("intf_type", "None"))
    sub, _ = _majority(hits, _hit_subjammer)
    try:
        power, bandwidth = weighted_param_estimate(hits, index.metric)
    except NotEstimableError:
        power, bandwidth = None, None
    return Prediction(
        intf_type=intf_type,
        subjammer=sub,
        power=power,
        bandwidth=bandwidth,
        votes=votes,
        neighbor_ids=[h.id for h in hits],
    )


# --- evaluation harness ----------------------------------------------------


@dataclass(frozen=True)
class EvalItem:
    id: int
    vector: np.ndarray
    spec: JammerSpec


def eval_items_from_manifest(
    manifest: DatasetManifest,
    dataset_dir: Path | str,
    embed_fn: Callable = embed_baseline,
) -> list[EvalItem]:
    items = []
    for entry in manifest.entries:
        snap = load_snapshot(Path(dataset_dir) / entry.file)
        emb: Embedding = embed_fn(snap)
        items.append(EvalItem(id=entry.id, vector=emb.vector, spec=entry.spec))
    return items


def normalize_power(p: float) -> float:
    return (p - POWER_RANGE[0]) / (POWER_RANGE[1] - POWER_RANGE[0])


def normalize_bandwidth(b: float) -> float:
    return (b - BANDWIDTH_RANGE[0]) / (BANDWIDTH_RANGE[1] - BANDWIDTH_RANGE[0])


CSV_HEADER = [
    "id",
    "true_type",
    "pred_type",
    "true_sub",
    "pred_sub",
    "true_power",
    "pred_power",
    "true_bw",
    "pred_bw",
]


def _metrics_from_rows(rows: list[dict], k: int, metric: str) -> Metrics:
    n = len(rows)
    if n == 0:
        raise ParameterError("no rows to score")
    type_ok = sum(1 for r in rows if r["true_type"] == r["pred_type"])
    sub_ok = sum(1 for r in rows if r["true_sub"] == r["pred_sub"])
    power_sq, bw_sq = [], []
    for r in rows:
        if r["true_power"] != "" and r["pred_power"] != "":
            err = normalize_power(float(r["pred_power"])) - normalize_power(float(r["true_power"]))
            power_sq.append(err * err)
        if r["true_bw"] != "" and r["pred_bw"] != "":
            err = normalize_bandwidth(float(r["pred_bw"])) - normalize_bandwidth(
                float(r["true_bw"])
            )
            bw_sq.append(err * err)
    return Metrics(
        type_accuracy=type_ok / n * 100.0,
        subjammer_accuracy=sub_ok / n * 100.0,
        power_mse=float(np.mean(power_sq)) if power_sq else None,
        bandwidth_mse=float(np.mean(bw_sq)) if bw_sq else None,
        n=n,
        k=k,
        metric=metric,
    )


def evaluate(
    index: VectorIndex,
    test_items: Iterable[EvalItem],
    k: int = DEFAULT_K,
    dump_csv: Path | str | None = None,
) -> Metrics:
    """Score retrieval-based predictions against the test items' labels.

    Test ids must be disjoint from the index (checked; overlaps raise
    LeakageError). MSEs are computed on min-max normalized targets over the
    items where both a true and a predicted value exist.
    """
    test_items = list(test_items)
    index_ids = set(index.ids())
    overlap = sorted(i.id for i in test_items if i.id in index_ids)
    if overlap:
        shown = ", ".join(str(i) for i in overlap[:5])
        raise LeakageError(
            f"{len(overlap)} test ids are present in the index (e.g. {shown})"
        )
    rows = []
    for item in test_items:
        pred = predict(index, item.vector, k)
        spec = item.spec
        is_clean = spec.intf_type is InterferenceType.NONE
        rows.append(
            {
                "id": str(item.id),
                "true_type": spec.intf_type.value,
                "pred_type": pred.intf_type,
                "true_sub": subjammer(spec),
                "pred_sub": pred.subjammer,
                "true_power": "" if is_clean else repr(float(spec.power)),
                "pred_power": "" if pred.power is None else repr(pred.power),
                "true_bw": "" if is_clean else repr(float(spec.bandwidth)),
                "pred_bw": "" if pred.bandwidth is None else repr(pred.bandwidth),
            }
        )
    if dump_csv is not None:
        with open(dump_csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_HEADER)
            writer.writeheader()
            writer.writerows(rows)
    return _metrics_from_rows(rows, k=k, metric=index.metric.label)


def score_prediction_csv(path: Path | str, k: int = 0, metric: str = "external") -> Metrics:
    """Score an externally produced prediction dump with the same metric code."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_HEADER:
            raise ParameterError(
                f"prediction CSV header must be {','.join(CSV_HEADER)}"
            )
        rows = list(reader)
    return _metrics_from_rows(rows, k=k, metric=metric)


def save_metrics(metrics: Metrics, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(metrics.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
