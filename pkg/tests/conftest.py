import numpy as np
import pytest

from gnssrag import signalgen as sg
from gnssrag.embedder import embed_baseline
from gnssrag.vectorstore import Metric, VectorIndex

TYPES = ["None", "Chirp", "FreqHopper", "Modulated", "Multitone", "Pulsed", "Noise"]
JAMMERS = TYPES[1:]


def random_spec(rng: np.random.Generator, intf_type: str | None = None) -> sg.JammerSpec:
    label = intf_type or JAMMERS[int(rng.integers(0, len(JAMMERS)))]
    if label == "None":
        return sg.JammerSpec(
            intf_type="None", scenario=int(rng.integers(1, 9)), seed=int(rng.integers(0, 2**32))
        )
    return sg.JammerSpec(
        intf_type=label,
        bandwidth=float(rng.uniform(0.1, 60.0)),
        power=float(rng.uniform(-10.0, 10.0)),
        scenario=int(rng.integers(1, 9)),
        seed=int(rng.integers(0, 2**32)),
    )


def unit_vectors(rng: np.random.Generator, n: int, dim: int = 512) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v.astype(np.float32)


def small_labeled_index(n_per_class: int = 6, metric: Metric = Metric.COSINE) -> VectorIndex:
    """Index over a few generated snapshots of every class, ids 0..n-1."""
    index = VectorIndex(metric=metric)
    record_id = 0
    for label in TYPES:
        for i in range(n_per_class):
            seed = 1000 * TYPES.index(label) + i
            if label == "None":
                spec = sg.JammerSpec(intf_type="None", scenario=1 + i % 8, seed=seed)
            else:
                spec = sg.JammerSpec(
                    intf_type=label,
                    bandwidth=[0.5, 2.0, 10.0, 30.0, 60.0][i % 5],
                    power=[-10.0, -5.0, 0.0, 5.0, 10.0][i % 5],
                    scenario=1 + i % 8,
                    seed=seed,
                )
            emb = embed_baseline(sg.generate_snapshot(spec, snapshot_id=record_id))
            meta = spec.to_dict()
            meta["subjammer"] = sg.subjammer(spec)
            index.add(emb, metadata=meta, record_id=record_id)
            record_id += 1
    return index


@pytest.fixture(scope="session")
def labeled_index() -> VectorIndex:
    return small_labeled_index()
