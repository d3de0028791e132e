"""Deterministic synthesis of GNSS-like interference snapshots.

A snapshot is a 1024-channel x 34-time-bin magnitude map in dB. Six jammer
families plus a clean class are rendered directly in the time-frequency
plane: a noise floor layer plus an interference power layer, composed in
linear power and converted to dB. Everything is a pure function of the
JammerSpec, so regeneration is bit-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataIntegrityError, FormatError, ParameterError

N_CHANNELS = 1024
N_BINS = 34

# Display-relative floor: i.i.d. Gaussian in dB, deviations clipped so the
# clean class never breaches the +6 dB ceiling.
NOISE_FLOOR_DB = -100.0
NOISE_SIGMA_DB = 2.0
_NOISE_CLIP_SIGMA = 2.75

# Peak interference level is NOISE_FLOOR_DB + PEAK_MARGIN_DB + power, keeping
# power = -10 visible at +10 dB over the floor mean.
PEAK_MARGIN_DB = 20.0

# Bandwidth is read as MHz over the 100 MHz capture span.
SPAN_MHZ = 100.0

BANDWIDTH_RANGE = (0.1, 60.0)
POWER_RANGE = (-10.0, 10.0)
SCENARIO_RANGE = (1, 8)

# Multipath model: per-scenario amplitude attenuation plus one echo tap.
ALPHA_STEP = 0.08
ECHO_DELAY_BINS = 2
ECHO_GAIN = 0.3

SNAPSHOT_MAGIC = b"GSNP"
SNAPSHOT_VERSION = 1
MANIFEST_VERSION = 1


class InterferenceType(str, Enum):
    NONE = "None"
    CHIRP = "Chirp"
    FREQ_HOPPER = "FreqHopper"
    MODULATED = "Modulated"
    MULTITONE = "Multitone"
    PULSED = "Pulsed"
    NOISE = "Noise"


JAMMER_TYPES = [t for t in InterferenceType if t is not InterferenceType.NONE]
ALL_TYPES = list(InterferenceType)


def _round_half_away(x: float) -> int:
    """Round to nearest integer, ties away from zero."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def multipath_attenuation(scenario: int) -> float:
    """Amplitude attenuation alpha(s) = 1 - 0.08*(s-1), monotone in s."""
    return 1.0 - ALPHA_STEP * (scenario - 1)


@dataclass(frozen=True)
class JammerSpec:
    """Ground-truth record for one snapshot: family, bandwidth, power,
    multipath scenario and the seed that makes synthesis reproducible."""

    intf_type: InterferenceType
    bandwidth: float | None = None
    power: float | None = None
    scenario: int = 1
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.intf_type, InterferenceType):
            object.__setattr__(self, "intf_type", InterferenceType(self.intf_type))
        if not isinstance(self.scenario, (int, np.integer)):
            raise ParameterError(f"scenario must be an integer, got {self.scenario!r}")
        if not SCENARIO_RANGE[0] <= self.scenario <= SCENARIO_RANGE[1]:
            raise ParameterError(
                f"scenario {self.scenario} outside [{SCENARIO_RANGE[0]}, {SCENARIO_RANGE[1]}]"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError(f"seed {self.seed} is not a 64-bit unsigned integer")
        if self.intf_type is InterferenceType.NONE:
            return
        if self.bandwidth is None:
            raise ParameterError(f"bandwidth is required for type {self.intf_type.value}")
        if self.power is None:
            raise ParameterError(f"power is required for type {self.intf_type.value}")
        if not BANDWIDTH_RANGE[0] <= self.bandwidth <= BANDWIDTH_RANGE[1]:
            raise ParameterError(
                f"bandwidth {self.bandwidth} outside [{BANDWIDTH_RANGE[0]}, {BANDWIDTH_RANGE[1]}]"
            )
        if not POWER_RANGE[0] <= self.power <= POWER_RANGE[1]:
            raise ParameterError(
                f"power {self.power} outside [{POWER_RANGE[0]}, {POWER_RANGE[1]}]"
            )

    def to_dict(self) -> dict:
        return {
            "intf_type": self.intf_type.value,
            "bandwidth": self.bandwidth,
            "power": self.power,
            "scenario": int(self.scenario),
            "seed": int(self.seed),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "JammerSpec":
        return cls(
            intf_type=InterferenceType(d["intf_type"]),
            bandwidth=d.get("bandwidth"),
            power=d.get("power"),
            scenario=int(d.get("scenario", 1)),
            seed=int(d.get("seed", 0)),
        )


_SUBJAMMER_BUCKETS = [(2.0, "narrow"), (20.0, "mid"), (60.0, "wide")]


def subjammer(spec: JammerSpec) -> str:
    """Finer label: interference family x bandwidth bucket (18 classes + clean)."""
    if spec.intf_type is InterferenceType.NONE:
        return "None"
    for upper, name in _SUBJAMMER_BUCKETS:
        if spec.bandwidth <= upper:
            return f"{spec.intf_type.value}:{name}"
    return f"{spec.intf_type.value}:{_SUBJAMMER_BUCKETS[-1][1]}"


@dataclass
class Snapshot:
    """One rendered magnitude map plus its ground-truth metadata.

    ``meta`` may be None for unlabeled query snapshots received over the
    wire; generator and dataset snapshots always carry a JammerSpec.
    """

    id: int
    data: np.ndarray
    meta: JammerSpec | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (N_CHANNELS, N_BINS):
            raise DataIntegrityError(
                f"snapshot data must be {N_CHANNELS}x{N_BINS}, got {self.data.shape}"
            )
        if not np.isfinite(self.data).all():
            raise DataIntegrityError("snapshot data contains non-finite values")


def band_channels(bandwidth: float) -> tuple[int, int]:
    """Inclusive channel range occupied by a jammer of the given bandwidth.

    Occupied channel count is max(1, round(bandwidth / 100 MHz * 1024)),
    centered on the spectrum; rounding is half-away-from-zero.
    """
    n_ch = max(1, _round_half_away(bandwidth / SPAN_MHZ * N_CHANNELS))
    n_ch = min(n_ch, N_CHANNELS)
    lo = (N_CHANNELS - n_ch) // 2
    return lo, lo + n_ch - 1


def _peak_linear(power: float) -> float:
    return 10.0 ** ((NOISE_FLOOR_DB + PEAK_MARGIN_DB + power) / 10.0)


def _chirp_layer(lo: int, n_ch: int, peak: float) -> np.ndarray:
    # Integer-width power box sweeping the band; fractional edge cells keep
    # the per-bin center of mass exactly linear in time.
    layer = np.zeros((N_CHANNELS, N_BINS))
    width = max(1, _round_half_away(n_ch / 8))
    width = min(width, n_ch)
    for t in range(N_BINS):
        start = (lo - 0.5) + (n_ch - width) * t / (N_BINS - 1)
        k_first = int(math.floor(start + 0.5))
        k_last = int(math.ceil(start + width - 0.5))
        for k in range(k_first, k_last + 1):
            overlap = min(k + 0.5, start + width) - max(k - 0.5, start)
            if overlap > 0:
                layer[k, t] = overlap * peak
    return layer


def _hopper_layer(lo: int, n_ch: int, peak: float, rng: np.random.Generator) -> np.ndarray:
    # FHSS-style: hop targets sit on a fixed lattice spanning the band and
    # are visited in a seed-shuffled order, one hop every 4 bins.
    layer = np.zeros((N_CHANNELS, N_BINS))
    width = max(1, _round_half_away(n_ch / 16))
    width = min(width, n_ch)
    n_hops = (N_BINS + 3) // 4
    targets = [
        lo + _round_half_away(i * (n_ch - width) / (n_hops - 1)) for i in range(n_hops)
    ]
    order = rng.permutation(n_hops)
    for i, t0 in enumerate(range(0, N_BINS, 4)):
        start = targets[order[i]]
        layer[start : start + width, t0 : min(t0 + 4, N_BINS)] = peak
    return layer


def _block(layer: np.ndarray, center: int, width: int, lo: int, hi: int, level: float):
    a = max(lo, center - (width - 1) // 2)
    b = min(hi, center + width // 2)
    if b >= a:
        layer[a : b + 1, :] = np.maximum(layer[a : b + 1, :], level)


def _modulated_layer(lo: int, n_ch: int, peak: float) -> np.ndarray:
    layer = np.zeros((N_CHANNELS, N_BINS))
    hi = lo + n_ch - 1
    width = max(1, _round_half_away(n_ch / 16))
    center = lo + (n_ch - 1) // 2
    offset = _round_half_away(n_ch / 4)
    _block(layer, center, width, lo, hi, peak)
    # Symmetric sidebands 6 dB below the carrier.
    _block(layer, center - offset, width, lo, hi, peak / 4.0)
    _block(layer, center + offset, width, lo, hi, peak / 4.0)
    return layer


def _multitone_layer(lo: int, n_ch: int, peak: float) -> np.ndarray:
    # Alternating tone levels (0 / -4 dB): the level contrast relative to
    # the floor couples the spectral shape to the jammer's power.
    layer = np.zeros((N_CHANNELS, N_BINS))
    hi = lo + n_ch - 1
    width = max(1, _round_half_away(n_ch / 32))
    for i in range(4):
        center = lo + _round_half_away((i + 0.5) * n_ch / 4 - 0.5)
        level = peak if i % 2 == 0 else peak * 10.0 ** (-0.4)
        _block(layer, min(max(center, lo), hi), width, lo, hi, level)
    return layer


def _pulsed_layer(peak: float) -> np.ndarray:
    # Broadband pulses over the full 1024 channels, 3-bin on/off duty cycle;
    # the bandwidth label has no spatial correlate for this family. A fixed
    # +-2 dB spectral ripple stands in for front-end shaping.
    layer = np.zeros((N_CHANNELS, N_BINS))
    ripple_db = 2.0 * (np.sin(2.0 * np.pi * np.arange(N_CHANNELS) / 64.0) - 1.0)
    profile = peak * 10.0 ** (ripple_db / 10.0)
    for t in range(N_BINS):
        if (t // 3) % 2 == 0:
            layer[:, t] = profile
    return layer


_NOISE_JAMMER_TEXTURE_DB = 0.5
_NOISE_JAMMER_EDGE_DROP_DB = 6.0


def _noisejam_layer(lo: int, n_ch: int, peak_db: float, rng: np.random.Generator) -> np.ndarray:
    # Gaussian-shaped PSD: a parabola in dB, strongest at band center,
    # dropping 6 dB at the edges, plus a small random texture.
    layer = np.zeros((N_CHANNELS, N_BINS))
    channel = np.arange(n_ch)
    centered = (channel - (n_ch - 1) / 2.0) / max(n_ch / 2.0, 0.5)
    shape = -_NOISE_JAMMER_EDGE_DROP_DB * centered**2
    texture = _NOISE_JAMMER_TEXTURE_DB * np.clip(rng.standard_normal((n_ch, N_BINS)), -3.0, 3.0)
    cells = shape[:, None] + texture
    cells -= cells.max()  # exact peak at peak_db
    layer[lo : lo + n_ch, :] = 10.0 ** ((peak_db + cells) / 10.0)
    return layer


def direct_interference_layer(spec: JammerSpec) -> np.ndarray:
    """Linear-power interference layer before any multipath, 1024 x 34.

    Pure function of the spec; the clean class returns all zeros.
    """
    if spec.intf_type is InterferenceType.NONE:
        return np.zeros((N_CHANNELS, N_BINS))
    lo, hi = band_channels(spec.bandwidth)
    n_ch = hi - lo + 1
    peak = _peak_linear(spec.power)
    rng = np.random.default_rng([int(spec.seed), 0x5A])
    if spec.intf_type is InterferenceType.CHIRP:
        return _chirp_layer(lo, n_ch, peak)
    if spec.intf_type is InterferenceType.FREQ_HOPPER:
        return _hopper_layer(lo, n_ch, peak, rng)
    if spec.intf_type is InterferenceType.MODULATED:
        return _modulated_layer(lo, n_ch, peak)
    if spec.intf_type is InterferenceType.MULTITONE:
        return _multitone_layer(lo, n_ch, peak)
    if spec.intf_type is InterferenceType.PULSED:
        return _pulsed_layer(peak)
    if spec.intf_type is InterferenceType.NOISE:
        return _noisejam_layer(lo, n_ch, NOISE_FLOOR_DB + PEAK_MARGIN_DB + spec.power, rng)
    raise ParameterError(f"unknown interference type {spec.intf_type!r}")


def _apply_multipath_to_layer(layer: np.ndarray, scenario: int) -> np.ndarray:
    if scenario == 1:
        return layer
    alpha = multipath_attenuation(scenario)
    out = alpha**2 * layer
    out[:, ECHO_DELAY_BINS:] += (ECHO_GAIN * alpha) ** 2 * layer[:, :-ECHO_DELAY_BINS]
    return out


def interference_layer(spec: JammerSpec) -> np.ndarray:
    """Interference layer as rendered: direct path plus the spec's multipath."""
    return _apply_multipath_to_layer(direct_interference_layer(spec), spec.scenario)


def noise_floor(seed: int) -> np.ndarray:
    """Clipped-Gaussian floor in dB; independent of jammer parameters."""
    rng = np.random.default_rng([int(seed), 0xA5])
    dev = np.clip(rng.standard_normal((N_CHANNELS, N_BINS)), -_NOISE_CLIP_SIGMA, _NOISE_CLIP_SIGMA)
    return NOISE_FLOOR_DB + NOISE_SIGMA_DB * dev


def peak_interference_db(spec: JammerSpec) -> float | None:
    """Peak of the rendered interference layer in dB; None for the clean class."""
    if spec.intf_type is InterferenceType.NONE:
        return None
    return float(NOISE_FLOOR_DB + PEAK_MARGIN_DB + spec.power
                 + 20.0 * math.log10(multipath_attenuation(spec.scenario)))


def interference_energy(spec: JammerSpec) -> float:
    """Total linear interference energy of the rendered layer."""
    return float(interference_layer(spec).sum())


def generate_snapshot(spec: JammerSpec, snapshot_id: int = 0) -> Snapshot:
    """Render one snapshot: floor plus interference, composed in linear power.

    Deterministic: the same spec yields a bit-identical matrix.
    """
    noise_lin = 10.0 ** (noise_floor(spec.seed) / 10.0)
    data = 10.0 * np.log10(noise_lin + interference_layer(spec))
    return Snapshot(id=snapshot_id, data=data, meta=spec)


def apply_multipath(snap: Snapshot, scenario: int) -> Snapshot:
    """Re-render the snapshot under the given multipath scenario.

    The snapshot's own scenario returns the input unchanged (scenario 1 on a
    pristine snapshot is the open-environment identity). Otherwise the floor
    is recovered by subtracting the current interference layer and the direct
    path is re-composed under the new scenario.
    """
    if not isinstance(scenario, (int, np.integer)):
        raise ParameterError(f"scenario must be an integer, got {scenario!r}")
    if not SCENARIO_RANGE[0] <= scenario <= SCENARIO_RANGE[1]:
        raise ParameterError(
            f"scenario {scenario} outside [{SCENARIO_RANGE[0]}, {SCENARIO_RANGE[1]}]"
        )
    if snap.meta is None:
        raise DataIntegrityError("apply_multipath requires snapshot metadata")
    if scenario == snap.meta.scenario:
        return snap
    noise_lin = 10.0 ** (snap.data / 10.0) - interference_layer(snap.meta)
    np.maximum(noise_lin, 1e-13, out=noise_lin)
    new_meta = replace(snap.meta, scenario=int(scenario))
    layer = _apply_multipath_to_layer(direct_interference_layer(new_meta), int(scenario))
    data = 10.0 * np.log10(noise_lin + layer)
    return Snapshot(id=snap.id, data=data, meta=new_meta)


# --- persistence ---------------------------------------------------------


def snapshot_path(out_dir: Path | str, snapshot_id: int) -> Path:
    return Path(out_dir) / f"snapshot_{snapshot_id:08d}.gsnp"


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_snapshot(snap: Snapshot, path: Path | str) -> None:
    """Write the binary matrix file plus a JSON sidecar with the spec."""
    path = Path(path)
    payload = snap.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(SNAPSHOT_VERSION.to_bytes(2, "little"))
        f.write(payload)
    sidecar = {"id": int(snap.id)}
    if snap.meta is not None:
        sidecar["spec"] = snap.meta.to_dict()
    with open(_sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True, indent=2)
        f.write("\n")


def load_snapshot(path: Path | str) -> Snapshot:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 6:
        raise FormatError(f"{path}: truncated snapshot header", offset=len(raw))
    if raw[:4] != SNAPSHOT_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}", offset=0)
    version = int.from_bytes(raw[4:6], "little")
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    expected = 6 + N_CHANNELS * N_BINS * 4
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload is {len(raw) - 6} bytes, expected {expected - 6}",
            offset=min(len(raw), expected),
        )
    data = np.frombuffer(raw[6:], dtype="<f4").reshape(N_CHANNELS, N_BINS).astype(np.float64)
    sidecar_file = _sidecar_path(path)
    meta = None
    snap_id = 0
    if sidecar_file.exists():
        sidecar = json.loads(sidecar_file.read_text(encoding="utf-8"))
        snap_id = int(sidecar.get("id", 0))
        if "spec" in sidecar:
            meta = JammerSpec.from_dict(sidecar["spec"])
    return Snapshot(id=snap_id, data=data, meta=meta)


# --- dataset generation --------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    """Per-class counts plus the parameter grids entries are drawn from."""

    counts: Mapping[str, int]
    bandwidths: Sequence[float] = (0.5, 2.0, 10.0, 30.0, 60.0)
    powers: Sequence[float] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    scenarios: Sequence[int] = (1, 2, 3, 4, 5, 6, 7, 8)
    base_seed: int = 0
    id_start: int = 0

    def __post_init__(self):
        for label, count in self.counts.items():
            InterferenceType(label)  # raises ValueError on unknown labels
            if count < 0:
                raise ParameterError(f"count for class {label} is negative")
        if not self.bandwidths:
            raise ParameterError("bandwidths grid is empty")
        if not self.powers:
            raise ParameterError("powers grid is empty")
        if not self.scenarios:
            raise ParameterError("scenarios grid is empty")
        for bw in self.bandwidths:
            if not BANDWIDTH_RANGE[0] <= bw <= BANDWIDTH_RANGE[1]:
                raise ParameterError(f"bandwidth grid value {bw} outside {BANDWIDTH_RANGE}")
        for p in self.powers:
            if not POWER_RANGE[0] <= p <= POWER_RANGE[1]:
                raise ParameterError(f"power grid value {p} outside {POWER_RANGE}")
        for s in self.scenarios:
            if not SCENARIO_RANGE[0] <= s <= SCENARIO_RANGE[1]:
                raise ParameterError(f"scenario grid value {s} outside {SCENARIO_RANGE}")


@dataclass(frozen=True)
class ManifestEntry:
    id: int
    file: str
    spec: JammerSpec


@dataclass
class DatasetManifest:
    format_version: int
    counts: dict[str, int]
    entries: list[ManifestEntry]

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataIntegrityError("manifest ids are not unique")
        if sum(self.counts.values()) != len(self.entries):
            raise DataIntegrityError("manifest entry count does not match per-class counts")

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "counts": dict(self.counts),
            "entries": [
                {"id": e.id, "file": e.file, "spec": e.spec.to_dict()} for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "DatasetManifest":
        return cls(
            format_version=int(d["format_version"]),
            counts={k: int(v) for k, v in d["counts"].items()},
            entries=[
                ManifestEntry(id=int(e["id"]), file=e["file"], spec=JammerSpec.from_dict(e["spec"]))
                for e in d["entries"]
            ],
        )


def iter_dataset_specs(config: DatasetConfig) -> Iterable[tuple[int, JammerSpec]]:
    """Yield (snapshot id, spec). Entry i's seed is base_seed + i, so entries
    can be generated independently and in parallel."""
    index = 0
    for intf_type in ALL_TYPES:
        count = int(config.counts.get(intf_type.value, 0))
        for _ in range(count):
            entry_seed = (int(config.base_seed) + index) % 2**64
            rng = np.random.default_rng([entry_seed, 0x0D])
            if intf_type is InterferenceType.NONE:
                spec = JammerSpec(
                    intf_type=intf_type,
                    scenario=int(rng.choice(np.asarray(config.scenarios))),
                    seed=entry_seed,
                )
            else:
                spec = JammerSpec(
                    intf_type=intf_type,
                    bandwidth=float(rng.choice(np.asarray(config.bandwidths, dtype=float))),
                    power=float(rng.choice(np.asarray(config.powers, dtype=float))),
                    scenario=int(rng.choice(np.asarray(config.scenarios))),
                    seed=entry_seed,
                )
            yield config.id_start + index, spec
            index += 1


def generate_dataset(config: DatasetConfig, out_dir: Path | str) -> DatasetManifest:
    """Write snapshot files, sidecars and the manifest; returns the manifest.

    Same config -> identical manifest and identical file bytes.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    counts: dict[str, int] = {}
    for snap_id, spec in iter_dataset_specs(config):
        snap = generate_snapshot(spec, snapshot_id=snap_id)
        path = snapshot_path(out_dir, snap_id)
        save_snapshot(snap, path)
        entries.append(ManifestEntry(id=snap_id, file=path.name, spec=spec))
        counts[spec.intf_type.value] = counts.get(spec.intf_type.value, 0) + 1
    manifest = DatasetManifest(format_version=MANIFEST_VERSION, counts=counts, entries=entries)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")


def load_manifest(path: Path | str) -> DatasetManifest:
    with open(path, encoding="utf-8") as f:
        return DatasetManifest.from_dict(json.load(f))
