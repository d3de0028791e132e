import hashlib
import json

import numpy as np
import pytest

from gnssrag import signalgen as sg
from gnssrag.errors import DataIntegrityError, FormatError, ParameterError

from conftest import JAMMERS, random_spec


def chirp_spec(bw=2.0, power=4.0, scenario=1, seed=7):
    return sg.JammerSpec(
        intf_type="Chirp", bandwidth=bw, power=power, scenario=scenario, seed=seed
    )


class TestJammerSpec:
    def test_bandwidth_out_of_range_names_field(self):
        with pytest.raises(ParameterError, match="bandwidth"):
            chirp_spec(bw=61.0)
        with pytest.raises(ParameterError, match="bandwidth"):
            chirp_spec(bw=0.05)

    def test_power_out_of_range_names_field(self):
        with pytest.raises(ParameterError, match="power"):
            chirp_spec(power=10.5)

    def test_scenario_out_of_range_names_field(self):
        with pytest.raises(ParameterError, match="scenario"):
            chirp_spec(scenario=9)
        with pytest.raises(ParameterError, match="scenario"):
            chirp_spec(scenario=0)

    def test_clean_ignores_bandwidth_and_power(self):
        spec = sg.JammerSpec(intf_type="None", scenario=3, seed=1)
        assert spec.bandwidth is None and spec.power is None

    def test_jammer_requires_bandwidth(self):
        with pytest.raises(ParameterError, match="bandwidth"):
            sg.JammerSpec(intf_type="Chirp", power=0.0, scenario=1, seed=1)

    def test_roundtrip_dict(self):
        spec = chirp_spec()
        assert sg.JammerSpec.from_dict(spec.to_dict()) == spec


class TestSubjammer:
    def test_clean_label(self):
        assert sg.subjammer(sg.JammerSpec(intf_type="None", scenario=1, seed=0)) == "None"

    def test_bucket_boundaries(self):
        assert sg.subjammer(chirp_spec(bw=2.0)) == "Chirp:narrow"
        assert sg.subjammer(chirp_spec(bw=2.1)) == "Chirp:mid"
        assert sg.subjammer(chirp_spec(bw=20.0)) == "Chirp:mid"
        assert sg.subjammer(chirp_spec(bw=20.5)) == "Chirp:wide"

    def test_eighteen_jammer_classes(self):
        labels = {
            sg.subjammer(
                sg.JammerSpec(intf_type=t, bandwidth=bw, power=0.0, scenario=1, seed=0)
            )
            for t in JAMMERS
            for bw in (1.0, 10.0, 40.0)
        }
        assert len(labels) == 18


class TestGenerateSnapshot:
    def test_dimensions(self):
        snap = sg.generate_snapshot(chirp_spec())
        assert snap.data.shape == (1024, 34)
        assert np.isfinite(snap.data).all()

    def test_clean_has_no_cell_above_floor_plus_6db(self):
        snap = sg.generate_snapshot(sg.JammerSpec(intf_type="None", scenario=1, seed=1))
        assert snap.data.max() < sg.NOISE_FLOOR_DB + 6.0

    def test_deterministic_bit_identical(self):
        spec = chirp_spec()
        a = sg.generate_snapshot(spec)
        b = sg.generate_snapshot(spec)
        assert np.array_equal(a.data, b.data)

    def test_wider_bandwidth_occupies_more_channels(self):
        # Oracle: brute-force count of channels whose time-max exceeds
        # the floor mean + 10 dB, for bw=60 vs bw=2 at the same seed/power.
        threshold = sg.NOISE_FLOOR_DB + 10.0
        narrow = sg.generate_snapshot(chirp_spec(bw=2.0, power=4.0, seed=7))
        wide = sg.generate_snapshot(chirp_spec(bw=60.0, power=4.0, seed=7))
        count_narrow = int((narrow.data.max(axis=1) > threshold).sum())
        count_wide = int((wide.data.max(axis=1) > threshold).sum())
        assert count_wide > count_narrow

    def test_band_confinement_all_types_except_pulsed(self):
        rng = np.random.default_rng(5)
        for label in JAMMERS:
            if label == "Pulsed":
                continue
            for _ in range(8):
                spec = random_spec(rng, intf_type=label)
                layer = sg.interference_layer(spec)
                lo, hi = sg.band_channels(spec.bandwidth)
                in_band = layer[lo : hi + 1].sum()
                assert in_band >= 0.99 * layer.sum(), (label, spec)

    def test_pulsed_is_full_band(self):
        layer = sg.interference_layer(
            sg.JammerSpec(intf_type="Pulsed", bandwidth=2.0, power=0.0, scenario=1, seed=3)
        )
        assert (layer.max(axis=1) > 0).all()
        assert (layer[:, 3:6] == 0).all()  # off-duty bins

    def test_power_monotonicity(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            base = random_spec(rng)
            peaks = []
            for power in (-10.0, -3.0, 2.0, 10.0):
                spec = sg.JammerSpec(
                    intf_type=base.intf_type,
                    bandwidth=base.bandwidth,
                    power=power,
                    scenario=base.scenario,
                    seed=base.seed,
                )
                peaks.append(sg.peak_interference_db(spec))
            assert peaks == sorted(peaks) and len(set(peaks)) == len(peaks)

    def test_chirp_center_advances_linearly(self):
        for bw in (0.5, 2.0, 10.0, 60.0):
            layer = sg.interference_layer(chirp_spec(bw=bw))
            channels = np.arange(1024, dtype=float)
            com = (channels[:, None] * layer).sum(axis=0) / layer.sum(axis=0)
            t = np.arange(34, dtype=float)
            design = np.vstack([t, np.ones_like(t)]).T
            coef, *_ = np.linalg.lstsq(design, com, rcond=None)
            ss_res = float(((com - design @ coef) ** 2).sum())
            ss_tot = float(((com - com.mean()) ** 2).sum())
            r2 = 1.0 if ss_tot < 1e-18 else 1.0 - ss_res / ss_tot
            assert r2 >= 0.99


class TestApplyMultipath:
    def test_scenario_1_is_identity(self):
        snap = sg.generate_snapshot(chirp_spec(scenario=1))
        out = sg.apply_multipath(snap, 1)
        assert out is snap

    def test_scenario_out_of_range(self):
        snap = sg.generate_snapshot(chirp_spec())
        with pytest.raises(ParameterError, match="scenario"):
            sg.apply_multipath(snap, 9)

    def test_peak_strictly_lower_for_scenario_8(self):
        p1 = sg.peak_interference_db(chirp_spec(scenario=1))
        p8 = sg.peak_interference_db(chirp_spec(scenario=8))
        assert p8 < p1
        snap1 = sg.generate_snapshot(chirp_spec(scenario=1))
        snap8 = sg.apply_multipath(snap1, 8)
        assert snap8.data.max() < snap1.data.max()

    def test_multipath_monotone_nonincreasing(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            base = random_spec(rng)
            peaks = [
                sg.peak_interference_db(
                    sg.JammerSpec(
                        intf_type=base.intf_type,
                        bandwidth=base.bandwidth,
                        power=base.power,
                        scenario=s,
                        seed=base.seed,
                    )
                )
                for s in range(1, 9)
            ]
            assert all(a >= b for a, b in zip(peaks, peaks[1:]))

    def test_scenario_5_energy_matches_oracle(self):
        # Oracle: recompute both energies by brute-force summation over the
        # direct layer, then apply the attenuation/echo gains analytically.
        spec1 = chirp_spec(bw=10.0, power=4.0, scenario=1, seed=3)
        direct = sg.direct_interference_layer(spec1)
        alpha = sg.multipath_attenuation(5)
        e_direct = float(direct.sum())
        e_echo = float(direct[:, : -sg.ECHO_DELAY_BINS].sum())
        expected = alpha**2 * e_direct + (sg.ECHO_GAIN * alpha) ** 2 * e_echo
        spec5 = chirp_spec(bw=10.0, power=4.0, scenario=5, seed=3)
        assert abs(sg.interference_energy(spec5) - expected) < 1e-9

    def test_rerender_matches_direct_generation(self):
        spec1 = chirp_spec(scenario=1, seed=21)
        spec6 = chirp_spec(scenario=6, seed=21)
        rerendered = sg.apply_multipath(sg.generate_snapshot(spec1), 6)
        direct = sg.generate_snapshot(spec6)
        assert rerendered.meta == spec6
        np.testing.assert_allclose(rerendered.data, direct.data, atol=1e-9)

    def test_noise_floor_untouched_outside_interference(self):
        spec = chirp_spec(bw=0.5, scenario=1, seed=9)
        snap1 = sg.generate_snapshot(spec)
        snap5 = sg.apply_multipath(snap1, 5)
        untouched = sg.interference_layer(snap5.meta).max(axis=1) == 0
        np.testing.assert_allclose(
            snap5.data[untouched], snap1.data[untouched], atol=1e-9
        )


class TestSnapshotIO:
    def test_roundtrip(self, tmp_path):
        snap = sg.generate_snapshot(chirp_spec(), snapshot_id=42)
        path = tmp_path / "x.gsnp"
        sg.save_snapshot(snap, path)
        loaded = sg.load_snapshot(path)
        assert loaded.id == 42
        assert loaded.meta == snap.meta
        np.testing.assert_array_equal(
            loaded.data, snap.data.astype("<f4").astype(np.float64)
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.gsnp"
        path.write_bytes(b"XXXX" + b"\x00" * 200)
        with pytest.raises(FormatError):
            sg.load_snapshot(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "short.gsnp"
        path.write_bytes(b"GSNP\x01\x00" + b"\x00" * 100)
        with pytest.raises(FormatError):
            sg.load_snapshot(path)

    def test_non_finite_rejected(self):
        data = np.zeros((1024, 34))
        data[0, 0] = np.nan
        with pytest.raises(DataIntegrityError):
            sg.Snapshot(id=0, data=data)


class TestGenerateDataset:
    def test_paper_scale_manifest_shape(self):
        # 576 snapshots per class mirrors the real corpus' clean-class count.
        config = sg.DatasetConfig(counts={t: 576 for t in ["None"] + JAMMERS})
        specs = list(sg.iter_dataset_specs(config))
        assert len(specs) == 4032
        ids = [i for i, _ in specs]
        assert len(set(ids)) == 4032
        clean = sum(1 for _, s in specs if s.intf_type is sg.InterferenceType.NONE)
        assert clean == 576

    def test_all_zero_config_empty_manifest(self, tmp_path):
        config = sg.DatasetConfig(counts={"Chirp": 0})
        manifest = sg.generate_dataset(config, tmp_path / "empty")
        assert manifest.entries == []
        assert list((tmp_path / "empty").glob("*.gsnp")) == []

    def test_regeneration_bit_identical(self, tmp_path):
        # Oracle: file-hash comparison across two runs of the same config.
        config = sg.DatasetConfig(
            counts={"None": 2, "Chirp": 3, "Noise": 2}, base_seed=9, id_start=100
        )
        m1 = sg.generate_dataset(config, tmp_path / "a")
        m2 = sg.generate_dataset(config, tmp_path / "b")
        assert m1.to_dict() == m2.to_dict()
        for entry in m1.entries:
            h1 = hashlib.sha256((tmp_path / "a" / entry.file).read_bytes()).hexdigest()
            h2 = hashlib.sha256((tmp_path / "b" / entry.file).read_bytes()).hexdigest()
            assert h1 == h2

    def test_counts_honored_and_manifest_loads(self, tmp_path):
        config = sg.DatasetConfig(counts={"None": 2, "Pulsed": 4}, base_seed=1)
        manifest = sg.generate_dataset(config, tmp_path / "d")
        assert manifest.counts == {"None": 2, "Pulsed": 4}
        loaded = sg.load_manifest(tmp_path / "d" / "manifest.json")
        assert loaded.to_dict() == manifest.to_dict()

    def test_invalid_grid_rejected(self):
        with pytest.raises(ParameterError, match="bandwidth"):
            sg.DatasetConfig(counts={"Chirp": 1}, bandwidths=(100.0,))
        with pytest.raises(ParameterError, match="power"):
            sg.DatasetConfig(counts={"Chirp": 1}, powers=(-20.0,))
        with pytest.raises(ParameterError, match="negative"):
            sg.DatasetConfig(counts={"Chirp": -1})

    def test_manifest_uniqueness_enforced(self):
        spec = chirp_spec()
        entries = [
            sg.ManifestEntry(id=1, file="a.gsnp", spec=spec),
            sg.ManifestEntry(id=1, file="b.gsnp", spec=spec),
        ]
        with pytest.raises(DataIntegrityError, match="unique"):
            sg.DatasetManifest(format_version=1, counts={"Chirp": 2}, entries=entries)

    def test_sidecar_json_is_sorted_and_stable(self, tmp_path):
        snap = sg.generate_snapshot(chirp_spec(), snapshot_id=7)
        sg.save_snapshot(snap, tmp_path / "s.gsnp")
        raw = (tmp_path / "s.json").read_text()
        assert json.loads(raw)["spec"]["intf_type"] == "Chirp"
        assert raw == json.dumps(json.loads(raw), sort_keys=True, indent=2) + "\n"
