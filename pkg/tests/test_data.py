"""File formats, manifests, and the synthetic generator."""

import numpy as np
import pytest

from depthfusion import data
from depthfusion.errors import ConfigError, DataError, FormatError, ManifestError
from depthfusion.data import Sample, SyntheticSceneSpec


def _sample(seed=0, h=8, w=10):
    rng = np.random.default_rng(seed)
    image = (rng.integers(0, 256, (3, h, w)) / 255.0).astype(np.float32)
    depth = rng.uniform(1.0, 9.0, (h, w)).astype(np.float32)
    mask = rng.random((h, w)) < 0.9
    depth[~mask] = 0.0
    depth[mask & (depth == 0)] = 1.0
    return Sample(image=image, depth=np.where(mask, depth, 0).astype(np.float32),
                  mask=mask, sample_id="t")


class TestPpm:
    def test_roundtrip_bit_exact(self, tmp_path):
        s = _sample()
        p = tmp_path / "x.ppm"
        data.write_ppm(p, s.image)
        back = data.read_ppm(p)
        np.testing.assert_array_equal(back, s.image)

    def test_header_layout(self, tmp_path):
        p = tmp_path / "x.ppm"
        data.write_ppm(p, np.zeros((3, 2, 5), dtype=np.float32))
        raw = p.read_bytes()
        assert raw.startswith(b"P6\n5 2\n255\n")
        assert len(raw) == len(b"P6\n5 2\n255\n") + 2 * 5 * 3

    def test_comment_lines_skipped(self, tmp_path):
        p = tmp_path / "c.ppm"
        p.write_bytes(b"P6\n# a comment\n2 1\n255\n" + bytes(6))
        img = data.read_ppm(p)
        assert img.shape == (3, 1, 2)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.ppm"
        p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
        with pytest.raises(FormatError, match="byte 0"):
            data.read_ppm(p)

    def test_truncated_raster_reports_offset(self, tmp_path):
        p = tmp_path / "short.ppm"
        p.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(FormatError, match="byte"):
            data.read_ppm(p)


class TestDpth:
    def test_roundtrip_bit_exact(self, tmp_path):
        s = _sample(1)
        p = tmp_path / "d.dpth"
        data.write_depth(p, s.depth, s.mask)
        depth, mask = data.read_depth(p)
        np.testing.assert_array_equal(depth, s.depth)
        np.testing.assert_array_equal(mask, s.mask)

    def test_2x2_file_is_exactly_32_bytes(self, tmp_path):
        p = tmp_path / "d.dpth"
        data.write_depth(p, np.ones((2, 2), dtype=np.float32))
        assert p.stat().st_size == 16 + 16

    def test_zero_depth_is_invalid(self, tmp_path):
        p = tmp_path / "d.dpth"
        arr = np.array([[1.0, 0.0], [2.0, 3.0]], dtype=np.float32)
        data.write_depth(p, arr)
        _, mask = data.read_depth(p)
        np.testing.assert_array_equal(mask, [[True, False], [True, True]])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.dpth"
        p.write_bytes(b"JUNK" + bytes(12 + 16))
        with pytest.raises(FormatError, match="byte 0"):
            data.read_depth(p)

    def test_truncation_detected(self, tmp_path):
        p = tmp_path / "short.dpth"
        import struct
        p.write_bytes(struct.pack("<4sIII", b"DPTH", 2, 2, 0) + bytes(8))
        with pytest.raises(FormatError, match="byte 16"):
            data.read_depth(p)

    def test_negative_depth_rejected(self, tmp_path):
        import struct
        p = tmp_path / "neg.dpth"
        payload = np.array([[-1.0, 2.0]], dtype="<f4")
        p.write_bytes(struct.pack("<4sIII", b"DPTH", 1, 2, 0) + payload.tobytes())
        with pytest.raises(DataError):
            data.read_depth(p)

    def test_write_rejects_negative_valid(self, tmp_path):
        with pytest.raises(DataError):
            data.write_depth(tmp_path / "x.dpth", np.array([[-2.0]], dtype=np.float32))


class TestSampleRoundtrip:
    def test_write_then_read_identical(self, tmp_path):
        s = _sample(2)
        data.write_sample(s, tmp_path / "s.ppm", tmp_path / "s.dpth")
        back = data.read_sample(tmp_path / "s.ppm", tmp_path / "s.dpth", "t")
        np.testing.assert_array_equal(back.image, s.image)
        np.testing.assert_array_equal(back.depth, s.depth)
        np.testing.assert_array_equal(back.mask, s.mask)


class TestManifest:
    def _write_dataset(self, tmp_path, rows):
        lines = ["rgb,depth,split"] + [",".join(r) for r in rows]
        (tmp_path / "manifest.csv").write_text("\n".join(lines) + "\n")

    def test_order_preserved(self, tmp_path):
        s = _sample(3)
        for i in range(3):
            data.write_sample(s, tmp_path / f"i{i}.ppm", tmp_path / f"d{i}.dpth")
        self._write_dataset(tmp_path, [(f"i{i}.ppm", f"d{i}.dpth", "train") for i in range(3)])
        m = data.load_manifest(tmp_path / "manifest.csv")
        assert [e.rgb.name for e in m.entries] == ["i0.ppm", "i1.ppm", "i2.ppm"]

    def test_split_partition(self, tmp_path):
        s = _sample(4)
        rows = []
        for i, split in enumerate(["train", "train", "val", "test"]):
            data.write_sample(s, tmp_path / f"i{i}.ppm", tmp_path / f"d{i}.dpth")
            rows.append((f"i{i}.ppm", f"d{i}.dpth", split))
        self._write_dataset(tmp_path, rows)
        m = data.load_manifest(tmp_path / "manifest.csv")
        assert m.counts() == {"train": 2, "val": 1, "test": 1}
        assert len(m.select("train")) + len(m.select("val")) + len(m.select("test")) == 4

    def test_large_split_counts_representable(self, tmp_path):
        s = _sample(5, 4, 4)
        data.write_sample(s, tmp_path / "i.ppm", tmp_path / "d.dpth")
        rows = [("i.ppm", "d.dpth", "train")] * 249 + [("i.ppm", "d.dpth", "test")] * 215
        self._write_dataset(tmp_path, rows)
        m = data.load_manifest(tmp_path / "manifest.csv")
        assert m.counts() == {"train": 249, "val": 0, "test": 215}

    def test_unknown_split_reports_line(self, tmp_path):
        s = _sample(6)
        data.write_sample(s, tmp_path / "i.ppm", tmp_path / "d.dpth")
        self._write_dataset(tmp_path, [("i.ppm", "d.dpth", "train"),
                                       ("i.ppm", "d.dpth", "banana")])
        with pytest.raises(ManifestError, match=":3:"):
            data.load_manifest(tmp_path / "manifest.csv")

    def test_missing_file_reports_line(self, tmp_path):
        self._write_dataset(tmp_path, [("nope.ppm", "nope.dpth", "train")])
        with pytest.raises(ManifestError, match=":2:"):
            data.load_manifest(tmp_path / "manifest.csv")

    def test_bad_header_rejected(self, tmp_path):
        (tmp_path / "manifest.csv").write_text("a,b,c\n")
        with pytest.raises(ManifestError, match=":1:"):
            data.load_manifest(tmp_path / "manifest.csv")


class TestSynthetic:
    def test_empty_scene_is_plane_ramp(self):
        spec = SyntheticSceneSpec(height=16, width=12, primitives=0, noise=0.0)
        s = data.generate_scene(spec, 0)
        # plane-equation oracle: linear in the row index
        rows = np.linspace(spec.d_max, spec.d_min, 16)
        want = np.broadcast_to(rows[:, None], (16, 12)).astype(np.float32)
        np.testing.assert_array_equal(s.depth, want)

    def test_same_seed_same_scene(self):
        spec = SyntheticSceneSpec(seed=7)
        a = data.generate_scene(spec, 3)
        b = data.generate_scene(spec, 3)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_different_seeds_differ(self):
        a = data.generate_scene(SyntheticSceneSpec(seed=0), 0)
        b = data.generate_scene(SyntheticSceneSpec(seed=1), 0)
        assert not np.array_equal(a.depth, b.depth)

    def test_depth_within_spec_range(self):
        spec = SyntheticSceneSpec(d_min=1.5, d_max=6.0, primitives=8)
        for i in range(10):
            s = data.generate_scene(spec, i)
            assert s.depth.min() >= np.float32(1.5)
            assert s.depth.max() <= np.float32(6.0)

    def test_dataset_bytes_deterministic(self, tmp_path):
        spec = SyntheticSceneSpec(seed=5)
        counts = {"train": 3, "val": 1, "test": 2}
        data.generate_synthetic(spec, counts, tmp_path / "a")
        data.generate_synthetic(spec, counts, tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_generated_manifest_loads(self, tmp_path):
        spec = SyntheticSceneSpec(seed=2)
        m = data.generate_synthetic(spec, {"train": 2, "test": 1}, tmp_path)
        loaded = data.load_manifest(tmp_path / "manifest.csv")
        assert loaded.counts() == {"train": 2, "val": 0, "test": 1}
        samples = data.load_samples(loaded, "train")
        assert len(samples) == 2
        # on-disk bytes decode to the in-memory scene exactly
        scene0 = data.generate_scene(spec, 0)
        np.testing.assert_array_equal(samples[0].image, scene0.image)
        np.testing.assert_array_equal(samples[0].depth, scene0.depth)

    def test_bad_spec_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticSceneSpec(d_min=5.0, d_max=2.0)
        with pytest.raises(ConfigError):
            SyntheticSceneSpec(height=2)
