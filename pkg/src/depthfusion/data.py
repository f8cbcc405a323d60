"""On-disk sample formats, dataset manifests, and a synthetic-scene generator.

Formats:
  * RGB: binary PPM (P6, maxval 255).
  * Depth: raw little-endian float32, row-major, 16-byte header
    (magic ``DPTH``, u32 height, u32 width, u32 reserved). Depth 0 marks an
    invalid pixel.
  * Manifest: UTF-8 CSV with header ``rgb,depth,split``; paths are resolved
    relative to the manifest file.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataError, FormatError, ManifestError

__all__ = [
    "Sample",
    "Manifest",
    "ManifestEntry",
    "SyntheticSceneSpec",
    "read_ppm",
    "write_ppm",
    "read_depth",
    "write_depth",
    "read_sample",
    "write_sample",
    "load_manifest",
    "load_samples",
    "generate_scene",
    "generate_synthetic",
    "generate_samples",
    "plane_depth",
]

SPLITS = ("train", "val", "test")
DEPTH_MAGIC = b"DPTH"


@dataclass
class Sample:
    """One aligned RGB / depth pair: image (3,H,W) in [0,1], depth (H,W) meters."""

    image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    sample_id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DataError(f"Sample: image must be (3, H, W), got {self.image.shape}")
        if self.depth.shape != self.image.shape[1:]:
            raise DataError(
                f"Sample: depth shape {self.depth.shape} != image spatial {self.image.shape[1:]}"
            )
        if self.mask.shape != self.depth.shape:
            raise DataError(f"Sample: mask shape {self.mask.shape} != depth {self.depth.shape}")


# ---------------------------------------------------------------------------
# PPM


def _ppm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Next whitespace-delimited token, skipping '#' comment lines."""
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise FormatError(f"PPM: unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 PPM into a float32 (3, H, W) array in [0, 1]."""
    buf = Path(path).read_bytes()
    if buf[:2] != b"P6":
        raise FormatError(f"PPM: bad magic {buf[:2]!r} at byte 0 in {path}")
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _ppm_token(buf, pos)
        try:
            fields.append(int(tok))
        except ValueError:
            raise FormatError(f"PPM: non-numeric header token {tok!r} at byte {pos} in {path}")
    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"PPM: unsupported maxval {maxval} (need 255) in {path}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise FormatError(
            f"PPM: truncated raster, expected {need} bytes from byte {pos}, got {len(raster)}"
        )
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return (img.astype(np.float32) / 255.0).transpose(2, 0, 1)


def write_ppm(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float array in [0, 1] as binary P6."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"write_ppm: image must be (3, H, W), got {image.shape}")
    _, h, w = image.shape
    raster = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(raster.transpose(1, 2, 0).tobytes())


# ---------------------------------------------------------------------------
# DPTH


def read_depth(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a DPTH file; returns (depth float32 (H, W), validity mask)."""
    buf = Path(path).read_bytes()
    if len(buf) < 16:
        raise FormatError(f"DPTH: truncated header, {len(buf)} bytes < 16 in {path}")
    magic, height, width, _reserved = struct.unpack("<4sIII", buf[:16])
    if magic != DEPTH_MAGIC:
        raise FormatError(f"DPTH: bad magic {magic!r} at byte 0 in {path}")
    need = height * width * 4
    if len(buf) != 16 + need:
        raise FormatError(
            f"DPTH: payload is {len(buf) - 16} bytes from byte 16, expected {need} in {path}"
        )
    depth = np.frombuffer(buf, dtype="<f4", offset=16).reshape(height, width).copy()
    if not np.isfinite(depth).all():
        raise DataError(f"DPTH: non-finite depth values in {path}")
    if (depth < 0).any():
        raise DataError(f"DPTH: negative depth values in {path}")
    return depth, depth != 0


def write_depth(path, depth: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write depth as DPTH; invalid pixels are stored as 0."""
    if depth.ndim != 2:
        raise DataError(f"write_depth: depth must be 2-D, got {depth.shape}")
    h, w = depth.shape
    out = np.ascontiguousarray(depth, dtype="<f4")
    if mask is not None:
        out = np.where(np.asarray(mask, dtype=bool), out, np.float32(0.0))
    valid = out[out != 0]
    if not np.isfinite(out).all() or (valid <= 0).any():
        raise DataError("write_depth: valid depths must be finite and positive")
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIII", DEPTH_MAGIC, h, w, 0))
        f.write(out.astype("<f4").tobytes())


def read_sample(rgb_path, depth_path, sample_id: str | None = None) -> Sample:
    image = read_ppm(rgb_path)
    depth, mask = read_depth(depth_path)
    if depth.shape != image.shape[1:]:
        raise DataError(
            f"read_sample: depth {depth.shape} does not match image {image.shape[1:]} "
            f"({rgb_path} / {depth_path})"
        )
    return Sample(image=image, depth=depth, mask=mask,
                  sample_id=sample_id or Path(rgb_path).stem)


def write_sample(sample: Sample, rgb_path, depth_path) -> None:
    write_ppm(rgb_path, sample.image)
    write_depth(depth_path, sample.depth, sample.mask)


# ---------------------------------------------------------------------------
# manifest


@dataclass(frozen=True)
class ManifestEntry:
    rgb: Path
    depth: Path
    split: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]

    def select(self, split: str) -> list[ManifestEntry]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}, expected one of {SPLITS}")
        return [e for e in self.entries if e.split == split]

    def counts(self) -> dict[str, int]:
        return {s: len(self.select(s)) for s in SPLITS}


def load_manifest(path) -> Manifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["rgb", "depth", "split"]:
            raise ManifestError(f"{path}:1: header must be rgb,depth,split, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            rgb, depth, split = (c.strip() for c in row)
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split tag {split!r}")
            rgb_p, depth_p = base / rgb, base / depth
            if not rgb_p.exists():
                raise ManifestError(f"{path}:{lineno}: missing file {rgb_p}")
            if not depth_p.exists():
                raise ManifestError(f"{path}:{lineno}: missing file {depth_p}")
            entries.append(ManifestEntry(rgb=rgb_p, depth=depth_p, split=split))
    return Manifest(entries=entries)


def load_samples(manifest: Manifest, split: str) -> list[Sample]:
    return [read_sample(e.rgb, e.depth) for e in manifest.select(split)]


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Desk-scale stand-in scenes: primitives over a sloped ground plane.

    Depth is analytic (z-buffer of fronto-parallel rectangles and sphere
    caps over a row-linear plane) and appearance is shaded by depth, so
    depth is learnable from RGB alone. Same seed, same bytes.
    """

    height: int = 32
    width: int = 32
    d_min: float = 2.0
    d_max: float = 8.0
    primitives: int = 5
    noise: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ConfigError(f"SyntheticSceneSpec: size {self.height}x{self.width} too small")
        if not (0 < self.d_min < self.d_max):
            raise ConfigError("SyntheticSceneSpec: need 0 < d_min < d_max")
        if self.primitives < 0 or self.noise < 0:
            raise ConfigError("SyntheticSceneSpec: primitives and noise must be >= 0")


def plane_depth(spec: SyntheticSceneSpec) -> np.ndarray:
    """Ground-plane ramp: d_max at the top row down to d_min at the bottom."""
    rows = np.linspace(spec.d_max, spec.d_min, spec.height, dtype=np.float64)
    return np.broadcast_to(rows[:, None], (spec.height, spec.width)).copy()


# Depth-correlated shading with deliberate local ambiguity: hue runs through
# 1.25 colour-wheel cycles across the depth range, so depths 80% of the range
# apart share a hue. A brightness tilt breaks the tie, but a random per-scene
# brightness offset (plus pixel noise) makes the tilt unreadable locally:
# resolving the ambiguous depths requires estimating the scene offset from
# wide-area context first.
_WHEEL_CYCLES = 1.25
_WHEEL_PHASES = np.array([0.0, 2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0])
_BRIGHTNESS_TILT = 0.22
_SCENE_OFFSET = 0.06


def _shade(depth: np.ndarray, spec: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    t = (depth - spec.d_min) / (spec.d_max - spec.d_min)
    angle = 2.0 * np.pi * _WHEEL_CYCLES * t
    img = 0.5 + 0.33 * np.sin(angle[None] + _WHEEL_PHASES[:, None, None])
    img = img + _BRIGHTNESS_TILT * (t - 0.5)[None]
    img = img + rng.uniform(-_SCENE_OFFSET, _SCENE_OFFSET)
    if spec.noise > 0:
        img = img + spec.noise * rng.standard_normal((3,) + depth.shape)
    return np.clip(img, 0.0, 1.0)


def generate_scene(spec: SyntheticSceneSpec, index: int) -> Sample:
    """Deterministic scene ``index``; independent of how many scenes exist."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5CE, index]))
    h, w = spec.height, spec.width
    depth = plane_depth(spec)
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(spec.primitives):
        z = rng.uniform(spec.d_min * 1.05, spec.d_max * 0.95)
        if rng.random() < 0.5:
            bh = rng.integers(h // 8 + 1, h // 2 + 1)
            bw = rng.integers(w // 8 + 1, w // 2 + 1)
            r0 = rng.integers(0, h - bh + 1)
            c0 = rng.integers(0, w - bw + 1)
            region = depth[r0:r0 + bh, c0:c0 + bw]
            np.minimum(region, z, out=region)
        else:
            cy = rng.uniform(0, h - 1)
            cx = rng.uniform(0, w - 1)
            radius = rng.uniform(min(h, w) / 8, min(h, w) / 3)
            bump = rng.uniform(0.2, 0.8) * (z - spec.d_min)
            rho2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / radius ** 2
            inside = rho2 < 1.0
            surface = z - bump * np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
            depth = np.where(inside, np.minimum(depth, surface), depth)
    depth = np.clip(depth, spec.d_min, spec.d_max)
    image = _shade(depth, spec, rng)
    # quantize to 8-bit so the in-memory sample matches its on-disk bytes
    image = (np.rint(image * 255.0) / 255.0).astype(np.float32)
    return Sample(image=image, depth=depth.astype(np.float32),
                  mask=np.ones((h, w), dtype=bool), sample_id=f"scene_{index:05d}")


def generate_synthetic(spec: SyntheticSceneSpec, counts: Mapping[str, int],
                       out_dir) -> Manifest:
    """Write ``counts[split]`` scenes per split plus manifest.csv under out_dir."""
    for split in counts:
        if split not in SPLITS:
            raise ConfigError(f"generate_synthetic: unknown split {split!r}")
        if counts[split] < 0:
            raise ConfigError(f"generate_synthetic: negative count for {split}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    entries = []
    index = 0
    for split in SPLITS:
        for _ in range(counts.get(split, 0)):
            sample = generate_scene(spec, index)
            rgb_name = f"img_{index:05d}.ppm"
            depth_name = f"dep_{index:05d}.dpth"
            write_sample(sample, out_dir / rgb_name, out_dir / depth_name)
            rows.append((rgb_name, depth_name, split))
            entries.append(ManifestEntry(out_dir / rgb_name, out_dir / depth_name, split))
            index += 1
    with open(out_dir / "manifest.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["rgb", "depth", "split"])
        writer.writerows(rows)
    return Manifest(entries=entries)


def generate_samples(spec: SyntheticSceneSpec, count: int, start: int = 0) -> list[Sample]:
    """In-memory scene list (no files); handy for tests and training demos."""
    return [generate_scene(spec, i) for i in range(start, start + count)]
