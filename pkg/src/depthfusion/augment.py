"""Training-time augmentation, depth-consistent and seed-deterministic.

Fixed order: scale -> rotate -> flip -> jitter -> normalize. Geometry ops
touch colour, depth, and mask together; jitter and normalization touch
colour only. Colour is resampled bilinearly, depth and mask always
nearest-neighbour (interpolating depths across occlusion boundaries would
fabricate values). Scaling enlarges by s and center-crops back, dividing
depth by s: an object drawn s times larger is s times closer under a
pinhole camera. Pixels pulled in from outside the source become invalid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import ConfigError

__all__ = ["AugmentSpec", "apply", "normalize", "denormalize"]


@dataclass(frozen=True)
class AugmentSpec:
    scale_range: tuple[float, float] = (1.0, 1.5)
    rotation_deg: tuple[float, float] = (-5.0, 5.0)
    jitter_range: tuple[float, float] = (0.6, 1.4)
    flip_prob: float = 0.5
    mean: tuple[float, float, float] = (0.5, 0.5, 0.5)
    std: tuple[float, float, float] = (0.5, 0.5, 0.5)
    seed: int = 0

    def __post_init__(self):
        if not (1.0 <= self.scale_range[0] <= self.scale_range[1]):
            raise ConfigError(f"AugmentSpec: scale range {self.scale_range} must satisfy 1 <= lo <= hi")
        if self.rotation_deg[0] > self.rotation_deg[1]:
            raise ConfigError(f"AugmentSpec: rotation range {self.rotation_deg} is inverted")
        if not (0.0 < self.jitter_range[0] <= self.jitter_range[1]):
            raise ConfigError(f"AugmentSpec: jitter range {self.jitter_range} must be positive")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ConfigError(f"AugmentSpec: flip probability {self.flip_prob} not in [0, 1]")
        if any(s <= 0 for s in self.std):
            raise ConfigError(f"AugmentSpec: std {self.std} must be positive per channel")

    @classmethod
    def identity(cls, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> "AugmentSpec":
        """Normalization only; used for evaluation and prediction inputs."""
        return cls(scale_range=(1.0, 1.0), rotation_deg=(0.0, 0.0),
                   jitter_range=(1.0, 1.0), flip_prob=0.0, mean=mean, std=std)


def normalize(image: np.ndarray, mean, std) -> np.ndarray:
    """(x - mean) / std per channel."""
    mean = np.asarray(mean, dtype=image.dtype).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=image.dtype).reshape(-1, 1, 1)
    if np.any(std <= 0):
        raise ConfigError("normalize: std must be positive")
    return (image - mean) / std


def denormalize(image: np.ndarray, mean, std) -> np.ndarray:
    mean = np.asarray(mean, dtype=image.dtype).reshape(-1, 1, 1)
    std = np.asarray(std, dtype=image.dtype).reshape(-1, 1, 1)
    return image * std + mean


def _resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a (C, H, W) image, align-corners false, edge clamped."""
    _, h, w = image.shape
    sy = h / out_h
    sx = w / out_w
    src_y = (np.arange(out_h) + 0.5) * sy - 0.5
    src_x = (np.arange(out_w) + 0.5) * sx - 0.5
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = (src_y - y0).astype(image.dtype)
    fx = (src_x - x0).astype(image.dtype)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    top = image[:, y0c][:, :, x0c] * (1 - fx) + image[:, y0c][:, :, x1c] * fx
    bot = image[:, y1c][:, :, x0c] * (1 - fx) + image[:, y1c][:, :, x1c] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def _resize_nearest_idx(n_in: int, n_out: int) -> np.ndarray:
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    return np.clip(np.rint(src).astype(np.int64), 0, n_in - 1)


def _scale(image, depth, mask, s: float):
    if s == 1.0:
        return image, depth, mask
    _, h, w = image.shape
    nh, nw = int(round(h * s)), int(round(w * s))
    big = _resize_bilinear(image, nh, nw)
    iy = _resize_nearest_idx(h, nh)
    ix = _resize_nearest_idx(w, nw)
    big_depth = depth[iy][:, ix]
    big_mask = mask[iy][:, ix]
    r0 = (nh - h) // 2
    c0 = (nw - w) // 2
    image = big[:, r0:r0 + h, c0:c0 + w]
    depth = big_depth[r0:r0 + h, c0:c0 + w] / np.asarray(s, dtype=depth.dtype)
    mask = big_mask[r0:r0 + h, c0:c0 + w]
    return image, depth, mask


def _rotate(image, depth, mask, degrees: float):
    if degrees == 0.0:
        return image, depth, mask
    _, h, w = image.shape
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    # inverse map: rotate output coords by -theta to find the source pixel
    src_y = cy + cos_t * dy + sin_t * dx
    src_x = cx - sin_t * dy + cos_t * dx

    inside = (src_y >= 0) & (src_y <= h - 1) & (src_x >= 0) & (src_x <= w - 1)

    y0 = np.clip(np.floor(src_y).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(src_x).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = (src_y - y0).astype(image.dtype)
    fx = (src_x - x0).astype(image.dtype)
    out_img = (image[:, y0, x0] * (1 - fy) * (1 - fx)
               + image[:, y0, x1] * (1 - fy) * fx
               + image[:, y1, x0] * fy * (1 - fx)
               + image[:, y1, x1] * fy * fx)
    out_img *= inside

    ny = np.clip(np.rint(src_y).astype(np.int64), 0, h - 1)
    nx = np.clip(np.rint(src_x).astype(np.int64), 0, w - 1)
    out_depth = depth[ny, nx]
    out_mask = mask[ny, nx] & inside
    return out_img, out_depth, out_mask


def _jitter(image: np.ndarray, kb: float, kc: float, ks: float) -> np.ndarray:
    """Brightness, contrast, saturation factors; clipped back into [0, 1].

    Factors of exactly 1.0 are skipped so an identity draw is bit-exact.
    """
    img = image
    if kb != 1.0:
        img = np.clip(img * kb, 0.0, 1.0)
    if kc != 1.0:
        lum = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]).astype(img.dtype)
        img = np.clip(lum.mean() + (img - lum.mean()) * kc, 0.0, 1.0)
    if ks != 1.0:
        lum = (0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]).astype(img.dtype)
        img = np.clip(lum[None] + (img - lum[None]) * ks, 0.0, 1.0)
    return img


def apply(sample: Sample, spec: AugmentSpec, rng: np.random.Generator) -> Sample:
    """Augment one sample with draws from ``rng``; the input is untouched.

    Draw order is fixed (scale, rotation, flip, three jitter factors) so a
    given rng state always produces the same transform. The returned image
    is normalized and therefore no longer confined to [0, 1].
    """
    s = float(rng.uniform(*spec.scale_range))
    r = float(rng.uniform(*spec.rotation_deg))
    do_flip = bool(rng.random() < spec.flip_prob)
    kb, kc, ks = (float(v) for v in rng.uniform(*spec.jitter_range, size=3))

    image = sample.image.astype(np.float32, copy=True)
    depth = sample.depth.astype(np.float32, copy=True)
    mask = sample.mask.copy()

    image, depth, mask = _scale(image, depth, mask, s)
    image, depth, mask = _rotate(image, depth, mask, r)
    if do_flip:
        image = image[:, :, ::-1]
        depth = depth[:, ::-1]
        mask = mask[:, ::-1]
    image = _jitter(image, kb, kc, ks)
    image = normalize(image, spec.mean, spec.std)
    return Sample(image=np.ascontiguousarray(image, dtype=np.float32),
                  depth=np.ascontiguousarray(depth, dtype=np.float32),
                  mask=np.ascontiguousarray(mask),
                  sample_id=sample.sample_id)
