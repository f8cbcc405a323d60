"""Training losses: masked L1 depth regression, SSIM similarity, and a
per-pixel multinomial logistic term over discretized depth bins, combined
with constant weights.

All loss functions return scalar tensors and are differentiable w.r.t. the
prediction arguments; ground truth and masks enter as constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, EvaluationError
from .tensor import ConvSpec, Tensor, astensor

__all__ = [
    "LossWeights",
    "DiscretizationSpec",
    "l1_depth_loss",
    "ssim",
    "ssim_loss",
    "discretize_depth",
    "bin_centers",
    "multinomial_logistic_loss",
    "combined_loss",
]


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined loss plus the SSIM window and stabilizers.

    Default stabilizers assume a dynamic range of 10 m; use
    ``for_depth_range`` to derive them from the actual maximum depth.
    """

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.1
    ssim_window: int = 7
    c1: float = 0.01   # (0.01 * L)^2 with L = 10
    c2: float = 0.09   # (0.03 * L)^2 with L = 10

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ConfigError("LossWeights: alpha, beta, gamma must be non-negative")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ConfigError("LossWeights: at least one of alpha, beta, gamma must be positive")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ConfigError(f"LossWeights: ssim_window {self.ssim_window} must be odd")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("LossWeights: SSIM stabilizers must be positive")

    @classmethod
    def for_depth_range(cls, d_max: float, alpha: float = 1.0, beta: float = 1.0,
                        gamma: float = 0.1, ssim_window: int = 7) -> "LossWeights":
        return cls(alpha=alpha, beta=beta, gamma=gamma, ssim_window=ssim_window,
                   c1=(0.01 * d_max) ** 2, c2=(0.03 * d_max) ** 2)


@dataclass(frozen=True)
class DiscretizationSpec:
    """Uniform-in-log partition of [d_min, d_max] into ``bins`` depth classes."""

    bins: int = 32
    d_min: float = 2.0
    d_max: float = 8.0

    def __post_init__(self):
        if self.bins < 2:
            raise ConfigError(f"DiscretizationSpec: bins {self.bins} must be >= 2")
        if not (0 < self.d_min < self.d_max):
            raise ConfigError(
                f"DiscretizationSpec: need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]"
            )


def _as_mask(mask, like_shape) -> np.ndarray:
    if mask is None:
        return np.ones(like_shape, dtype=bool)
    m = np.asarray(mask, dtype=bool)
    if m.shape != like_shape:
        raise ConfigError(f"mask shape {m.shape} does not match data shape {like_shape}")
    return m


def l1_depth_loss(pred: Tensor, truth, mask=None) -> Tensor:
    """Mean absolute depth error over valid pixels."""
    truth = np.asarray(truth)
    if pred.data.shape != truth.shape:
        raise ConfigError(f"l1_depth_loss: pred shape {pred.data.shape} vs truth {truth.shape}")
    m = _as_mask(mask, truth.shape)
    n = int(m.sum())
    if n == 0:
        raise EvaluationError("l1_depth_loss: validity mask is empty")
    diff = T.absolute(T.sub(pred, astensor(truth.astype(pred.data.dtype))))
    masked = T.mul(diff, astensor(m.astype(pred.data.dtype)))
    return T.mul(T.tsum(masked), 1.0 / n)


_BOX_CACHE: dict[tuple[int, str], Tensor] = {}


def _box_kernel(window: int, dtype) -> Tensor:
    key = (window, np.dtype(dtype).name)
    k = _BOX_CACHE.get(key)
    if k is None:
        k = Tensor(np.full((1, 1, window, window), 1.0 / (window * window), dtype=dtype))
        _BOX_CACHE[key] = k
    return k


def _window_all_valid(mask: np.ndarray, window: int) -> np.ndarray:
    """Window positions (valid-conv grid) whose pixels are all valid."""
    n, _, h, w = mask.shape
    counts = np.lib.stride_tricks.sliding_window_view(
        mask.astype(np.int32), (window, window), axis=(2, 3)
    ).sum(axis=(4, 5))
    return counts == window * window


def ssim(x, y, window: int = 7, c1: float = 0.01, c2: float = 0.09,
         mask=None) -> tuple[Tensor, Tensor]:
    """Per-window SSIM map and its mean over valid windows.

    Local statistics use a uniform window over fully-interior positions
    (valid convolution), so the map is (H-window+1, W-window+1). With a
    mask, only windows containing exclusively valid pixels contribute to
    the mean. Inputs are N x 1 x H x W.
    """
    x = astensor(x)
    y = astensor(y)
    if x.data.shape != y.data.shape:
        raise ConfigError(f"ssim: shapes differ, {x.data.shape} vs {y.data.shape}")
    if x.data.ndim != 4 or x.data.shape[1] != 1:
        raise ConfigError(f"ssim: expected N x 1 x H x W input, got {x.data.shape}")
    _, _, h, w = x.data.shape
    if window % 2 == 0 or window < 1:
        raise ConfigError(f"ssim: window {window} must be odd and positive")
    if window > h or window > w:
        raise ConfigError(f"ssim: window {window} exceeds image size {h}x{w}")

    box = _box_kernel(window, x.data.dtype)
    spec = ConvSpec(window, window)

    def local_mean(t: Tensor) -> Tensor:
        return T.conv2d(t, box, None, spec)

    mu_x = local_mean(x)
    mu_y = local_mean(y)
    mu_xx = T.mul(mu_x, mu_x)
    mu_yy = T.mul(mu_y, mu_y)
    mu_xy = T.mul(mu_x, mu_y)
    var_x = T.sub(local_mean(T.mul(x, x)), mu_xx)
    var_y = T.sub(local_mean(T.mul(y, y)), mu_yy)
    cov = T.sub(local_mean(T.mul(x, y)), mu_xy)

    num = T.mul(T.add(T.mul(mu_xy, 2.0), c1), T.add(T.mul(cov, 2.0), c2))
    den = T.mul(T.add(T.add(mu_xx, mu_yy), c1), T.add(T.add(var_x, var_y), c2))
    ssim_map = T.div(num, den)

    if mask is None:
        mean = T.tmean(ssim_map)
    else:
        m = _as_mask(mask, x.data.shape)
        wins = _window_all_valid(m, window)
        n_wins = int(wins.sum())
        if n_wins == 0:
            raise EvaluationError("ssim: no window is fully valid")
        weights = astensor(wins.astype(x.data.dtype))
        mean = T.mul(T.tsum(T.mul(ssim_map, weights)), 1.0 / n_wins)
    return ssim_map, mean


def ssim_loss(pred: Tensor, truth, weights: LossWeights, mask=None) -> Tensor:
    """(1 - mean SSIM) / 2, in [0, 1]."""
    truth_t = astensor(np.asarray(truth, dtype=pred.data.dtype))
    _, mean = ssim(pred, truth_t, window=weights.ssim_window,
                   c1=weights.c1, c2=weights.c2, mask=mask)
    return (1.0 - mean) * 0.5


def discretize_depth(depth, spec: DiscretizationSpec, mask=None) -> np.ndarray:
    """Map depths to integer bins, uniform in log space, clamped to the ends."""
    d = np.asarray(depth, dtype=np.float64)
    m = _as_mask(mask, d.shape)
    if np.any(d[m] <= 0):
        raise DataError("discretize_depth: non-positive depth on a valid pixel")
    safe = np.where(m, d, spec.d_min)
    t = (np.log(safe) - np.log(spec.d_min)) / (np.log(spec.d_max) - np.log(spec.d_min))
    bins = np.floor(spec.bins * t).astype(np.int64)
    return np.clip(bins, 0, spec.bins - 1)


def bin_centers(spec: DiscretizationSpec) -> np.ndarray:
    """Geometric-mean centers of the log-uniform bins (dequantization targets)."""
    edges = np.exp(np.linspace(np.log(spec.d_min), np.log(spec.d_max), spec.bins + 1))
    return np.sqrt(edges[:-1] * edges[1:])


def multinomial_logistic_loss(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean cross-entropy of K-way logits against integer bin labels.

    Logits are N x K x H x W; labels N x H x W (or N x 1 x H x W). The
    softmax is stabilized by max subtraction; only valid pixels contribute.
    """
    if logits.data.ndim != 4:
        raise ConfigError(f"multinomial_logistic_loss: logits must be 4-D, got {logits.data.shape}")
    n, k, h, w = logits.data.shape
    lab = np.asarray(labels)
    if lab.ndim == 4 and lab.shape[1] == 1:
        lab = lab[:, 0]
    if lab.shape != (n, h, w):
        raise ConfigError(
            f"multinomial_logistic_loss: labels shape {lab.shape} must be {(n, h, w)}"
        )
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.ndim == 4 and m.shape[1] == 1:
            m = m[:, 0]
        if m.shape != (n, h, w):
            raise ConfigError(f"multinomial_logistic_loss: mask shape must be {(n, h, w)}")
    else:
        m = np.ones((n, h, w), dtype=bool)
    count = int(m.sum())
    if count == 0:
        raise EvaluationError("multinomial_logistic_loss: validity mask is empty")
    valid_labels = lab[m]
    if valid_labels.size and (valid_labels.min() < 0 or valid_labels.max() >= k):
        raise DataError(
            f"multinomial_logistic_loss: labels outside [0, {k - 1}] on valid pixels"
        )
    select = np.zeros((n, k, h, w), dtype=logits.data.dtype)
    ni, hi, wi = np.nonzero(m)
    select[ni, lab[ni, hi, wi], hi, wi] = 1.0
    logp = T.log_softmax_channels(logits)
    return T.mul(T.neg(T.tsum(T.mul(logp, astensor(select)))), 1.0 / count)


def combined_loss(pred_depth: Tensor, logits: Tensor, truth, mask,
                  weights: LossWeights, spec: DiscretizationSpec):
    """alpha * L1 + beta * SSIM-loss + gamma * logistic; returns (total, parts).

    ``parts`` holds the three weighted term values as floats; their sum in
    listed order equals the total exactly. Terms with zero weight are
    skipped entirely.
    """
    truth = np.asarray(truth)
    zero = astensor(np.zeros((), dtype=pred_depth.data.dtype))

    if weights.alpha > 0:
        depth_term = T.mul(l1_depth_loss(pred_depth, truth, mask), weights.alpha)
    else:
        depth_term = zero
    if weights.beta > 0:
        ssim_term = T.mul(ssim_loss(pred_depth, truth, weights, mask), weights.beta)
    else:
        ssim_term = zero
    if weights.gamma > 0:
        labels = discretize_depth(truth[:, 0], spec, None if mask is None else np.asarray(mask)[:, 0])
        logistic_term = T.mul(multinomial_logistic_loss(logits, labels, mask), weights.gamma)
    else:
        logistic_term = zero

    total = T.add(T.add(depth_term, ssim_term), logistic_term)
    parts = {
        "depth": float(depth_term.data),
        "ssim": float(ssim_term.data),
        "logistic": float(logistic_term.data),
    }
    return total, parts
