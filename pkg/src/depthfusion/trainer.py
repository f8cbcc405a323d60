"""Optimizers, the training loop, checkpointing, and in-training evaluation.

Both ADAM (default) and SGD with momentum are provided; weight decay is
decoupled, applied straight to the parameters before the gradient step so
ADAM's adaptive scaling never sees it.

Determinism: batch sampling and augmentation draws are counter-based, a
fresh generator keyed by (seed, stream, iteration[, slot]) per use, so a
resumed run replays the identical stream with no mutable RNG state. For a
fixed thread count, resuming from a checkpoint reproduces the unbroken run
bit for bit.

Checkpoint file (magic ``DFCK``, version 1, little-endian):
  magic, u32 version, length-prefixed config fingerprint,
  named-tensor section for parameters, same section for optimizer state,
  u64 iteration counter, length-prefixed JSON RNG-state blob.
A named-tensor section is ``u32 count`` then per tensor: u32 name length,
name bytes, u32 ndim, u32 dims, float32 row-major data.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import augment as aug
from . import losses, metrics
from .data import Sample
from .errors import ConfigError, FormatError, NumericalError
from .losses import DiscretizationSpec, LossWeights
from .network import FusionDepthNet, NetworkConfig, Parameters
from .tensor import Tape, Tensor

__all__ = [
    "OptimizerConfig",
    "TrainConfig",
    "Checkpoint",
    "Adam",
    "SGDMomentum",
    "make_optimizer",
    "train",
    "TrainResult",
    "evaluate_model",
    "save_checkpoint",
    "load_checkpoint",
    "write_history_csv",
]

CHECKPOINT_MAGIC = b"DFCK"
CHECKPOINT_VERSION = 1

# counter-based RNG stream tags
_STREAM_BATCH = 0xBA7C
_STREAM_AUGMENT = 0xA06


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9          # ADAM beta1 doubles as SGD momentum
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 4e-4
    batch_size: int = 8

    def __post_init__(self):
        if self.kind not in ("adam", "sgd_momentum"):
            raise ConfigError(f"OptimizerConfig: unknown kind {self.kind!r}")
        if self.lr <= 0:
            raise ConfigError("OptimizerConfig: learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("OptimizerConfig: momentum must be in [0, 1)")
        if not (0.0 <= self.beta2 < 1.0):
            raise ConfigError("OptimizerConfig: beta2 must be in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("OptimizerConfig: eps must be > 0 and weight_decay >= 0")
        if self.batch_size < 1:
            raise ConfigError("OptimizerConfig: batch size must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    eval_interval: int = 0       # 0 disables in-training evaluation
    checkpoint_interval: int = 0
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    discretization: DiscretizationSpec = field(default_factory=DiscretizationSpec)
    augment: aug.AugmentSpec = field(default_factory=aug.AugmentSpec)

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError("TrainConfig: iteration budget must be >= 1")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ConfigError("TrainConfig: intervals must be >= 0")


class Adam:
    """Bias-corrected ADAM with decoupled weight decay."""

    kind = "adam"

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Parameters, step_index: int) -> None:
        """Apply one update from ``param.grad``; ``step_index`` is 0-based."""
        cfg = self.config
        t = step_index + 1
        bc1 = 1.0 - cfg.momentum ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            theta = p.data
            if cfg.weight_decay:
                theta = theta - cfg.lr * cfg.weight_decay * theta
            self.m[name] = cfg.momentum * self.m[name] + (1.0 - cfg.momentum) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.m = {k[2:]: np.asarray(v) for k, v in state.items() if k.startswith("m.")}
        self.v = {k[2:]: np.asarray(v) for k, v in state.items() if k.startswith("v.")}


class SGDMomentum:
    """v <- mu v + g; theta <- theta - lr v - lr wd theta."""

    kind = "sgd_momentum"

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: Parameters, step_index: int) -> None:
        cfg = self.config
        for name, p in params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if name not in self.velocity:
                self.velocity[name] = np.zeros_like(p.data)
            self.velocity[name] = cfg.momentum * self.velocity[name] + g
            p.data = p.data - cfg.lr * self.velocity[name] - cfg.lr * cfg.weight_decay * p.data

    def state_dict(self) -> dict[str, np.ndarray]:
        return {f"velocity.{k}": v for k, v in self.velocity.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.velocity = {k[len("velocity."):]: np.asarray(v)
                         for k, v in state.items() if k.startswith("velocity.")}


def make_optimizer(config: OptimizerConfig):
    return Adam(config) if config.kind == "adam" else SGDMomentum(config)


# ---------------------------------------------------------------------------
# checkpoint format


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    opt_state: dict[str, np.ndarray]
    iteration: int
    rng_state: dict
    fingerprint: str = ""


def _write_tensor_section(f, tensors: dict[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        blob = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def _read_tensor_section(f, path) -> dict[str, np.ndarray]:
    def need(n: int) -> bytes:
        buf = f.read(n)
        if len(buf) != n:
            raise FormatError(f"checkpoint {path}: truncated at byte {f.tell()}")
        return buf

    (count,) = struct.unpack("<I", need(4))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", need(4))
        name = need(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<I", need(4))
        shape = struct.unpack(f"<{ndim}I", need(4 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(need(4 * size), dtype="<f4").reshape(shape).copy()
        out[name] = data
    return out


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    fp = ckpt.fingerprint.encode("utf-8")
    buf.write(struct.pack("<I", len(fp)))
    buf.write(fp)
    _write_tensor_section(buf, ckpt.params)
    _write_tensor_section(buf, ckpt.opt_state)
    buf.write(struct.pack("<Q", ckpt.iteration))
    rng = json.dumps(ckpt.rng_state, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(rng)))
    buf.write(rng)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        def need(n: int) -> bytes:
            buf = f.read(n)
            if len(buf) != n:
                raise FormatError(f"checkpoint {path}: truncated at byte {f.tell()}")
            return buf

        magic = need(4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"checkpoint {path}: bad magic {magic!r} at byte 0")
        (version,) = struct.unpack("<I", need(4))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"checkpoint {path}: unsupported version {version}")
        (fp_len,) = struct.unpack("<I", need(4))
        fingerprint = need(fp_len).decode("utf-8")
        params = _read_tensor_section(f, path)
        opt_state = _read_tensor_section(f, path)
        (iteration,) = struct.unpack("<Q", need(8))
        (rng_len,) = struct.unpack("<I", need(4))
        rng_state = json.loads(need(rng_len).decode("utf-8"))
        if f.read(1):
            raise FormatError(f"checkpoint {path}: trailing bytes after byte {f.tell() - 1}")
    return Checkpoint(params=params, opt_state=opt_state, iteration=iteration,
                      rng_state=rng_state, fingerprint=fingerprint)


# ---------------------------------------------------------------------------
# training


@dataclass
class HistoryRow:
    iteration: int
    total: float
    l_depth: float
    l_ssim: float
    l_logistic: float


@dataclass
class TrainResult:
    params: Parameters
    checkpoint: Checkpoint
    history: list[HistoryRow]
    eval_reports: list[tuple[int, metrics.MetricsReport]]


def write_history_csv(path, history: list[HistoryRow]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("iteration,total,l_depth,l_ssim,l_logistic\n")
        for row in history:
            f.write(f"{row.iteration},{row.total!r},{row.l_depth!r},"
                    f"{row.l_ssim!r},{row.l_logistic!r}\n")


def _assemble_batch(samples: list[Sample], indices, train_cfg: TrainConfig, iteration: int):
    images, depths, masks = [], [], []
    for slot, idx in enumerate(indices):
        rng = np.random.default_rng(np.random.SeedSequence(
            [train_cfg.augment.seed, _STREAM_AUGMENT, iteration, slot]))
        s = aug.apply(samples[int(idx)], train_cfg.augment, rng)
        images.append(s.image)
        depths.append(s.depth[None])
        masks.append(s.mask[None])
    return (Tensor(np.stack(images)), np.stack(depths).astype(np.float32),
            np.stack(masks))


def forward_batch(net: FusionDepthNet, params: Parameters, samples: list[Sample],
                  spec: aug.AugmentSpec, batch_size: int = 8):
    """Normalized no-augmentation forward; yields (pred, truth, mask) arrays."""
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        images = np.stack([aug.normalize(s.image, spec.mean, spec.std) for s in chunk])
        depth, _ = net.forward(params, Tensor(images.astype(np.float32)))
        for j, s in enumerate(chunk):
            yield depth.data[j, 0], s.depth, s.mask


def evaluate_model(net: FusionDepthNet, params: Parameters, samples: list[Sample],
                   spec: aug.AugmentSpec, cap: Optional[float] = None,
                   batch_size: int = 8, oracle: bool = False) -> metrics.MetricsReport:
    """MetricsReport of the model on ``samples`` (normalization only).

    ``oracle`` bypasses the network and echoes ground truth; it exists to
    sanity-check the evaluation plumbing itself.
    """
    if oracle:
        pairs = (metrics.DepthPair(s.depth, s.depth, s.mask) for s in samples)
    else:
        pairs = (metrics.DepthPair(pred, truth, mask)
                 for pred, truth, mask in forward_batch(net, params, samples, spec, batch_size))
    return metrics.evaluate(pairs, cap=cap)


def train(train_cfg: TrainConfig, opt_cfg: OptimizerConfig, net_cfg: NetworkConfig,
          train_samples: list[Sample], eval_samples: Optional[list[Sample]] = None,
          out_dir=None, resume: Optional[Checkpoint] = None, fingerprint: str = "",
          log=None) -> TrainResult:
    """Run the training loop; deterministic for fixed seed and thread count.

    Per iteration: sample a batch with replacement, augment, forward,
    combined loss, backward, optimizer step. ``resume`` continues the
    counter-based streams from its stored iteration, reproducing the
    unbroken run exactly.
    """
    if not train_samples:
        raise ConfigError("train: empty training split")
    net = FusionDepthNet(net_cfg)
    opt = make_optimizer(opt_cfg)
    if resume is not None:
        if fingerprint and resume.fingerprint and resume.fingerprint != fingerprint:
            raise ConfigError(
                f"train: checkpoint fingerprint {resume.fingerprint} does not match "
                f"config fingerprint {fingerprint}"
            )
        params = Parameters.from_state_dict(resume.params)
        opt.load_state_dict(resume.opt_state)
        start = resume.iteration
        if start >= train_cfg.iterations:
            raise ConfigError(
                f"train: checkpoint is at iteration {start}, budget is {train_cfg.iterations}"
            )
    else:
        params = net.init_params(train_cfg.seed)
        start = 0

    history: list[HistoryRow] = []
    eval_reports: list[tuple[int, metrics.MetricsReport]] = []
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(iteration: int) -> Checkpoint:
        return Checkpoint(params=dict(params.state_dict()),
                          opt_state=opt.state_dict(),
                          iteration=iteration,
                          rng_state={"seed": train_cfg.seed,
                                     "augment_seed": train_cfg.augment.seed,
                                     "scheme": "counter"},
                          fingerprint=fingerprint)

    for t in range(start, train_cfg.iterations):
        batch_rng = np.random.default_rng(np.random.SeedSequence(
            [train_cfg.seed, _STREAM_BATCH, t]))
        indices = batch_rng.integers(0, len(train_samples), size=opt_cfg.batch_size)
        images, truth, mask = _assemble_batch(train_samples, indices, train_cfg, t)
        with Tape() as tape:
            pred_depth, logits = net.forward(params, images)
            total, parts = losses.combined_loss(
                pred_depth, logits, truth, mask, train_cfg.loss, train_cfg.discretization)
        value = float(total.data)
        if not math.isfinite(value):
            raise NumericalError(
                f"train: non-finite loss at iteration {t}: total={value}, "
                f"depth={parts['depth']}, ssim={parts['ssim']}, logistic={parts['logistic']}"
            )
        tape.backward(total)
        opt.step(params, t)
        history.append(HistoryRow(t, value, parts["depth"], parts["ssim"], parts["logistic"]))
        done = t + 1
        if log is not None and (done % 100 == 0 or done == train_cfg.iterations):
            log(f"iter {done}/{train_cfg.iterations} loss {value:.5f}")
        if (train_cfg.eval_interval and eval_samples
                and done % train_cfg.eval_interval == 0):
            report = evaluate_model(net, params, eval_samples, train_cfg.augment)
            eval_reports.append((done, report))
            if log is not None:
                log(f"iter {done}: eval rmse {report.rmse:.4f} delta1 {report.delta1:.4f}")
        if (train_cfg.checkpoint_interval and out_dir
                and done % train_cfg.checkpoint_interval == 0
                and done < train_cfg.iterations):
            save_checkpoint(out_dir / f"checkpoint_{done:06d}.dfck", snapshot(done))

    final = snapshot(train_cfg.iterations)
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.dfck", final)
        write_history_csv(out_dir / "history.csv", history)
    return TrainResult(params=params, checkpoint=final, history=history,
                       eval_reports=eval_reports)
