"""The depth network: a small residual encoder, a multi-kernel fusion block
and a dilated fusion block (each repeated), a skip-connected decoder, and
two heads (positive depth map + K-way bin logits).

Layout per block repeat: parallel branch convolutions on the same input,
channel concat (or elementwise sum when the concat switch is off), ReLU,
then a 1x1 projection back to the block width so repeats compose. The
dilation switch forces every branch rate to 1 without touching parameter
shapes, so parameter count is invariant to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import ConvSpec, Tensor

__all__ = [
    "MultiScaleBlockConfig",
    "DilatedBlockConfig",
    "NetworkConfig",
    "Parameters",
    "FusionDepthNet",
    "build_network",
    "multi_scale_block",
    "dilated_block",
    "receptive_field",
    "receptive_field_of_layers",
    "LayerGeometry",
]

DEPTH_FLOOR = 1e-6  # keeps the depth head strictly positive even when softplus underflows


@dataclass(frozen=True)
class MultiScaleBlockConfig:
    kernel_sizes: tuple[int, ...] = (1, 3, 5, 7)
    branch_channels: int = 16
    repeats: int = 4
    concat: bool = True

    def __post_init__(self):
        if not self.kernel_sizes:
            raise ConfigError("MultiScaleBlockConfig: need at least one kernel size")
        for k in self.kernel_sizes:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"MultiScaleBlockConfig: kernel size {k} must be odd")
        if self.branch_channels < 1:
            raise ConfigError("MultiScaleBlockConfig: branch_channels must be positive")
        if self.repeats < 1:
            raise ConfigError("MultiScaleBlockConfig: repeats must be positive")

    @property
    def merged_channels(self) -> int:
        return self.branch_channels * (len(self.kernel_sizes) if self.concat else 1)


@dataclass(frozen=True)
class DilatedBlockConfig:
    rates: tuple[int, ...] = (1, 2, 4)
    kernel_size: int = 3
    branch_channels: int = 16
    repeats: int = 4
    dilation: bool = True

    def __post_init__(self):
        if not self.rates:
            raise ConfigError("DilatedBlockConfig: need at least one dilation rate")
        for r in self.rates:
            if r < 1:
                raise ConfigError(f"DilatedBlockConfig: rate {r} must be positive")
        if list(self.rates).count(1) != 1:
            raise ConfigError("DilatedBlockConfig: exactly one rate-1 (plain) branch required")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"DilatedBlockConfig: kernel size {self.kernel_size} must be odd")
        if self.branch_channels < 1:
            raise ConfigError("DilatedBlockConfig: branch_channels must be positive")
        if self.repeats < 1:
            raise ConfigError("DilatedBlockConfig: repeats must be positive")

    def effective_rates(self) -> tuple[int, ...]:
        return self.rates if self.dilation else tuple(1 for _ in self.rates)

    def merged_channels(self, concat: bool) -> int:
        return self.branch_channels * (len(self.rates) if concat else 1)


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 64)
    units_per_stage: int = 2
    multi_scale: MultiScaleBlockConfig = field(default_factory=MultiScaleBlockConfig)
    dilated: DilatedBlockConfig = field(default_factory=DilatedBlockConfig)
    skip_connections: bool = True
    num_bins: int = 32

    def __post_init__(self):
        if self.in_channels < 1:
            raise ConfigError("NetworkConfig: in_channels must be positive")
        if not self.widths or any(w < 1 for w in self.widths):
            raise ConfigError(f"NetworkConfig: widths {self.widths} must be positive")
        if self.units_per_stage < 1:
            raise ConfigError("NetworkConfig: units_per_stage must be positive")
        if self.num_bins < 2:
            raise ConfigError("NetworkConfig: num_bins must be >= 2")

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.widths)


class Parameters:
    """Named weight/bias tensors keyed by a stable hierarchical path."""

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, tensor: Tensor) -> None:
        if name in self._tensors:
            raise ConfigError(f"Parameters: duplicate name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def count(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    @classmethod
    def from_state_dict(cls, state: dict[str, np.ndarray]) -> "Parameters":
        params = cls()
        for name, arr in state.items():
            params.add(name, Tensor(np.asarray(arr, dtype=np.float32)))
        return params


def _conv_spec(k: int, stride: int = 1, dilation: int = 1) -> ConvSpec:
    return ConvSpec(k, k, stride=stride, padding=dilation * (k - 1) // 2, dilation=dilation)


class _Init:
    """He fan-in initialization, one deterministic stream in definition order."""

    def __init__(self, params: Parameters, rng: np.random.Generator, dtype):
        self.params = params
        self.rng = rng
        self.dtype = dtype

    def conv(self, name: str, c_out: int, c_in: int, k: int, bias_value: float = 0.0,
             zero_weights: bool = False) -> None:
        fan_in = c_in * k * k
        if zero_weights:
            w = np.zeros((c_out, c_in, k, k))
        else:
            w = self.rng.standard_normal((c_out, c_in, k, k)) * math.sqrt(2.0 / fan_in)
        self.params.add(f"{name}.weight", Tensor(w.astype(self.dtype)))
        b = np.full((c_out,), bias_value, dtype=self.dtype)
        self.params.add(f"{name}.bias", Tensor(b))


def _apply_conv(x: Tensor, params: Parameters, name: str, spec: ConvSpec) -> Tensor:
    return T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], spec)


def _merge(branches: list[Tensor], concat: bool) -> Tensor:
    if concat:
        return T.concat_channels(branches)
    merged = branches[0]
    for b in branches[1:]:
        merged = T.add(merged, b)
    return merged


def multi_scale_block(x: Tensor, cfg: MultiScaleBlockConfig, params: Parameters,
                      prefix: str = "ms") -> Tensor:
    """Parallel 1/3/5/7-style branches, merge, ReLU, 1x1 projection; repeated."""
    for r in range(1, cfg.repeats + 1):
        branches = [
            _apply_conv(x, params, f"{prefix}{r}.k{k}", _conv_spec(k))
            for k in cfg.kernel_sizes
        ]
        merged = T.relu(_merge(branches, cfg.concat))
        x = T.relu(_apply_conv(merged, params, f"{prefix}{r}.proj", _conv_spec(1)))
    return x


def dilated_block(x: Tensor, cfg: DilatedBlockConfig, params: Parameters,
                  prefix: str = "dil", concat: bool = True) -> Tensor:
    """Plain + dilated branches at the configured rates, merged like the
    multi-scale block (the concat ablation switch governs both blocks).

    Branch parameter shapes never depend on the rates, so toggling dilation
    leaves the parameter count unchanged.
    """
    rates = cfg.effective_rates()
    for r in range(1, cfg.repeats + 1):
        branches = [
            _apply_conv(x, params, f"{prefix}{r}.d{cfg.rates[i]}",
                        _conv_spec(cfg.kernel_size, dilation=rates[i]))
            for i in range(len(rates))
        ]
        merged = T.relu(_merge(branches, concat))
        x = T.relu(_apply_conv(merged, params, f"{prefix}{r}.proj", _conv_spec(1)))
    return x


@dataclass(frozen=True)
class LayerGeometry:
    """Receptive-field bookkeeping for one layer along the main path."""

    name: str
    kernel: int = 1
    dilation: int = 1
    stride: Fraction = Fraction(1)


def receptive_field_of_layers(layers: list[LayerGeometry]) -> float:
    """Compose per-layer extents: rf += (effective_kernel - 1) * jump."""
    rf = Fraction(1)
    jump = Fraction(1)
    for layer in layers:
        eff = layer.kernel + (layer.kernel - 1) * (layer.dilation - 1)
        rf += (eff - 1) * jump
        jump *= layer.stride
    return float(rf)


class FusionDepthNet:
    """Builds and runs the full architecture from a NetworkConfig."""

    def __init__(self, config: NetworkConfig):
        self.config = config

    # -- parameters --------------------------------------------------------

    def init_params(self, seed: int, dtype=np.float32) -> Parameters:
        cfg = self.config
        params = Parameters()
        init = _Init(params, np.random.default_rng(np.random.SeedSequence([seed])), dtype)

        init.conv("stem", cfg.widths[0], cfg.in_channels, 3)
        prev = cfg.widths[0]
        for s, width in enumerate(cfg.widths, start=1):
            init.conv(f"enc{s}.down", width, prev, 3)
            for u in range(1, cfg.units_per_stage + 1):
                init.conv(f"enc{s}.u{u}.c1", width, width, 3)
                init.conv(f"enc{s}.u{u}.c2", width, width, 3)
            prev = width

        ms = cfg.multi_scale
        for r in range(1, ms.repeats + 1):
            for k in ms.kernel_sizes:
                init.conv(f"ms{r}.k{k}", ms.branch_channels, prev, k)
            init.conv(f"ms{r}.proj", prev, ms.merged_channels, 1)

        dil = cfg.dilated
        for r in range(1, dil.repeats + 1):
            for rate in dil.rates:
                init.conv(f"dil{r}.d{rate}", dil.branch_channels, prev, dil.kernel_size)
            init.conv(f"dil{r}.proj", prev, dil.merged_channels(ms.concat), 1)

        for i, (c_in, c_out) in enumerate(self._decoder_widths(), start=1):
            init.conv(f"dec{i}.conv", c_out, c_in, 3)

        head_in = cfg.widths[0]
        init.conv("head.depth", 1, head_in, 1)
        # classification head starts at the uniform posterior
        init.conv("head.bins", cfg.num_bins, head_in, 1, zero_weights=True)
        return params

    def _decoder_widths(self) -> list[tuple[int, int]]:
        """(in_channels, out_channels) per decoder stage, shallow skips included."""
        cfg = self.config
        stages = len(cfg.widths)
        # skip source at each decoder stage, deepest first: enc[n-1], ..., enc1, stem
        skip_widths = list(cfg.widths[-2::-1]) + [cfg.widths[0]]
        out_widths = list(cfg.widths[-2::-1]) + [cfg.widths[0]]
        widths = []
        prev = cfg.widths[-1]
        for i in range(stages):
            c_in = prev + (skip_widths[i] if cfg.skip_connections else 0)
            widths.append((c_in, out_widths[i]))
            prev = out_widths[i]
        return widths

    # -- forward ------------------------------------------------------------

    def forward(self, params: Parameters, image: Tensor) -> tuple[Tensor, Tensor]:
        """Image N x C x H x W -> (depth N x 1 x H x W, logits N x K x H x W)."""
        cfg = self.config
        if image.data.ndim != 4 or image.data.shape[1] != cfg.in_channels:
            raise ConfigError(
                f"forward: expected N x {cfg.in_channels} x H x W input, got {image.data.shape}"
            )
        _, _, h, w = image.data.shape
        factor = cfg.downsample_factor
        if h % factor or w % factor:
            raise ConfigError(
                f"forward: input size {h}x{w} must be a multiple of {factor} "
                f"(backbone downsample factor)"
            )

        x = T.relu(_apply_conv(image, params, "stem", _conv_spec(3)))
        skips = [x]
        for s in range(1, len(cfg.widths) + 1):
            x = T.relu(_apply_conv(x, params, f"enc{s}.down", _conv_spec(3, stride=2)))
            for u in range(1, cfg.units_per_stage + 1):
                y = T.relu(_apply_conv(x, params, f"enc{s}.u{u}.c1", _conv_spec(3)))
                y = _apply_conv(y, params, f"enc{s}.u{u}.c2", _conv_spec(3))
                x = T.relu(T.add(x, y))
            skips.append(x)

        x = multi_scale_block(x, cfg.multi_scale, params, "ms")
        x = dilated_block(x, cfg.dilated, params, "dil", concat=cfg.multi_scale.concat)

        for i in range(1, len(cfg.widths) + 1):
            x = T.upsample_bilinear(x, 2)
            if cfg.skip_connections:
                x = T.concat_channels([x, skips[len(cfg.widths) - i]])
            x = T.relu(_apply_conv(x, params, f"dec{i}.conv", _conv_spec(3)))

        depth = T.add(T.softplus(_apply_conv(x, params, "head.depth", _conv_spec(1))),
                      DEPTH_FLOOR)
        logits = _apply_conv(x, params, "head.bins", _conv_spec(1))
        return depth, logits

    # -- analysis -----------------------------------------------------------

    def layer_geometry(self) -> list[LayerGeometry]:
        """Main-path layer sequence used for the analytic receptive field.

        Parallel branches contribute the widest branch; the residual unit's
        convs both lie on the path.
        """
        cfg = self.config
        layers = [LayerGeometry("stem", 3)]
        for s in range(1, len(cfg.widths) + 1):
            layers.append(LayerGeometry(f"enc{s}.down", 3, stride=Fraction(2)))
            for u in range(1, cfg.units_per_stage + 1):
                layers.append(LayerGeometry(f"enc{s}.u{u}.c1", 3))
                layers.append(LayerGeometry(f"enc{s}.u{u}.c2", 3))
        widest = max(cfg.multi_scale.kernel_sizes)
        for r in range(1, cfg.multi_scale.repeats + 1):
            layers.append(LayerGeometry(f"ms{r}", widest))
            layers.append(LayerGeometry(f"ms{r}.proj", 1))
        max_rate = max(cfg.dilated.effective_rates())
        for r in range(1, cfg.dilated.repeats + 1):
            layers.append(LayerGeometry(f"dil{r}", cfg.dilated.kernel_size, dilation=max_rate))
            layers.append(LayerGeometry(f"dil{r}.proj", 1))
        for i in range(1, len(cfg.widths) + 1):
            layers.append(LayerGeometry(f"dec{i}.up", 2, stride=Fraction(1, 2)))
            layers.append(LayerGeometry(f"dec{i}.conv", 3))
        layers.append(LayerGeometry("head", 1))
        return layers


def build_network(config: NetworkConfig, seed: int):
    """Deterministically initialized parameters plus a pure forward function."""
    net = FusionDepthNet(config)
    params = net.init_params(seed)
    return params, net.forward


def receptive_field(config: NetworkConfig) -> float:
    """Analytic per-output-pixel receptive-field extent in input pixels."""
    return receptive_field_of_layers(FusionDepthNet(config).layer_geometry())


def ablation_config(base: NetworkConfig, dilation: bool, concat: bool) -> NetworkConfig:
    """Flip the two architecture switches, leaving everything else alone."""
    return replace(base,
                   multi_scale=replace(base.multi_scale, concat=concat),
                   dilated=replace(base.dilated, dilation=dilation))
