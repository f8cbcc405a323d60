"""Run configuration: one JSON document covering network, loss,
discretization, optimizer, training, and augmentation settings.

Every omitted key falls back to its default; unknown keys are rejected with
the offending path. ``canonical_json`` re-emits the parsed config with
sorted keys, and its SHA-256 is the fingerprint stored in checkpoints.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentSpec
from .errors import ConfigError
from .losses import DiscretizationSpec, LossWeights
from .network import DilatedBlockConfig, MultiScaleBlockConfig, NetworkConfig
from .trainer import OptimizerConfig, TrainConfig

__all__ = ["RunConfig", "parse_run_config", "load_run_config", "default_config_dict"]


def default_config_dict() -> dict:
    return {
        "network": {
            "in_channels": 3,
            "widths": [16, 32, 64],
            "units_per_stage": 2,
            "skip_connections": True,
            "multi_scale": {
                "kernel_sizes": [1, 3, 5, 7],
                "branch_channels": 16,
                "repeats": 4,
                "concat": True,
            },
            "dilated": {
                "rates": [1, 2, 4],
                "kernel_size": 3,
                "branch_channels": 16,
                "repeats": 4,
                "dilation": True,
            },
        },
        "discretization": {"bins": 32, "d_min": 2.0, "d_max": 8.0},
        "loss": {
            "alpha": 1.0,
            "beta": 1.0,
            "gamma": 0.1,
            "ssim_window": 7,
            "ssim_c1": None,   # null: derived as (0.01 * d_max)^2
            "ssim_c2": None,   # null: derived as (0.03 * d_max)^2
        },
        "optimizer": {
            "kind": "adam",
            "lr": 1e-4,
            "momentum": 0.9,
            "beta2": 0.999,
            "eps": 1e-8,
            "weight_decay": 4e-4,
            "batch_size": 8,
        },
        "train": {
            "iterations": 2000,
            "eval_interval": 500,
            "checkpoint_interval": 0,
            "seed": 0,
        },
        "augment": {
            "seed": 0,
            "scale": [1.0, 1.5],
            "rotation_deg": [-5.0, 5.0],
            "jitter": [0.6, 1.4],
            "flip_prob": 0.5,
            "mean": [0.5, 0.5, 0.5],
            "std": [0.5, 0.5, 0.5],
        },
    }


def _merge_strict(defaults: dict, given: dict, path: str) -> dict:
    merged = dict(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise ConfigError(f"config: unknown key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config: {path}{key} must be an object")
            merged[key] = _merge_strict(defaults[key], value, f"{path}{key}.")
        else:
            merged[key] = value
    return merged


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config: {path} must be a number, got {value!r}")
    return float(value)


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"config: {path} must be an integer, got {value!r}")
    return value


def _bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"config: {path} must be a boolean, got {value!r}")
    return value


def _pair(value, path: str) -> tuple[float, float]:
    if (not isinstance(value, list) or len(value) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in value)):
        raise ConfigError(f"config: {path} must be a [lo, hi] number pair, got {value!r}")
    return (float(value[0]), float(value[1]))


def _triple(value, path: str) -> tuple[float, float, float]:
    if (not isinstance(value, list) or len(value) != 3
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in value)):
        raise ConfigError(f"config: {path} must be a 3-number list, got {value!r}")
    return tuple(float(x) for x in value)


def _int_list(value, path: str) -> tuple[int, ...]:
    if (not isinstance(value, list) or not value
            or any(isinstance(x, bool) or not isinstance(x, int) for x in value)):
        raise ConfigError(f"config: {path} must be a non-empty list of integers, got {value!r}")
    return tuple(value)


@dataclass(frozen=True)
class RunConfig:
    network: NetworkConfig
    discretization: DiscretizationSpec
    loss: LossWeights
    optimizer: OptimizerConfig
    train: TrainConfig
    augment: AugmentSpec
    document: dict  # merged JSON document, defaults materialized

    def canonical_json(self) -> str:
        return json.dumps(self.document, sort_keys=True, indent=2) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


def parse_run_config(given: dict) -> RunConfig:
    if not isinstance(given, dict):
        raise ConfigError("config: top level must be a JSON object")
    doc = _merge_strict(default_config_dict(), given, "")

    net = doc["network"]
    ms = net["multi_scale"]
    dil = net["dilated"]
    multi_scale = MultiScaleBlockConfig(
        kernel_sizes=_int_list(ms["kernel_sizes"], "network.multi_scale.kernel_sizes"),
        branch_channels=_int(ms["branch_channels"], "network.multi_scale.branch_channels"),
        repeats=_int(ms["repeats"], "network.multi_scale.repeats"),
        concat=_bool(ms["concat"], "network.multi_scale.concat"),
    )
    dilated = DilatedBlockConfig(
        rates=_int_list(dil["rates"], "network.dilated.rates"),
        kernel_size=_int(dil["kernel_size"], "network.dilated.kernel_size"),
        branch_channels=_int(dil["branch_channels"], "network.dilated.branch_channels"),
        repeats=_int(dil["repeats"], "network.dilated.repeats"),
        dilation=_bool(dil["dilation"], "network.dilated.dilation"),
    )
    disc = doc["discretization"]
    discretization = DiscretizationSpec(
        bins=_int(disc["bins"], "discretization.bins"),
        d_min=_num(disc["d_min"], "discretization.d_min"),
        d_max=_num(disc["d_max"], "discretization.d_max"),
    )
    network = NetworkConfig(
        in_channels=_int(net["in_channels"], "network.in_channels"),
        widths=_int_list(net["widths"], "network.widths"),
        units_per_stage=_int(net["units_per_stage"], "network.units_per_stage"),
        multi_scale=multi_scale,
        dilated=dilated,
        skip_connections=_bool(net["skip_connections"], "network.skip_connections"),
        num_bins=discretization.bins,
    )

    ld = doc["loss"]
    c1 = ld["ssim_c1"]
    c2 = ld["ssim_c2"]
    if c1 is None:
        c1 = (0.01 * discretization.d_max) ** 2
    if c2 is None:
        c2 = (0.03 * discretization.d_max) ** 2
    loss = LossWeights(
        alpha=_num(ld["alpha"], "loss.alpha"),
        beta=_num(ld["beta"], "loss.beta"),
        gamma=_num(ld["gamma"], "loss.gamma"),
        ssim_window=_int(ld["ssim_window"], "loss.ssim_window"),
        c1=_num(c1, "loss.ssim_c1"),
        c2=_num(c2, "loss.ssim_c2"),
    )
    od = doc["optimizer"]
    optimizer = OptimizerConfig(
        kind=od["kind"],
        lr=_num(od["lr"], "optimizer.lr"),
        momentum=_num(od["momentum"], "optimizer.momentum"),
        beta2=_num(od["beta2"], "optimizer.beta2"),
        eps=_num(od["eps"], "optimizer.eps"),
        weight_decay=_num(od["weight_decay"], "optimizer.weight_decay"),
        batch_size=_int(od["batch_size"], "optimizer.batch_size"),
    )
    ad = doc["augment"]
    augment_spec = AugmentSpec(
        scale_range=_pair(ad["scale"], "augment.scale"),
        rotation_deg=_pair(ad["rotation_deg"], "augment.rotation_deg"),
        jitter_range=_pair(ad["jitter"], "augment.jitter"),
        flip_prob=_num(ad["flip_prob"], "augment.flip_prob"),
        mean=_triple(ad["mean"], "augment.mean"),
        std=_triple(ad["std"], "augment.std"),
        seed=_int(ad["seed"], "augment.seed"),
    )
    td = doc["train"]
    train_cfg = TrainConfig(
        iterations=_int(td["iterations"], "train.iterations"),
        eval_interval=_int(td["eval_interval"], "train.eval_interval"),
        checkpoint_interval=_int(td["checkpoint_interval"], "train.checkpoint_interval"),
        seed=_int(td["seed"], "train.seed"),
        loss=loss,
        discretization=discretization,
        augment=augment_spec,
    )
    return RunConfig(network=network, discretization=discretization, loss=loss,
                     optimizer=optimizer, train=train_cfg, augment=augment_spec,
                     document=doc)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        given = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path}: invalid JSON: {e}") from None
    return parse_run_config(given)
