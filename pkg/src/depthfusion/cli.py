"""Command-line entry point.

Subcommands: synth (generate a synthetic dataset), train, eval, predict,
gradcheck. stdout carries machine-readable JSON only; human-readable logs
go to stderr. Exit codes: 0 success, 2 configuration error, 3 data/format
error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import data, gradcheck, tensor, trainer
from .config import load_run_config, parse_run_config
from .errors import ConfigError, DataError, NumericalError
from .network import FusionDepthNet
from .tensor import Tensor

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# synth


def _parse_size(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise ConfigError(f"--size must look like 32x32, got {text!r}") from None


def _parse_fractions(text: str) -> tuple[float, float, float]:
    try:
        parts = [float(p) for p in text.split(":")]
    except ValueError:
        raise ConfigError(f"--splits must look like 0.8:0.1:0.1, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise ConfigError(f"--splits needs three non-negative fractions, got {text!r}")
    return tuple(parts)


def cmd_synth(args) -> int:
    h, w = _parse_size(args.size)
    lo, hi = (float(x) for x in args.depth_range.split(":"))
    spec = data.SyntheticSceneSpec(height=h, width=w, d_min=lo, d_max=hi,
                                   primitives=args.primitives, noise=args.noise,
                                   seed=args.seed)
    fr = _parse_fractions(args.splits)
    total = args.count
    n_train = int(round(total * fr[0] / sum(fr)))
    n_val = int(round(total * fr[1] / sum(fr)))
    n_test = total - n_train - n_val
    counts = {"train": n_train, "val": n_val, "test": n_test}
    out = Path(args.out)
    try:
        data.generate_synthetic(spec, counts, out)
    except OSError as e:
        raise DataError(f"synth: cannot write to {out}: {e}") from None
    _log(f"wrote {total} scenes to {out}")
    _emit({"out": str(out), "manifest": str(out / "manifest.csv"), "counts": counts})
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    fingerprint = run.fingerprint()
    manifest = data.load_manifest(args.data)
    train_samples = data.load_samples(manifest, "train")
    if not train_samples:
        raise DataError(f"train: manifest {args.data} has no train samples")
    eval_samples = data.load_samples(manifest, "val") or data.load_samples(manifest, "test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    resume = None
    if args.resume:
        resume = trainer.load_checkpoint(args.resume)
        if resume.fingerprint != fingerprint:
            raise ConfigError(
                f"train: checkpoint fingerprint {resume.fingerprint} does not match "
                f"config fingerprint {fingerprint}"
            )

    result = trainer.train(run.train, run.optimizer, run.network, train_samples,
                           eval_samples=eval_samples, out_dir=out, resume=resume,
                           fingerprint=fingerprint, log=_log)
    (out / "config.json").write_text(run.canonical_json(), encoding="utf-8")
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as f:
        for iteration, report in result.eval_reports:
            f.write(json.dumps({"iteration": iteration, **report.to_json_dict()},
                               sort_keys=True) + "\n")
    _emit({
        "checkpoint": str(out / "checkpoint.dfck"),
        "history": str(out / "history.csv"),
        "config": str(out / "config.json"),
        "iterations": run.train.iterations,
        "final_loss": result.history[-1].total if result.history else None,
        "fingerprint": fingerprint,
    })
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval / predict helpers


def _load_checkpoint_and_config(ckpt_path: str, config_path: str | None):
    ckpt = trainer.load_checkpoint(ckpt_path)
    cfg_path = Path(config_path) if config_path else Path(ckpt_path).parent / "config.json"
    run = load_run_config(cfg_path)
    fingerprint = run.fingerprint()
    if ckpt.fingerprint != fingerprint:
        raise ConfigError(
            f"checkpoint fingerprint {ckpt.fingerprint} does not match config "
            f"fingerprint {fingerprint} ({cfg_path})"
        )
    return ckpt, run


def cmd_eval(args) -> int:
    ckpt, run = _load_checkpoint_and_config(args.checkpoint, args.config)
    manifest = data.load_manifest(args.data)
    samples = data.load_samples(manifest, args.split)
    if not samples:
        raise DataError(f"eval: manifest {args.data} has no {args.split} samples")
    net = FusionDepthNet(run.network)
    from .network import Parameters
    params = Parameters.from_state_dict(ckpt.params)
    report = trainer.evaluate_model(net, params, samples, run.augment,
                                    cap=args.cap, oracle=args.oracle)
    _emit(report.to_json_dict())
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt, run = _load_checkpoint_and_config(args.checkpoint, args.config)
    image = data.read_ppm(args.image)
    factor = run.network.downsample_factor
    _, h, w = image.shape
    if h % factor or w % factor:
        raise ConfigError(
            f"predict: image size {h}x{w} must be a multiple of {factor}"
        )
    net = FusionDepthNet(run.network)
    from .network import Parameters
    params = Parameters.from_state_dict(ckpt.params)
    normalized = aug.normalize(image, run.augment.mean, run.augment.std)
    depth_t, _ = net.forward(params, Tensor(normalized[None].astype(np.float32)))
    depth = depth_t.data[0, 0]
    data.write_depth(args.out, depth)
    result = {"out": str(args.out), "height": int(depth.shape[0]), "width": int(depth.shape[1]),
              "depth_min": float(depth.min()), "depth_max": float(depth.max())}
    if args.png_vis:
        _write_vis_png(args.png_vis, depth)
        result["vis"] = str(args.png_vis)
    _emit(result)
    return EXIT_OK


def _write_vis_png(path, depth: np.ndarray) -> None:
    """False-colour rendering: nearest pixel blue, farthest red."""
    from PIL import Image

    lo, hi = float(depth.min()), float(depth.max())
    t = np.zeros_like(depth) if hi <= lo else (depth - lo) / (hi - lo)
    near = np.array([40.0, 60.0, 230.0])
    far = np.array([230.0, 50.0, 30.0])
    rgb = near[None, None] + t[:, :, None] * (far - near)[None, None]
    Image.fromarray(np.rint(rgb).astype(np.uint8), mode="RGB").save(path)


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    if args.inject_fault:
        tensor.set_fault_target(args.inject_fault)
    try:
        results = gradcheck.run_suite(tolerance=args.tolerance, seed=args.seed,
                                      instances=args.instances)
    finally:
        tensor.set_fault_target(None)
    rows = [{"op": r.name, "max_rel_error": r.max_rel_error,
             "tolerance": r.tolerance, "passed": r.passed} for r in results]
    width = max(len(r.name) for r in results)
    for r in results:
        _log(f"{r.name:<{width}}  {r.max_rel_error:12.3e}  "
             f"{'PASS' if r.passed else 'FAIL'}")
    _emit(rows)
    if any(not r.passed for r in results):
        failed = ", ".join(r.name for r in results if not r.passed)
        raise NumericalError(f"gradient check failed for: {failed}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthfusion",
        description="Monocular depth estimation toolkit (training, evaluation, prediction).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--count", type=int, required=True, help="total number of scenes")
    p.add_argument("--size", default="32x32", help="scene size HxW (default 32x32)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-range", default="2.0:8.0", help="d_min:d_max in meters")
    p.add_argument("--primitives", type=int, default=5)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--splits", default="0.8:0.1:0.1", help="train:val:test fractions")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a network from a JSON config")
    p.add_argument("--config", required=True, help="run-config JSON file")
    p.add_argument("--data", required=True, help="dataset manifest.csv")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, print a metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset manifest.csv")
    p.add_argument("--cap", type=float, default=None, help="drop pixels with truth > cap meters")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--config", help="config JSON (default: config.json next to checkpoint)")
    p.add_argument("--oracle", action="store_true",
                   help="debug: echo ground truth instead of running the network")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict a depth map for one PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="input PPM (P6)")
    p.add_argument("--out", required=True, help="output DPTH path")
    p.add_argument("--png-vis", help="optional false-colour PNG (blue near, red far)")
    p.add_argument("--config", help="config JSON (default: config.json next to checkpoint)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check of all primitives")
    p.add_argument("--tolerance", type=float, default=gradcheck.DEFAULT_TOLERANCE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--inject-fault", help="debug: corrupt the named op's backward")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        _log(f"data error: {e}")
        return EXIT_DATA
    except NumericalError as e:
        _log(f"numerical failure: {e}")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
