"""Acceptance criteria, one test per criterion, each printing a PASS line.

The desk-scale training runs (criteria 5 and 6) share one cached setup:
criterion 6's dilation+concat runs reuse criterion 5's result, so the whole
module performs 12 distinct 2000-iteration trainings at most.
"""

import statistics
import time
from fractions import Fraction

import numpy as np
import pytest

import desk
from depthfusion import augment, data, gradcheck, losses, metrics, trainer
from depthfusion import tensor as T
from depthfusion.augment import AugmentSpec
from depthfusion.data import Sample, SyntheticSceneSpec
from depthfusion.metrics import DepthPair
from depthfusion.network import (LayerGeometry, ablation_config, build_network,
                                 receptive_field, receptive_field_of_layers)
from depthfusion.tensor import ConvSpec, Tape, Tensor

from helpers import metric_oracles, ssim_constant_oracle


def _announce(number: int, name: str, detail: str) -> None:
    print(f"\nACCEPTANCE {number} ({name}): PASS - {detail}")


def test_criterion_1_gradient_suite():
    start = time.perf_counter()
    results = gradcheck.run_suite(tolerance=1e-5, seed=0, instances=20)
    elapsed = time.perf_counter() - start
    worst = max(results, key=lambda r: r.max_rel_error)
    for r in results:
        assert r.passed, f"{r.name}: max rel error {r.max_rel_error:.3e} >= 1e-5"
    assert elapsed < 120.0, f"gradient suite took {elapsed:.1f}s (budget 120s)"
    _announce(1, "gradient suite",
              f"{len(results)} ops x 20 instances, worst {worst.name} at "
              f"{worst.max_rel_error:.2e}, {elapsed:.1f}s")


def test_criterion_2_metric_oracles():
    rng_pairs = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        truth = rng.uniform(1.0, 10.0, (8, 8))
        pred = truth * rng.uniform(0.6, 1.6, (8, 8))
        rng_pairs.append(DepthPair(pred, truth))

    worst = 0.0
    for pair in rng_pairs:
        want = metric_oracles(pair.pred, pair.truth)
        got = {
            "rmse": metrics.rmse(pair),
            "rmse_log": metrics.rmse_log(pair),
            "silog": metrics.silog(pair),
            "abs_rel": metrics.abs_rel(pair),
            "sq_rel": metrics.sq_rel(pair),
        }
        d1, d2, d3 = metrics.threshold_accuracy(pair)
        got.update({"delta1": d1, "delta2": d2, "delta3": d3})
        got["rel"], got["log10"] = metrics.mean_rel_log10(pair)
        for name, value in got.items():
            err = abs(value - want[name])
            worst = max(worst, err)
            assert err <= 1e-12, f"{name}: |{value} - {want[name]}| = {err:.2e}"
        assert d1 <= d2 <= d3

    for pair in rng_pairs[:20]:
        base = metrics.silog(pair)
        for c in (0.1, 2.0, 10.0):
            scaled = metrics.silog(DepthPair(c * pair.pred, pair.truth))
            assert abs(scaled - base) <= 1e-9, f"silog scale drift {abs(scaled - base):.2e}"

    _announce(2, "metric oracle equivalence",
              f"100 pairs x 10 metrics within 1e-12 (worst {worst:.2e}); "
              f"SILog scale-invariant to 1e-9")


def test_criterion_3_architecture_invariants():
    # parameter count invariant under the dilation switch
    base = desk.reduced_network_config()
    for concat in (True, False):
        on, _ = build_network(ablation_config(base, dilation=True, concat=concat), seed=0)
        off, _ = build_network(ablation_config(base, dilation=False, concat=concat), seed=0)
        assert on.count() == off.count()

    # empirical impulse receptive field == analytic composition, <= 6 layers
    stacks = [
        [(3, 1, 1)],
        [(3, 1, 1), (3, 1, 1)],
        [(3, 2, 1), (3, 4, 1)],
        [(5, 1, 1), (3, 1, 2), (3, 1, 1)],
        [(1, 1, 1), (3, 2, 1), (5, 1, 1), (3, 1, 1)],
        [(3, 1, 1), (3, 1, 1), (3, 2, 1), (3, 1, 1), (1, 1, 1), (3, 4, 1)],
    ]
    rng = np.random.default_rng(0)
    for stack in stacks:
        layers = [LayerGeometry(f"c{i}", k, dilation=d, stride=Fraction(s))
                  for i, (k, d, s) in enumerate(stack)]
        analytic = receptive_field_of_layers(layers)
        size = int(4 * analytic + 9)
        size += (size + 1) % 2
        x = Tensor(rng.standard_normal((1, 1, size, size)), requires_grad=True)
        with Tape() as tape:
            h = x
            for (k, d, s) in stack:
                w = Tensor(np.abs(rng.standard_normal((1, 1, k, k))) + 0.1)
                h = T.conv2d(h, w, None,
                             ConvSpec(k, k, stride=s, padding=d * (k - 1) // 2, dilation=d))
            probe = np.zeros(h.data.shape)
            probe[0, 0, h.data.shape[2] // 2, h.data.shape[3] // 2] = 1.0
            loss = T.tsum(T.mul(h, T.astensor(probe)))
        tape.backward(loss)
        support = np.abs(x.grad[0, 0]) > 0
        rows = np.nonzero(support.any(axis=1))[0]
        cols = np.nonzero(support.any(axis=0))[0]
        assert rows.max() - rows.min() + 1 == analytic, stack
        assert cols.max() - cols.min() + 1 == analytic, stack

    rf_on = receptive_field(ablation_config(base, dilation=True, concat=True))
    rf_off = receptive_field(ablation_config(base, dilation=False, concat=True))
    assert rf_on > rf_off

    _announce(3, "architecture invariants",
              f"dilation-invariant parameter count; impulse RF exact on "
              f"{len(stacks)} stacks; RF {rf_on:.0f} > {rf_off:.0f} with dilation")


def test_criterion_4_ssim_properties():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 9.5, (1, 1, 12, 12))
    ssim_map, mean = losses.ssim(x, x.copy(), window=7)
    assert np.all(ssim_map.data == 1.0)
    assert mean.item() == 1.0

    lo, hi = np.inf, -np.inf
    for _ in range(1000):
        a = rng.uniform(0.5, 9.5, (1, 1, 9, 9))
        b = rng.uniform(0.5, 9.5, (1, 1, 9, 9))
        m, _ = losses.ssim(a, b, window=7)
        lo = min(lo, float(m.data.min()))
        hi = max(hi, float(m.data.max()))
        assert m.data.min() >= -1.0 and m.data.max() <= 1.0

    worst = 0.0
    for a, b, c1 in [(2.0, 3.0, 0.02), (0.5, 0.5, 0.01), (4.0, 1.0, 0.5)]:
        im_a = np.full((1, 1, 9, 9), a)
        im_b = np.full((1, 1, 9, 9), b)
        m, _ = losses.ssim(im_a, im_b, window=7, c1=c1, c2=0.09)
        want = ssim_constant_oracle(a, b, c1)
        err = float(np.abs(m.data - want).max())
        worst = max(worst, err)
        assert err <= 1e-12

    _announce(4, "SSIM properties",
              f"self-SSIM exactly 1; map within [{lo:.3f}, {hi:.3f}] on 1000 pairs; "
              f"constant closed form within {worst:.1e}")


def test_criterion_5_desk_scale_training():
    start = time.perf_counter()
    out = desk.run_desk_scale(seed=0, dilation=True, concat=True)
    elapsed = time.perf_counter() - start

    losses_seen = out["losses"]
    first = statistics.median(losses_seen[:10])
    last = statistics.median(losses_seen[-10:])
    drop = 1.0 - last / first
    report = out["report"]
    rmse_limit = 0.1 * (desk.D_MAX - desk.D_MIN)

    assert drop >= 0.90, f"loss drop {drop:.1%} < 90% (first {first:.4f}, last {last:.4f})"
    assert report.rmse < rmse_limit, f"test RMSE {report.rmse:.3f} >= {rmse_limit:.3f}"
    assert report.delta1 > 0.85, f"delta1 {report.delta1:.3f} <= 0.85"
    assert elapsed < 900.0, f"run took {elapsed:.0f}s (budget 900s)"

    _announce(5, "desk-scale training",
              f"loss -{drop:.1%}, test RMSE {report.rmse:.3f} < {rmse_limit:.2f}, "
              f"delta1 {report.delta1:.3f} > 0.85, {elapsed:.0f}s")


def test_criterion_6_ablation_direction():
    medians = {}
    for dilation, concat in [(True, True), (False, True), (True, False), (False, False)]:
        d1s = [desk.run_desk_scale(seed=s, dilation=dilation, concat=concat)["report"].delta1
               for s in (0, 1, 2)]
        medians[(dilation, concat)] = statistics.median(d1s)
    best = medians[(True, True)]
    for key, value in medians.items():
        assert best >= value, (
            f"dilation+concat median delta1 {best:.4f} < {key} median {value:.4f}")
    summary = ", ".join(f"d={int(k[0])},c={int(k[1])}: {v:.4f}" for k, v in medians.items())
    _announce(6, "ablation direction", summary)


def test_criterion_7_format_roundtrips(tmp_path):
    rng = np.random.default_rng(2)
    image = (rng.integers(0, 256, (3, 13, 9)) / 255.0).astype(np.float32)
    depth = rng.uniform(0.5, 9.0, (13, 9)).astype(np.float32)
    mask = rng.random((13, 9)) < 0.9
    sample = Sample(np.ascontiguousarray(image),
                    np.where(mask, depth, 0).astype(np.float32), mask, "rt")
    data.write_sample(sample, tmp_path / "s.ppm", tmp_path / "s.dpth")
    back = data.read_sample(tmp_path / "s.ppm", tmp_path / "s.dpth")
    assert np.array_equal(back.image, sample.image)
    assert np.array_equal(back.depth, sample.depth)
    assert np.array_equal(back.mask, sample.mask)

    ckpt = trainer.Checkpoint(
        params={"w": rng.standard_normal((3, 2)).astype(np.float32)},
        opt_state={"m.w": rng.standard_normal((3, 2)).astype(np.float32)},
        iteration=5, rng_state={"seed": 1, "scheme": "counter"}, fingerprint="fp")
    trainer.save_checkpoint(tmp_path / "a.dfck", ckpt)
    trainer.save_checkpoint(tmp_path / "b.dfck", trainer.load_checkpoint(tmp_path / "a.dfck"))
    assert (tmp_path / "a.dfck").read_bytes() == (tmp_path / "b.dfck").read_bytes()

    # resumed training bit-matches the unbroken run
    scene = SyntheticSceneSpec(height=16, width=16, seed=9)
    samples = data.generate_samples(scene, 12)
    net_cfg = desk.reduced_network_config()
    train_cfg, opt_cfg = desk.desk_configs(seed=4)
    from dataclasses import replace
    short = replace(train_cfg, iterations=6)
    half = replace(train_cfg, iterations=3)
    full_run = trainer.train(short, opt_cfg, net_cfg, samples,
                             out_dir=tmp_path / "full", fingerprint="fp")
    half_run = trainer.train(half, opt_cfg, net_cfg, samples,
                             out_dir=tmp_path / "half", fingerprint="fp")
    trainer.train(short, opt_cfg, net_cfg, samples, out_dir=tmp_path / "resumed",
                  resume=half_run.checkpoint, fingerprint="fp")
    assert ((tmp_path / "full" / "checkpoint.dfck").read_bytes()
            == (tmp_path / "resumed" / "checkpoint.dfck").read_bytes())

    _announce(7, "format round-trips",
              "PPM/DPTH bit-exact; checkpoint save-load-save byte-identical; "
              "resume bit-matches unbroken run")


def test_criterion_8_augmentation_geometry():
    scene_spec = SyntheticSceneSpec(height=32, width=32, primitives=0, noise=0.0)
    plane = data.generate_scene(scene_spec, 0)
    rows = np.linspace(scene_spec.d_max, scene_spec.d_min, 32)

    # scale 1.5: cropped depth equals plane(source row) / 1.5 within one quantum
    spec = AugmentSpec(scale_range=(1.5, 1.5), rotation_deg=(0.0, 0.0),
                       jitter_range=(1.0, 1.0), flip_prob=0.0,
                       mean=(0, 0, 0), std=(1, 1, 1))
    out = augment.apply(plane, spec, np.random.default_rng(0))
    nh = int(round(32 * 1.5))
    off = (nh - 32) // 2
    quantum = abs(rows[1] - rows[0]) / 1.5
    worst = 0.0
    for i in range(32):
        src = int(np.clip(np.rint((i + off + 0.5) * (32 / nh) - 0.5), 0, 31))
        want = rows[src] / 1.5
        err = abs(float(out.depth[i, 0]) - want)
        worst = max(worst, err)
        assert err <= quantum + 1e-6, (i, err, quantum)

    # flips: applying twice restores the pre-normalization sample
    flip = AugmentSpec(scale_range=(1.0, 1.0), rotation_deg=(0.0, 0.0),
                       jitter_range=(1.0, 1.0), flip_prob=1.0,
                       mean=(0, 0, 0), std=(1, 1, 1))
    once = augment.apply(plane, flip, np.random.default_rng(0))
    twice = augment.apply(once, flip, np.random.default_rng(0))
    assert np.array_equal(twice.image, plane.image)
    assert np.array_equal(twice.depth, plane.depth)
    assert np.array_equal(twice.mask, plane.mask)

    # masks never gain valid pixels under the full recipe
    holes = plane.mask.copy()
    holes[8:16, 4:12] = False
    poisoned = Sample(plane.image, np.where(holes, plane.depth, 777.0).astype(np.float32),
                      holes, "p")
    full = AugmentSpec(mean=(0, 0, 0), std=(1, 1, 1))
    for seed in range(25):
        aug_out = augment.apply(poisoned, full, np.random.default_rng(seed))
        if aug_out.mask.any():
            assert float(aug_out.depth[aug_out.mask].max()) < 300.0

    _announce(8, "augmentation geometry",
              f"scale-1.5 depth error {worst:.4f} <= quantum {quantum:.4f}; "
              "double flip identity; masks never gain pixels")
