#!/usr/bin/env python3
"""Smoke test for the _relume extension module.

Builds the cdylib with cargo, copies it next to this script under the
importable name, then exercises the main types and operations.

Usage: python3 python/smoke_test.py
"""

import math
import os
import shutil
import subprocess
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
ROOT = os.path.dirname(HERE)


def build_extension():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "relume-py"],
        cwd=ROOT,
        check=True,
    )
    built = os.path.join(ROOT, "target", "release", "lib_relume.so")
    if not os.path.exists(built):  # macOS fallback
        built = os.path.join(ROOT, "target", "release", "lib_relume.dylib")
    target = os.path.join(HERE, "_relume.so")
    shutil.copyfile(built, target)
    return target


def approx(a, b, tol=1e-6):
    assert abs(a - b) <= tol, f"{a} != {b} (+-{tol})"


def main():
    build_extension()
    sys.path.insert(0, HERE)
    import _relume as rl

    # Linear-domain conversions.
    img = rl.LdrFrame(2, 2, 3, [0.5] * 12)
    lin = rl.linearize(img, 2.0)
    approx(lin.data()[0], 0.25)
    rt = rl.delinearize(lin, 2.0)
    approx(rt.data()[0], 0.5)

    # Exposure arithmetic and percentile.
    hdr = rl.HdrFrame(2, 2, 3, [0.3] * 12)
    brighter = rl.apply_exposure(hdr, 2.0)
    approx(brighter.data()[0], 0.6)
    assert rl.percentile([float(v) for v in range(1, 101)], 85.0) == 85.0

    # Clipping pipeline: constant pool saturates everything.
    ones = rl.HdrFrame(4, 4, 3, [1.0] * 48)
    cur, ref, mask, gt = rl.make_ldr_pair(ones, ones)
    assert mask.count() == 16
    assert all(v == 1.0 for v in cur.data())

    # Compositing and blending.
    ldr = rl.LdrFrame(2, 2, 3, [0.25] * 12)
    fill = rl.HdrFrame(2, 2, 3, [2.0] * 12)
    all_mask = rl.SatMask(2, 2, [True] * 4)
    out = rl.composite_output(ldr, fill, all_mask)
    assert all(v == 2.0 for v in out.data())
    blended = rl.blend_on_switch(out, out, 0, 5)
    approx(rl.mse_hdr(blended, out), 0.0, 1e-12)

    # Metrics.
    a = rl.LdrFrame(16, 16, 3, [0.5] * 16 * 16 * 3)
    b = rl.LdrFrame(16, 16, 3, [0.6] * 16 * 16 * 3)
    approx(rl.mse(a, b), 0.01, 1e-6)
    approx(rl.psnr(a, b), 20.0, 1e-3)
    approx(rl.ssim(a, a), 1.0, 1e-9)

    # Oracle fill recovers a pure exposure change exactly.
    cur_vals = [0.25, 0.5, 0.125] * 16
    cur = rl.LdrFrame(4, 4, 3, cur_vals)
    ref = rl.LdrFrame(4, 4, 3, [v * 0.5 for v in cur_vals])
    half_mask = rl.SatMask(4, 4, [i % 2 == 0 for i in range(16)])
    filled = rl.oracle_fill(cur, ref, half_mask)
    for got, want in zip(filled.data(), cur_vals):
        approx(got, want, 1e-6)

    # Episode synthesis is deterministic in the seed.
    ep1 = rl.Episode(7, length=12, width=24, height=24)
    ep2 = rl.Episode(7, length=12, width=24, height=24)
    assert len(ep1) == 12
    assert ep1.ldr(5).data() == ep2.ldr(5).data()
    assert ep1.exposure(3) == ep2.exposure(3)
    assert 0 <= ep1.mask(5).area() <= 1

    # Environment: reward is exactly -mse and the buffers follow protocol.
    env = rl.FrameSelectEnv(ep1)
    assert env.frame_index == 2 and env.reference_index == 2
    rewards = []
    while not env.done:
        reward, done, mse, mask_area, ref_age = env.step(True)
        assert reward == -mse
        assert ref_age == 1  # always-push keeps the reference fresh
        rewards.append(reward)
    assert len(rewards) == len(ep1) - 3

    # Replaying the same episode gives identical rewards.
    env.reset(ep2)
    replay = []
    while not env.done:
        reward, *_ = env.step(True)
        replay.append(reward)
    assert replay == rewards

    # No-reference mode is worse than using real references here.
    env_black = rl.FrameSelectEnv(ep1, black_reference=True)
    black_total = 0.0
    while not env_black.done:
        reward, *_ = env_black.step(False)
        black_total += reward
    assert black_total <= sum(rewards) + 1e-9

    assert not math.isnan(sum(rewards))
    print("smoke test passed:", len(rewards), "env steps,",
          f"always-push mean mse {-sum(rewards) / len(rewards):.6f}")


if __name__ == "__main__":
    main()
