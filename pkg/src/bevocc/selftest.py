"""Quick invariant suite run by ``bevocc selftest``.

Each check is small and compares against an independent computation; the
full randomized suite lives in the test directory.
"""

import numpy as np

from .bench import flops
from .config import preset, small_config
from .errors import ShapeError
from .evaluation import NUM_CLASSES, OccupancyGrid, confusion, miou
from .geometry import RigidTransform
from .occupancy_head import channel_to_height, height_to_channel, linear_head_loss_grad
from .pipeline import build, default_rig, frame_from_scene
from .scene import generate_scene
from .temporal import align_bev
from .tensor import Conv2dParams, conv2d, softmax_axis
from .view_transform import BevGridSpec


def _c2h():
    x = np.random.default_rng(0).standard_normal((1, 36, 5, 4)).astype(np.float32)
    y = channel_to_height(x, 18, 2)
    assert y[0, 7, 1, 3, 2] == x[0, 7 * 2 + 1, 3, 2]
    assert np.array_equal(height_to_channel(y), x)


def _conv():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 5, 6)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    out = conv2d(x, Conv2dParams(w, np.zeros(3, np.float32)))
    xp = np.pad(x[0].astype(np.float64), ((0, 0), (1, 1), (1, 1)))
    ref = np.zeros((3, 5, 6))
    for o in range(3):
        for i in range(5):
            for j in range(6):
                ref[o, i, j] = (w[o] * xp[:, i : i + 3, j : j + 3]).sum()
    assert np.max(np.abs(out[0] - ref)) <= 1e-5


def _softmax():
    x = np.random.default_rng(2).standard_normal((2, 5, 3)).astype(np.float32)
    s = softmax_axis(x, 1)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-6)


def _warp_identity():
    grid = BevGridSpec.centered(8, 6)
    x = np.random.default_rng(3).standard_normal((1, 3, 6, 8)).astype(np.float32)
    pose = RigidTransform.from_yaw(0.3, (5.0, -2.0, 0.0))
    assert np.array_equal(align_bev(x, pose, pose, grid), x)


def _miou():
    lab = np.random.default_rng(4).integers(0, NUM_CLASSES, (4, 4, 4))
    g = OccupancyGrid(lab)
    _, m = miou(confusion(g, g))
    assert m == 1.0


def _grad():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((6, 3)) * 0.1
    b = np.zeros(6)
    x = rng.standard_normal((3, 7))
    y = rng.integers(0, 3, (2, 7))
    _, dw, _ = linear_head_loss_grad(w, b, x, y, 3, 2)
    eps = 1e-6
    wp, wm = w.copy(), w.copy()
    wp[1, 2] += eps
    wm[1, 2] -= eps
    fd = (linear_head_loss_grad(wp, b, x, y, 3, 2)[0] - linear_head_loss_grad(wm, b, x, y, 3, 2)[0]) / (2 * eps)
    assert abs(fd - dw[1, 2]) <= 1e-5 * max(1.0, abs(fd))


def _path_isolation():
    cfg = small_config()
    scene = generate_scene(0, cfg.grid, default_rig(cfg))
    frame = frame_from_scene(scene, cfg)
    flash = build(cfg).infer(frame, track=True)
    assert flash.ops["conv3d"] == 0
    voxel = build(cfg.with_(path="voxel").validate()).infer(frame, track=True)
    assert voxel.ops["conv3d"] > 0
    assert flash.logits.shape == voxel.logits.shape
    assert sum(flash.flops.values()) == flops(cfg)
    m1 = preset("M1")
    assert flops(m1, "bev_enc_occ") < flops(m1.with_(path="voxel"), "bev_enc_occ")


def _shape_errors():
    try:
        conv2d(np.zeros((1, 2, 4, 4), np.float32), Conv2dParams(np.zeros((1, 3, 3, 3)), np.zeros(1)))
    except ShapeError:
        return
    raise AssertionError("channel mismatch was not rejected")


CHECKS = (
    ("channel_to_height", _c2h),
    ("conv2d_oracle", _conv),
    ("softmax", _softmax),
    ("identity_warp", _warp_identity),
    ("miou_perfect", _miou),
    ("gradient_check", _grad),
    ("path_isolation", _path_isolation),
    ("shape_errors", _shape_errors),
)


def run(out=print):
    failed = 0
    for name, fn in CHECKS:
        try:
            fn()
            out(f"PASS {name}")
        except Exception as e:  # report every failure, keep going
            failed += 1
            out(f"FAIL {name}: {type(e).__name__}: {e}")
    out(f"{len(CHECKS) - failed}/{len(CHECKS)} checks passed")
    return failed == 0
