"""Ego-motion alignment of a history BEV feature and concat fusion."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .geometry import RigidTransform, compose, inverse
from .tensor import _record, concat_channels, conv2d

# Sample coordinates this close to an integer are snapped onto it, so integer
# cell shifts and the identity warp are exact copies.
SNAP_EPS = 1e-6


@dataclass
class TemporalBuffer:
    """Single-frame history: BEV feature plus its ego->global pose."""

    bev: np.ndarray = None
    pose: RigidTransform = None
    timestamp: float = None

    @property
    def empty(self):
        return self.bev is None

    def update(self, bev, pose, timestamp=None):
        if not isinstance(pose, RigidTransform):
            raise TypeError("pose must be a RigidTransform")
        self.bev, self.pose, self.timestamp = bev, pose, timestamp

    def clear(self):
        self.bev = self.pose = self.timestamp = None


def planar_relative(pose_hist, pose_cur):
    """Current-ego -> history-ego map reduced to ``(yaw, tx, ty)``."""
    rel = compose(inverse(pose_hist), pose_cur)
    return rel.yaw, rel.translation[0], rel.translation[1]


def sample_grid(pose_hist, pose_cur, grid):
    """Fractional history-cell indices ``(sx, sy)`` for every current cell, ``[H, W]``."""
    yaw, tx, ty = planar_relative(pose_hist, pose_cur)
    if yaw == 0.0:
        c, s = 1.0, 0.0
    else:
        c, s = np.cos(yaw), np.sin(yaw)
    # index-space affine map: idx_h = R idx_c + (R - I)(origin/res + 1/2) + t/res
    ox = grid.x_min / grid.xy_res + 0.5
    oy = grid.y_min / grid.xy_res + 0.5
    bx = ((c - 1.0) * ox - s * oy) + tx / grid.xy_res
    by = (s * ox + (c - 1.0) * oy) + ty / grid.xy_res
    jj, ii = np.meshgrid(np.arange(grid.H, dtype=np.float64), np.arange(grid.W, dtype=np.float64), indexing="ij")
    sx = c * ii - s * jj + bx
    sy = s * ii + c * jj + by
    for a in (sx, sy):
        r = np.round(a)
        snap = np.abs(a - r) < SNAP_EPS
        a[snap] = r[snap]
    return sx, sy


def align_bev(history, pose_hist, pose_cur, grid):
    """Warp ``history[B,C,H,W]`` (in the history ego frame) into the current ego frame.

    Each current cell center is mapped into the history frame (yaw + planar
    translation) and bilinearly sampled; samples beyond the grid read zero.
    """
    for name, pose in (("pose_hist", pose_hist), ("pose_cur", pose_cur)):
        if not isinstance(pose, RigidTransform):
            raise TypeError(f"{name} must be a RigidTransform")
    history = np.asarray(history, dtype=np.float32)
    if history.ndim != 4 or history.shape[2:] != (grid.H, grid.W):
        raise ShapeError(f"history {history.shape} does not match grid H×W = {grid.H}×{grid.W}")
    sx, sy = sample_grid(pose_hist, pose_cur, grid)
    out = np.stack([kernels.bilinear_sample(history[b], sx, sy) for b in range(history.shape[0])])
    return _record("warp", out)


def fuse_concat(current, aligned, fuse_conv):
    """3x3 conv over ``concat(current, aligned)``; maps 2C -> C channels."""
    c = current.shape[1]
    if aligned.shape != current.shape:
        raise ShapeError(f"aligned history {aligned.shape} != current {current.shape}")
    if fuse_conv.in_channels != 2 * c or fuse_conv.out_channels != c:
        raise ShapeError(
            f"fuse conv is {fuse_conv.in_channels}->{fuse_conv.out_channels}, need {2 * c}->{c}"
        )
    return conv2d(concat_channels([current, aligned]), fuse_conv)
