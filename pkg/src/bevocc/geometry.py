"""Pinhole cameras, rigid transforms and frustum sampling.

Conventions: camera frame is z-forward, x-right, y-down; ego frame is
x-forward, y-left, z-up.  Geometry runs in float64.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self):
        return {k: getattr(self, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation is not a proper orthonormal matrix (R^T R != I or det != 1)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_yaw(cls, yaw, translation=(0.0, 0.0, 0.0)):
        c, s = np.cos(yaw), np.sin(yaw)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), translation)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @property
    def yaw(self):
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def apply(self, points):
        """Transform ``[..., 3]`` points: ``R p + t``."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rotation"], d["translation"])

    def __eq__(self, other):
        return (
            isinstance(other, RigidTransform)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def transform_point(p, T):
    return T.apply(p)


def compose(t1, t2):
    """``compose(T1, T2)(p) == T1(T2(p))``."""
    return RigidTransform(t1.rotation @ t2.rotation, t1.rotation @ t2.translation + t1.translation)


def inverse(T):
    rt = T.rotation.T
    return RigidTransform(rt, -(rt @ T.translation))


def pixel_to_camera(u, v, depth, intr):
    """Back-project pixel ``(u, v)`` at camera-z ``depth`` into the camera frame."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise ValueError("depth must be positive")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = (u - intr.cx) / intr.fx * depth
    y = (v - intr.cy) / intr.fy * depth
    return np.stack(np.broadcast_arrays(x, y, depth), axis=-1)


def camera_to_pixel(p, intr):
    """Project camera-frame points ``[..., 3]`` to ``(u, v, z)``."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * p[..., 0] / z + intr.cx
        v = intr.fy * p[..., 1] / z + intr.cy
    return u, v, z


@dataclass(frozen=True, eq=False)
class Camera:
    name: str
    intrinsics: CameraIntrinsics
    cam_to_ego: RigidTransform

    @property
    def center(self):
        return self.cam_to_ego.translation


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        cams = tuple(self.cameras)
        if not cams:
            raise ValueError("camera rig needs at least one camera")
        names = [c.name for c in cams]
        if len(set(names)) != len(names):
            raise ValueError(f"camera names must be unique, got {names}")
        object.__setattr__(self, "cameras", cams)

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]


@dataclass(frozen=True, eq=False)
class FrustumGrid:
    """Sample points of one camera, laid out ``[D, h, w]`` to match lifted features."""

    us: np.ndarray  # [w] pixel u of each feature column
    vs: np.ndarray  # [h]
    depths: np.ndarray  # [D] bin-center depths

    @property
    def shape(self):
        return (len(self.depths), len(self.vs), len(self.us))

    @property
    def uvd(self):
        d, v, u = np.meshgrid(self.depths, self.vs, self.us, indexing="ij")
        return np.stack([u, v, d], axis=-1)

    def __len__(self):
        return int(np.prod(self.shape))


def depth_bins(depth_start_m, depth_end_m, depth_step_m):
    if not (depth_end_m > depth_start_m > 0):
        raise ValueError(f"need depth_end > depth_start > 0, got [{depth_start_m}, {depth_end_m})")
    if not depth_step_m > 0:
        raise ValueError(f"depth step must be positive, got {depth_step_m}")
    n = int(np.floor((depth_end_m - depth_start_m) / depth_step_m + 1e-9))
    if n == 0:
        raise ValueError("depth range shorter than one bin")
    return depth_start_m + (np.arange(n) + 0.5) * depth_step_m


def build_frustum(feat_w, feat_h, stride_px, depth_start_m, depth_end_m, depth_step_m):
    depths = depth_bins(depth_start_m, depth_end_m, depth_step_m)
    us = (np.arange(feat_w) + 0.5) * stride_px
    vs = (np.arange(feat_h) + 0.5) * stride_px
    return FrustumGrid(us.astype(np.float64), vs.astype(np.float64), depths)


def frustum_to_ego(frustum, camera):
    """Ego-frame coordinates ``[D, h, w, 3]`` of every frustum sample."""
    uvd = frustum.uvd
    pc = pixel_to_camera(uvd[..., 0], uvd[..., 1], uvd[..., 2], camera.intrinsics)
    return camera.cam_to_ego.apply(pc)
