"""Image-view to BEV transforms: LSS (predicted depth) and LS (uniform depth)."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .geometry import build_frustum, frustum_to_ego
from .tensor import F32, Conv2dParams, _record, conv2d, softmax_axis


@dataclass(frozen=True)
class BevGridSpec:
    x_min: float = -40.0
    x_max: float = 40.0
    y_min: float = -40.0
    y_max: float = 40.0
    z_min: float = -1.0
    z_max: float = 5.4
    xy_res: float = 0.4
    z_res: float = 0.4

    def __post_init__(self):
        for name, lo, hi, res in (
            ("W", self.x_min, self.x_max, self.xy_res),
            ("H", self.y_min, self.y_max, self.xy_res),
            ("Z", self.z_min, self.z_max, self.z_res),
        ):
            if not res > 0:
                raise ValueError(f"grid resolution must be positive, got {res}")
            n = (hi - lo) / res
            if n < 0.5 or abs(n - round(n)) > 1e-6:
                raise ValueError(f"grid {name} = ({hi} - {lo}) / {res} = {n} is not a positive integer")

    @classmethod
    def centered(cls, w, h, xy_res=0.4, z_min=-1.0, z_max=5.4, z_res=0.4):
        return cls(-w * xy_res / 2, w * xy_res / 2, -h * xy_res / 2, h * xy_res / 2, z_min, z_max, xy_res, z_res)

    @property
    def W(self):
        return int(round((self.x_max - self.x_min) / self.xy_res))

    @property
    def H(self):
        return int(round((self.y_max - self.y_min) / self.xy_res))

    @property
    def Z(self):
        return int(round((self.z_max - self.z_min) / self.z_res))

    @property
    def origin(self):
        return np.array([self.x_min, self.y_min, self.z_min])

    @property
    def resolution(self):
        return np.array([self.xy_res, self.xy_res, self.z_res])

    def voxel_centers(self):
        """Ego coordinates of voxel centers, shaped ``[Z, H, W, 3]``."""
        xs = self.x_min + (np.arange(self.W) + 0.5) * self.xy_res
        ys = self.y_min + (np.arange(self.H) + 0.5) * self.xy_res
        zs = self.z_min + (np.arange(self.Z) + 0.5) * self.z_res
        z, y, x = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([x, y, z], axis=-1)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max", "xy_res", "z_res")}


@dataclass(frozen=True)
class DepthContextParams:
    conv: Conv2dParams  # 1x1, Cout = depth_bins + context_channels
    depth_bins: int
    context_channels: int

    def __post_init__(self):
        if self.conv.out_channels != self.depth_bins + self.context_channels:
            raise ShapeError(
                f"depth/context conv has {self.conv.out_channels} outputs, need D + C_ctx = {self.depth_bins} + {self.context_channels}"
            )


def predict_depth_context(img_feat, params):
    """Return ``(depth_prob[B,D,h,w], context[B,C,h,w])`` from one 1x1 conv."""
    out = conv2d(img_feat, params.conv)
    d = params.depth_bins
    prob = softmax_axis(out[:, :d], axis=1)
    ctx = np.ascontiguousarray(out[:, d:])
    return prob, ctx


def lift(context, depth_prob):
    """Outer product along depth: ``out[b,c,d,y,x] = context[b,c,y,x] * prob[b,d,y,x]``."""
    context = np.asarray(context, dtype=F32)
    depth_prob = np.asarray(depth_prob, dtype=F32)
    if context.ndim != 4 or depth_prob.ndim != 4:
        raise ShapeError(f"lift expects 4D context and depth, got {context.shape} and {depth_prob.shape}")
    b, _, h, w = context.shape
    if depth_prob.shape[0] != b or depth_prob.shape[2:] != (h, w):
        raise ShapeError(f"lift: context {context.shape} and depth {depth_prob.shape} disagree on B,h,w")
    return _record("lift", context[:, :, None] * depth_prob[:, None])


@dataclass(frozen=True, eq=False)
class SplatPlan:
    """Precomputed destination cell for every frustum point of one camera."""

    index: np.ndarray  # [D*h*w] flat cell index, -1 when out of range
    cells: int
    dropped: int
    keep_z: bool

    @classmethod
    def build(cls, frustum, camera, grid, keep_z=False):
        pts = frustum_to_ego(frustum, camera).reshape(-1, 3)
        rel = (pts - grid.origin) / grid.resolution
        cell = np.floor(rel).astype(np.int64)
        dims = np.array([grid.W, grid.H, grid.Z])
        ok = np.all((cell >= 0) & (cell < dims), axis=1)
        if keep_z:
            flat = (cell[:, 2] * grid.H + cell[:, 1]) * grid.W + cell[:, 0]
            cells = grid.Z * grid.H * grid.W
        else:
            flat = cell[:, 1] * grid.W + cell[:, 0]
            cells = grid.H * grid.W
        index = np.where(ok, flat, -1).astype(np.int64)
        return cls(index, cells, int((~ok).sum()), keep_z)


def splat(frustum, lifted, camera, grid, keep_z=False, plan=None):
    """Sum-pool lifted features into BEV cells (all heights collapsed).

    Returns ``(bev[B,C,H,W], dropped)``; with ``keep_z`` the result is
    ``[B,C,Z,H,W]``.  Points outside the grid extents are dropped and counted.
    """
    lifted = np.asarray(lifted, dtype=F32)
    if lifted.ndim != 5 or lifted.shape[2:] != frustum.shape:
        raise ShapeError(f"lifted shape {lifted.shape} does not match frustum [D,h,w]={frustum.shape}")
    if plan is None:
        plan = SplatPlan.build(frustum, camera, grid, keep_z)
    b, c = lifted.shape[:2]
    out = np.zeros((b, c, plan.cells), dtype=F32)
    for i in range(b):
        kernels.scatter_add(np.ascontiguousarray(lifted[i].reshape(c, -1)), plan.index, out[i])
    shape = (b, c, grid.Z, grid.H, grid.W) if plan.keep_z else (b, c, grid.H, grid.W)
    return _record("splat", out.reshape(shape)), plan.dropped


def _as_camera_list(img_feats, rig):
    feats = list(img_feats)
    if len(feats) != len(rig):
        raise ShapeError(f"got features for {len(feats)} cameras, rig has {len(rig)}")
    return feats


class ViewTransformer:
    """Per-rig cache of frusta and splat plans for repeated transforms."""

    def __init__(self, rig, grid, feat_w, feat_h, stride_px, depth_start_m=1.0, depth_end_m=45.0, depth_step_m=0.5):
        self.rig = rig
        self.grid = grid
        self.frustum = build_frustum(feat_w, feat_h, stride_px, depth_start_m, depth_end_m, depth_step_m)
        self.plans = [SplatPlan.build(self.frustum, cam, grid) for cam in rig]

    @property
    def depth_bins(self):
        return len(self.frustum.depths)

    @property
    def dropped(self):
        return sum(p.dropped for p in self.plans)

    def splat_all(self, lifted_per_camera):
        bev = None
        for lifted, cam, plan in zip(lifted_per_camera, self.rig, self.plans):
            part, _ = splat(self.frustum, lifted, cam, self.grid, plan=plan)
            if bev is None:
                bev = part
            else:
                bev += part
            del part
        return bev

    def lss(self, img_feats, params, depth_override=None):
        """LSS over all cameras; ``depth_override[i]`` replaces predicted depth for camera ``i``."""
        feats = _as_camera_list(img_feats, self.rig)
        if params.depth_bins != self.depth_bins:
            raise ShapeError(f"depth head predicts {params.depth_bins} bins, frustum has {self.depth_bins}")

        def lifted():
            for i, f in enumerate(feats):
                prob, ctx = predict_depth_context(f, params)
                if depth_override is not None:
                    prob = np.asarray(depth_override[i], dtype=F32)
                yield lift(ctx, prob)

        return self.splat_all(lifted())

    def ls(self, img_feats):
        feats = _as_camera_list(img_feats, self.rig)
        d = self.depth_bins

        def lifted():
            for f in feats:
                f = np.asarray(f, dtype=F32)
                prob = np.full((f.shape[0], d) + f.shape[2:], 1.0 / d, dtype=F32)
                yield lift(f, prob)

        return self.splat_all(lifted())


def lss_transform(img_feats, rig, params, grid, stride_px, depth_range=(1.0, 45.0), depth_step_m=0.5):
    """Depth-distribution lift + splat summed over cameras -> ``[B,C,H,W]``."""
    feats = _as_camera_list(img_feats, rig)
    h, w = np.asarray(feats[0]).shape[2:]
    vt = ViewTransformer(rig, grid, w, h, stride_px, depth_range[0], depth_range[1], depth_step_m)
    return vt.lss(feats, params)


def ls_transform(img_feats, rig, grid, stride_px, depth_range=(1.0, 45.0), depth_step_m=0.5):
    """Uniform-depth lift + splat summed over cameras -> ``[B,C,H,W]``."""
    feats = _as_camera_list(img_feats, rig)
    h, w = np.asarray(feats[0]).shape[2:]
    vt = ViewTransformer(rig, grid, w, h, stride_px, depth_range[0], depth_range[1], depth_step_m)
    return vt.ls(feats)
