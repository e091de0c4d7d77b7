"""Deterministic synthetic scenes: primitives, ground-truth voxels, oracle renders
and camera visibility.

Primitive kinds (sizes in meters, local frame given by ``pose``):

- ``box``: extents ``size = (lx, ly, lz)`` centered at the pose origin.
- ``cylinder``: vertical local z axis, diameter ``size[0]``, height ``size[2]``.
- ``ground_plane``: slab of thickness ``size[2]`` unbounded in local x/y.

Overlaps resolve by list order: the earliest primitive wins.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .evaluation import FREE_CLASS, NUM_CLASSES, OccupancyGrid, VisibilityMask
from .geometry import Camera, CameraIntrinsics, CameraRig, RigidTransform, camera_to_pixel, inverse
from .view_transform import BevGridSpec

KINDS = ("box", "cylinder", "ground_plane")
SCENE_VERSION = 1


@dataclass(frozen=True, eq=False)
class ScenePrimitive:
    kind: str
    pose: RigidTransform
    size: tuple
    class_id: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        size = tuple(float(s) for s in self.size)
        if len(size) != 3 or min(size) <= 0:
            raise ValueError(f"primitive size must be three positive numbers, got {self.size}")
        if not 0 <= self.class_id < FREE_CLASS:
            raise ValueError(f"class_id {self.class_id} must be a semantic class in [0, {FREE_CLASS})")
        object.__setattr__(self, "size", size)

    def _local(self, points):
        return (np.asarray(points, dtype=np.float64) - self.pose.translation) @ self.pose.rotation

    def contains(self, points, tol=0.0):
        """Inclusive point-in-primitive test for ``[..., 3]`` ego points."""
        p = self._local(points)
        half = np.array(self.size) / 2 + tol
        if self.kind == "box":
            return np.all(np.abs(p) <= half, axis=-1)
        if self.kind == "cylinder":
            radial = p[..., 0] ** 2 + p[..., 1] ** 2 <= half[0] ** 2
            return radial & (np.abs(p[..., 2]) <= half[2])
        return np.abs(p[..., 2]) <= half[2]

    def ray_interval(self, origin, dirs):
        """Entry/exit parameters of rays ``origin + t * dirs`` (``dirs`` is ``[N, 3]``)."""
        o = (np.asarray(origin, dtype=np.float64) - self.pose.translation) @ self.pose.rotation
        d = np.asarray(dirs, dtype=np.float64) @ self.pose.rotation
        half = np.array(self.size) / 2
        axes = (0, 1, 2) if self.kind == "box" else (2,)
        n = d.shape[0]
        t_in = np.full(n, -np.inf)
        t_out = np.full(n, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            for a in axes:
                t1 = (-half[a] - o[a]) / d[:, a]
                t2 = (half[a] - o[a]) / d[:, a]
                lo = np.where(d[:, a] != 0, np.minimum(t1, t2), np.where(abs(o[a]) <= half[a], -np.inf, np.inf))
                hi = np.where(d[:, a] != 0, np.maximum(t1, t2), np.where(abs(o[a]) <= half[a], np.inf, -np.inf))
                t_in = np.maximum(t_in, lo)
                t_out = np.minimum(t_out, hi)
            if self.kind == "cylinder":
                r = half[0]
                qa = d[:, 0] ** 2 + d[:, 1] ** 2
                qb = 2 * (o[0] * d[:, 0] + o[1] * d[:, 1])
                qc = o[0] ** 2 + o[1] ** 2 - r * r
                disc = qb * qb - 4 * qa * qc
                root = np.sqrt(np.maximum(disc, 0.0))
                c1 = (-qb - root) / (2 * qa)
                c2 = (-qb + root) / (2 * qa)
                vertical = qa == 0
                c1 = np.where(vertical, np.where(qc <= 0, -np.inf, np.inf), np.where(disc >= 0, c1, np.inf))
                c2 = np.where(vertical, np.where(qc <= 0, np.inf, -np.inf), np.where(disc >= 0, c2, -np.inf))
                t_in = np.maximum(t_in, c1)
                t_out = np.minimum(t_out, c2)
        return t_in, t_out

    def first_hit(self, origin, dirs):
        """Smallest positive entry parameter, ``inf`` on a miss or when the origin is inside."""
        t_in, t_out = self.ray_interval(origin, dirs)
        hit = (t_in <= t_out) & (t_in > 0)
        return np.where(hit, t_in, np.inf)

    def to_dict(self):
        return {"kind": self.kind, "class_id": self.class_id, "size": list(self.size), "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], RigidTransform.from_dict(d["pose"]), tuple(d["size"]), int(d["class_id"]))


@dataclass(frozen=True, eq=False)
class Scene:
    primitives: tuple
    rig: CameraRig
    seed: int = 0
    ego_pose: RigidTransform = None
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.ego_pose is None:
            object.__setattr__(self, "ego_pose", RigidTransform.identity())

    def to_json(self):
        doc = {
            "version": SCENE_VERSION,
            "seed": self.seed,
            "timestamp": self.timestamp,
            "ego_pose": self.ego_pose.to_dict(),
            "cameras": [
                {"name": c.name, "intrinsics": c.intrinsics.to_dict(), "cam_to_ego": c.cam_to_ego.to_dict()}
                for c in self.rig
            ],
            "primitives": [p.to_dict() for p in self.primitives],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("version") != SCENE_VERSION:
            raise ValueError(f"unsupported scene version {doc.get('version')!r}")
        cams = [
            Camera(c["name"], CameraIntrinsics(**c["intrinsics"]), RigidTransform.from_dict(c["cam_to_ego"]))
            for c in doc["cameras"]
        ]
        prims = [ScenePrimitive.from_dict(p) for p in doc["primitives"]]
        return cls(
            tuple(prims),
            CameraRig(tuple(cams)),
            int(doc.get("seed", 0)),
            RigidTransform.from_dict(doc["ego_pose"]) if "ego_pose" in doc else None,
            float(doc.get("timestamp", 0.0)),
        )


# ---------------------------------------------------------------------------
# ground truth
# ---------------------------------------------------------------------------


def voxelize(scene, grid):
    """Label each voxel by the first primitive containing its center; free otherwise."""
    centers = grid.voxel_centers()
    labels = np.full(centers.shape[:3], FREE_CLASS, dtype=np.uint8)
    open_ = np.ones(centers.shape[:3], dtype=bool)
    for prim in scene.primitives:
        inside = open_ & prim.contains(centers)
        labels[inside] = prim.class_id
        open_ &= ~inside
    return OccupancyGrid(labels, NUM_CLASSES)


def feature_rays(camera, feat_w, feat_h):
    """Ego-frame ray directions through feature-cell centers, scaled so ``t`` is camera depth."""
    intr = camera.intrinsics
    stride = intr.width / feat_w
    if abs(stride - intr.height / feat_h) > 1e-9:
        raise ValueError(f"feature grid {feat_w}x{feat_h} does not evenly stride image {intr.width}x{intr.height}")
    u = (np.arange(feat_w) + 0.5) * stride
    v = (np.arange(feat_h) + 0.5) * stride
    vv, uu = np.meshgrid(v, u, indexing="ij")
    d_cam = np.stack([(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1)
    return d_cam.reshape(-1, 3) @ camera.cam_to_ego.rotation.T


def render_oracle(scene, cam_index, feat_w, feat_h):
    """Ray-cast feature-cell centers of one camera.

    Returns ``(depth[h, w], semantics[NUM_CLASSES, h, w])``: camera-z depth of
    the nearest hit (``inf`` on a miss) and a one-hot class map (zero on a miss).
    """
    cam = scene.rig[cam_index]
    dirs = feature_rays(cam, feat_w, feat_h)
    best = np.full(dirs.shape[0], np.inf)
    cls = np.full(dirs.shape[0], -1, dtype=np.int64)
    for prim in scene.primitives:
        t = prim.first_hit(cam.center, dirs)
        closer = t < best
        best[closer] = t[closer]
        cls[closer] = prim.class_id
    sem = np.zeros((NUM_CLASSES, dirs.shape[0]), dtype=np.float32)
    hit = cls >= 0
    sem[cls[hit], np.flatnonzero(hit)] = 1.0
    return best.reshape(feat_h, feat_w), sem.reshape(NUM_CLASSES, feat_h, feat_w)


def frustum_targets(camera, grid):
    """Indices ``(ix, iy, iz)`` of voxels whose centers project inside the image."""
    centers = grid.voxel_centers()
    pc = inverse(camera.cam_to_ego).apply(centers)
    u, v, z = camera_to_pixel(pc, camera.intrinsics)
    intr = camera.intrinsics
    inside = (z > 0) & (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
    iz, iy, ix = np.nonzero(inside)
    return np.stack([ix, iy, iz], axis=1)


def visibility_mask(scene, rig, grid, occupancy=None):
    """A voxel is visible when, for some camera whose image it projects into, the
    segment from the camera center to the voxel center crosses no other occupied voxel."""
    if occupancy is None:
        occupancy = voxelize(scene, grid)
    occ = occupancy.labels != FREE_CLASS
    vis = np.zeros(occ.shape, dtype=bool)
    for cam in rig:
        tg = frustum_targets(cam, grid)
        ok = kernels.dda_visible(occ, grid.origin, grid.resolution, cam.center, tg)
        sel = tg[ok]
        vis[sel[:, 2], sel[:, 1], sel[:, 0]] = True
    return VisibilityMask(vis)


# ---------------------------------------------------------------------------
# rigs and random scenes
# ---------------------------------------------------------------------------


def _forward_rotation(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    # columns: camera x (right), y (down), z (forward) expressed in ego axes
    return np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])


def surround_rig(width=704, height=256, fx=560.0, mount_height=1.5):
    """Six horizontal cameras at the usual surround-view yaws."""
    yaws = {
        "CAM_FRONT": 0.0,
        "CAM_FRONT_RIGHT": -55.0,
        "CAM_FRONT_LEFT": 55.0,
        "CAM_BACK": 180.0,
        "CAM_BACK_LEFT": 110.0,
        "CAM_BACK_RIGHT": -110.0,
    }
    intr = CameraIntrinsics(fx, fx, width / 2.0, height / 2.0, width, height)
    cams = []
    for name, deg in yaws.items():
        yaw = np.deg2rad(deg)
        pos = (1.0 * np.cos(yaw), 0.5 * np.sin(yaw), mount_height)
        cams.append(Camera(name, intr, RigidTransform(_forward_rotation(yaw), pos)))
    return CameraRig(tuple(cams))


def nadir_camera(name, position, intrinsics):
    """Camera looking straight down (-z ego), image x along ego +x, image y along ego -y."""
    rot = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    return Camera(name, intrinsics, RigidTransform(rot, position))


# (class_id, kind, size) templates for random placement; sizes are base values
_OBJECTS = (
    (4, "box", (4.5, 1.9, 1.6)),
    (10, "box", (8.0, 2.5, 3.0)),
    (3, "box", (11.0, 2.9, 3.4)),
    (1, "box", (2.0, 0.4, 1.0)),
    (9, "box", (6.0, 2.3, 2.6)),
    (7, "cylinder", (0.6, 0.6, 1.75)),
    (8, "cylinder", (0.4, 0.4, 0.7)),
    (2, "box", (1.7, 0.6, 1.2)),
    (16, "cylinder", (2.2, 2.2, 4.5)),
    (15, "box", (10.0, 8.0, 5.0)),
)
GROUND_TOP = -0.6


def generate_scene(seed, grid=None, rig=None, density=0.006):
    """Random street-like scene: a ground slab plus objects resting on it.

    ``density`` is objects per square meter of grid area.  The region around
    the ego vehicle is kept clear so cameras are never inside an object.
    """
    grid = grid or BevGridSpec()
    rig = rig or surround_rig()
    rng = np.random.default_rng(seed)
    prims = []
    area = (grid.x_max - grid.x_min) * (grid.y_max - grid.y_min)
    n = max(1, int(round(area * density)))
    for _ in range(n):
        cls, kind, base = _OBJECTS[rng.integers(len(_OBJECTS))]
        scale = rng.uniform(0.85, 1.15, size=3)
        size = tuple(float(b * s) for b, s in zip(base, scale))
        if kind == "cylinder":
            size = (size[0], size[0], size[2])
        for _attempt in range(20):
            x = rng.uniform(grid.x_min, grid.x_max)
            y = rng.uniform(grid.y_min, grid.y_max)
            if abs(x) > 3.5 + size[0] / 2 or abs(y) > 2.5 + size[1] / 2:
                break
        yaw = rng.uniform(-np.pi, np.pi)
        pose = RigidTransform.from_yaw(yaw, (x, y, GROUND_TOP + size[2] / 2))
        prims.append(ScenePrimitive(kind, pose, size, cls))
    # ground last so objects take priority where they overlap it
    prims.append(ScenePrimitive("ground_plane", RigidTransform(np.eye(3), (0.0, 0.0, GROUND_TOP - 0.2)), (1.0, 1.0, 0.4), 11))
    return Scene(tuple(prims), rig, int(seed))


def render_frame_arrays(scene, feat_w, feat_h):
    """Per-camera ``(images[N, NUM_CLASSES+1, h, w], depths[N, h, w])``.

    Image channels are the one-hot semantics followed by inverse depth (0 on a miss).
    """
    imgs, depths = [], []
    for i in range(len(scene.rig)):
        depth, sem = render_oracle(scene, i, feat_w, feat_h)
        with np.errstate(divide="ignore"):
            inv = np.where(np.isfinite(depth), 1.0 / depth, 0.0).astype(np.float32)
        imgs.append(np.concatenate([sem, inv[None]], axis=0))
        depths.append(depth)
    return np.stack(imgs).astype(np.float32), np.stack(depths)
