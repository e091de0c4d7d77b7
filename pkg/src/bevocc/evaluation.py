"""Semantic occupancy containers and mIoU scoring."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

CLASS_NAMES = (
    "others",
    "barrier",
    "bicycle",
    "bus",
    "car",
    "construction_vehicle",
    "motorcycle",
    "pedestrian",
    "traffic_cone",
    "trailer",
    "truck",
    "driveable_surface",
    "other_flat",
    "sidewalk",
    "terrain",
    "manmade",
    "vegetation",
    "free",
)
NUM_CLASSES = len(CLASS_NAMES)
FREE_CLASS = NUM_CLASSES - 1
SEMANTIC_CLASSES = tuple(range(FREE_CLASS))


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Per-voxel labels stored ``[Z, H, W]`` (x fastest), one byte each."""

    labels: np.ndarray
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        lab = np.ascontiguousarray(self.labels)
        if lab.ndim != 3 or min(lab.shape) < 1:
            raise ShapeError(f"occupancy labels must be a non-empty [Z,H,W] array, got {lab.shape}")
        if lab.size and int(lab.max()) >= self.num_classes:
            raise ValueError(f"label {int(lab.max())} >= num_classes {self.num_classes}")
        object.__setattr__(self, "labels", lab.astype(np.uint8, copy=False))

    @property
    def dims(self):
        """``(W, H, Z)``."""
        z, h, w = self.labels.shape
        return (w, h, z)

    def __eq__(self, other):
        return (
            isinstance(other, OccupancyGrid)
            and self.num_classes == other.num_classes
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class VisibilityMask:
    visible: np.ndarray  # bool [Z, H, W]

    def __post_init__(self):
        v = np.ascontiguousarray(self.visible, dtype=bool)
        if v.ndim != 3:
            raise ShapeError(f"visibility mask must be [Z,H,W], got {v.shape}")
        object.__setattr__(self, "visible", v)

    @property
    def dims(self):
        z, h, w = self.visible.shape
        return (w, h, z)

    def as_grid(self):
        return OccupancyGrid(self.visible.astype(np.uint8), num_classes=2)

    @classmethod
    def from_grid(cls, grid):
        if grid.num_classes != 2:
            raise ValueError(f"mask container must have num_classes=2, got {grid.num_classes}")
        return cls(grid.labels.astype(bool))


def confusion(pred, gt, mask=None):
    """Count matrix ``m[g, p]`` over voxels where ``mask`` is true (all if absent)."""
    if pred.dims != gt.dims:
        raise ShapeError(f"prediction dims {pred.dims} != ground-truth dims {gt.dims}")
    if pred.num_classes != gt.num_classes:
        raise ShapeError(f"num_classes differ: prediction {pred.num_classes}, ground truth {gt.num_classes}")
    n = gt.num_classes
    g = gt.labels.reshape(-1).astype(np.int64)
    p = pred.labels.reshape(-1).astype(np.int64)
    if mask is not None:
        if mask.dims != gt.dims:
            raise ShapeError(f"mask dims {mask.dims} != grid dims {gt.dims}")
        keep = mask.visible.reshape(-1)
        g, p = g[keep], p[keep]
    return np.bincount(g * n + p, minlength=n * n).reshape(n, n)


def miou(conf, eval_classes=SEMANTIC_CLASSES):
    """Return ``(per_class_iou, mean)``.

    ``per_class_iou`` maps class id to IoU, or ``None`` when the class appears in
    neither prediction nor ground truth; such classes are left out of the mean.
    """
    conf = np.asarray(conf)
    if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {conf.shape}")
    eval_classes = list(eval_classes)
    if not eval_classes:
        raise ValueError("eval_classes is empty")
    tp = np.diag(conf).astype(np.float64)
    fp = conf.sum(axis=0) - tp
    fn = conf.sum(axis=1) - tp
    per_class = {}
    defined = []
    for c in eval_classes:
        denom = tp[c] + fp[c] + fn[c]
        if denom == 0:
            per_class[c] = None
        else:
            per_class[c] = float(tp[c] / denom)
            defined.append(per_class[c])
    # correctly rounded sum, so the mean does not depend on summation order
    mean = math.fsum(defined) / len(defined) if defined else float("nan")
    return per_class, mean
