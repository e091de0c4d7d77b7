"""Config-driven inference graph.

image encoder -> view transform -> (temporal fusion) -> BEV encoder -> head -> labels

``path="flash"`` runs a 2D BEV encoder and a 2D head followed by
channel-to-height.  ``path="voxel"`` reshapes the same view-transform output
into ``Z`` slices of ``C/Z`` channels and runs 3D convolutions end to end.
"""

import dataclasses
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .bev_encoder import encode, init_encoder, neck
from .errors import ConfigError, ShapeError
from .fileio import load_checkpoint, save_checkpoint
from .geometry import CameraRig, RigidTransform
from .occupancy_head import (
    channel_to_height,
    flash_head,
    init_flash_head,
    init_mso_head,
    init_voxel_head,
    mso_head,
    predict_labels,
    voxel_head,
)
from .scene import render_frame_arrays, surround_rig
from .temporal import TemporalBuffer, align_bev, fuse_concat
from .tensor import F32, TensorTracker, conv2d, init_conv2d
from .view_transform import DepthContextParams, ViewTransformer

STAGES = ("image_encoder", "view_transform", "temporal", "bev_encoder", "head", "predict")
# Timing split: temporal fusion is grouped with the upstream stages.
OTHERS = ("image_encoder", "view_transform", "temporal")
BEV_ENC_OCC = ("bev_encoder", "head", "predict")


@dataclass
class FrameInput:
    images: np.ndarray  # [Ncam, Cimg, h, w] at feature resolution
    rig: CameraRig
    ego_pose: RigidTransform = None
    timestamp: float = 0.0
    depth: np.ndarray = None  # optional [Ncam, h, w] oracle depth (inf = no hit)

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=F32)
        if self.images.ndim != 4:
            raise ShapeError(f"frame images must be [Ncam,C,h,w], got {self.images.shape}")
        if self.images.shape[0] != len(self.rig):
            raise ShapeError(f"frame has {self.images.shape[0]} camera images, rig has {len(self.rig)}")
        if self.ego_pose is None:
            self.ego_pose = RigidTransform.identity()
        if self.depth is not None and self.depth.shape != (self.images.shape[0],) + self.images.shape[2:]:
            raise ShapeError(f"oracle depth {self.depth.shape} does not match images {self.images.shape}")


def frame_from_scene(scene, config):
    fh, fw = config.feat_hw
    imgs, depth = render_frame_arrays(scene, fw, fh)
    return FrameInput(imgs, scene.rig, scene.ego_pose, scene.timestamp, depth)


def default_rig(config):
    h, w = config.image_size
    return surround_rig(width=w, height=h, fx=560.0 * w / 704)


def depth_onehot(depth, bins_start, step, n_bins):
    """``[h, w]`` metric depth -> ``[1, D, h, w]`` one-hot over bins; misses are all-zero."""
    depth = np.asarray(depth, dtype=np.float64)
    out = np.zeros((1, n_bins) + depth.shape, dtype=F32)
    with np.errstate(invalid="ignore"):
        idx = np.floor((depth - bins_start) / step)
    ok = np.isfinite(idx) & (idx >= 0) & (idx < n_bins)
    yy, xx = np.nonzero(ok)
    out[0, idx[ok].astype(np.int64), yy, xx] = 1.0
    return out


@dataclass(frozen=True)
class PipelineParams:
    image_encoder: object
    depth_context: object = None  # LSS: 1x1 depth + context conv
    context_conv: object = None  # LS: 1x1 context projection
    temporal_fuse: object = None
    bev_encoder: object = None
    head: object = None


@dataclass
class InferenceResult:
    labels: object
    logits: np.ndarray
    timings: dict
    total: float
    bev: np.ndarray = None  # view-transform output (before temporal fusion)
    aligned: np.ndarray = None  # warped history fed to fusion, if temporal is on
    ops: Counter = field(default_factory=Counter)
    flops: Counter = field(default_factory=Counter)
    peak_bytes: int = None  # peak live tensor bytes inside BEV Enc.+Occ.

    def grouped(self):
        return {
            "others": sum(self.timings.get(s, 0.0) for s in OTHERS),
            "bev_enc_occ": sum(self.timings.get(s, 0.0) for s in BEV_ENC_OCC),
        }


# ---------------------------------------------------------------------------
# parameter trees
# ---------------------------------------------------------------------------


def named_arrays(obj, prefix=""):
    """Flatten a parameter tree (dataclasses / tuples of arrays) into ``{name: array}``."""
    out = {}
    if obj is None:
        return out
    if isinstance(obj, np.ndarray):
        out[prefix] = obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(named_arrays(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, tuple):
        for i, v in enumerate(obj):
            out.update(named_arrays(v, f"{prefix}.{i}"))
    return out


def replace_arrays(obj, arrays, prefix=""):
    """Inverse of :func:`named_arrays`: rebuild ``obj`` with arrays looked up by name."""
    if obj is None:
        return None
    if isinstance(obj, np.ndarray):
        if prefix not in arrays:
            raise KeyError(f"checkpoint is missing {prefix!r}")
        new = np.asarray(arrays[prefix])
        if new.shape != obj.shape:
            raise ShapeError(f"checkpoint {prefix!r} has shape {new.shape}, model expects {obj.shape}")
        return new.astype(obj.dtype)
    if dataclasses.is_dataclass(obj):
        changes = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            changes[f.name] = replace_arrays(v, arrays, f"{prefix}.{f.name}" if prefix else f.name)
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, tuple):
        return tuple(replace_arrays(v, arrays, f"{prefix}.{i}") for i, v in enumerate(obj))
    return obj


def _learnable(name):
    # batch-norm running statistics are buffers, not parameters
    return not (name.endswith(".mean") or name.endswith(".var"))


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------


class Pipeline:
    def __init__(self, config, params):
        self.config = config
        self.params = params
        self.grid = config.grid
        self.buffer = TemporalBuffer()
        self._vt_cache = {}

    # -- parameters -------------------------------------------------------

    def named_params(self):
        return named_arrays(self.params)

    @property
    def param_count(self):
        return int(sum(a.size for n, a in self.named_params().items() if _learnable(n)))

    def save(self, directory):
        save_checkpoint(directory, self.named_params())

    def load(self, directory):
        self.params = replace_arrays(self.params, load_checkpoint(directory))
        return self

    def analytic_flops(self):
        from .bench import analytic_flops

        return analytic_flops(self.config)

    # -- stages -----------------------------------------------------------

    def view_transformer(self, rig):
        key = id(rig)
        vt = self._vt_cache.get(key)
        if vt is None or vt.rig is not rig:
            cfg = self.config
            fh, fw = cfg.feat_hw
            vt = ViewTransformer(rig, self.grid, fw, fh, cfg.feature_stride, cfg.depth_range[0], cfg.depth_range[1], cfg.depth_step_m)
            self._vt_cache = {key: vt}
        return vt

    def encode_images(self, images):
        return neck(*encode(images, self.params.image_encoder), self.params.image_encoder.neck)

    def transform(self, feats, frame, oracle_depth=False):
        vt = self.view_transformer(frame.rig)
        per_cam = [feats[i : i + 1] for i in range(feats.shape[0])]
        if self.config.vt_kind == "ls":
            ctx = [conv2d(f, self.params.context_conv) for f in per_cam]
            return vt.ls(ctx)
        override = None
        if oracle_depth:
            if frame.depth is None:
                raise ValueError("oracle_depth requested but the frame carries no depth")
            d0, step = self.config.depth_range[0], self.config.depth_step_m
            override = [depth_onehot(dm, d0, step, vt.depth_bins) for dm in frame.depth]
        return vt.lss(per_cam, self.params.depth_context, depth_override=override)

    def fuse_history(self, bev, frame):
        hist = self.buffer
        if hist.empty:
            aligned = np.zeros_like(bev)
        else:
            aligned = align_bev(hist.bev, hist.pose, frame.ego_pose, self.grid)
        fused = fuse_concat(bev, aligned, self.params.temporal_fuse)
        hist.update(bev, frame.ego_pose, frame.timestamp)
        return fused, aligned

    def bev_enc_occ(self, bev):
        """BEV encoder + head on a ``[1, C, H, W]`` view-transform output; returns logits."""
        return self.bev_enc_occ_timed(bev, {})

    # -- inference --------------------------------------------------------

    def infer(self, frame, oracle_depth=False, track=False):
        """Run one frame; per-stage wall-clock seconds are in ``result.timings``.

        With ``track=True`` op counts, conv FLOPs and the peak live tensor bytes
        of the BEV Enc.+Occ. stage are recorded as well.
        """
        if frame.images.shape[1] != self.config.image_channels:
            raise ShapeError(f"frame images have {frame.images.shape[1]} channels, config expects {self.config.image_channels}")
        fh, fw = self.config.feat_hw
        if frame.images.shape[2:] != (fh, fw):
            raise ShapeError(f"frame images are {frame.images.shape[2:]}, config feature grid is {(fh, fw)}")
        clock = time.perf_counter
        timings = {}
        whole = TensorTracker() if track else None
        if whole:
            whole.__enter__()
        try:
            t_start = clock()
            t0 = t_start
            feats = self.encode_images(frame.images)
            t1 = clock()
            timings["image_encoder"] = t1 - t0
            t0 = t1
            bev = self.transform(feats, frame, oracle_depth)
            del feats
            t1 = clock()
            timings["view_transform"] = t1 - t0
            aligned = None
            x = bev
            if self.config.temporal == "mono_align_concat":
                t0 = clock()
                x, aligned = self.fuse_history(bev, frame)
                t1 = clock()
                timings["temporal"] = t1 - t0
            t0 = clock()
            stage = TensorTracker() if track else None
            if stage:
                stage.__enter__()
                stage.adopt(x)
            try:
                logits = self.bev_enc_occ_timed(x, timings)
                t0 = clock()
                labels = predict_labels(logits)
                timings["predict"] = clock() - t0
            finally:
                if stage:
                    stage.__exit__(None, None, None)
            total = clock() - t_start
        finally:
            if whole:
                whole.__exit__(None, None, None)
        res = InferenceResult(labels, logits, timings, total, bev=bev, aligned=aligned)
        if track:
            res.ops = whole.ops
            res.flops = whole.flops
            res.peak_bytes = stage.peak_bytes
        return res

    def bev_enc_occ_timed(self, x, timings):
        """:meth:`bev_enc_occ` with the encoder/head boundary timed separately."""
        cfg, p = self.config, self.params
        clock = time.perf_counter
        t0 = clock()
        if cfg.path == "voxel":
            x = channel_to_height(x, cfg.vt_channels // self.grid.Z, self.grid.Z)
        fine, coarse = encode(x, p.bev_encoder)
        del x
        y = neck(fine, coarse, p.bev_encoder.neck)
        t1 = clock()
        timings["bev_encoder"] = t1 - t0
        if cfg.path == "voxel":
            del fine, coarse
            logits = voxel_head(y, p.head)
        elif cfg.head_kind == "mso":
            logits = mso_head([y, fine, coarse], p.head, cfg.num_classes, self.grid.Z)
        else:
            del fine, coarse
            logits = flash_head(y, p.head, cfg.num_classes, self.grid.Z)
        timings["head"] = time.perf_counter() - t1
        return logits


def build(config):
    """Instantiate every parameter from ``config.seed`` and return a :class:`Pipeline`."""
    cfg = config.validate()
    grid = cfg.grid
    seed = cfg.seed
    fh, fw = cfg.feat_hw
    try:
        img = init_encoder("img", cfg.image_channels, cfg.image_encoder_widths, cfg.image_neck, seed)
    except (ShapeError, ValueError) as e:
        raise ConfigError("image_encoder", str(e)) from e
    depth_ctx = ctx_conv = None
    d_bins = int(np.floor((cfg.depth_range[1] - cfg.depth_range[0]) / cfg.depth_step_m + 1e-9))
    if d_bins < 1:
        raise ConfigError("view_transform", f"depth range {cfg.depth_range} shorter than one {cfg.depth_step_m} m bin")
    if cfg.vt_kind == "lss":
        conv = init_conv2d("vt.depth_ctx", cfg.image_neck, d_bins + cfg.vt_channels, 1, 1, seed, padding=0)
        depth_ctx = DepthContextParams(conv, d_bins, cfg.vt_channels)
    else:
        ctx_conv = init_conv2d("vt.ctx", cfg.image_neck, cfg.vt_channels, 1, 1, seed, padding=0)
    fuse = None
    if cfg.temporal == "mono_align_concat":
        fuse = init_conv2d("temporal.fuse", 2 * cfg.vt_channels, cfg.vt_channels, 3, 1, seed)
    if cfg.path == "voxel":
        d = cfg.voxel_width_divisor
        bev = init_encoder(
            "bev3d", cfg.vt_channels // grid.Z, [w // d for w in cfg.bev_widths], cfg.bev_neck // d, seed, dims=3
        )
        head = init_voxel_head("head3d", cfg.bev_neck // d, [w // d for w in cfg.head_widths[:-1]], cfg.num_classes, seed)
    else:
        bev = init_encoder("bev", cfg.vt_channels, cfg.bev_widths, cfg.bev_neck, seed)
        if cfg.head_kind == "mso":
            head = init_mso_head(
                "head",
                (cfg.bev_neck, cfg.bev_widths[-2], cfg.bev_widths[-1]),
                cfg.head_inputs,
                cfg.head_widths,
                cfg.num_classes * grid.Z,
                seed,
            )
        else:
            head = init_flash_head("head", cfg.bev_neck, cfg.head_widths, seed)
    return Pipeline(cfg, PipelineParams(img, depth_ctx, ctx_conv, fuse, bev, head))


def infer(pipeline, frame, **kw):
    return pipeline.infer(frame, **kw)


__all__ = [
    "BEV_ENC_OCC",
    "FrameInput",
    "InferenceResult",
    "OTHERS",
    "Pipeline",
    "PipelineParams",
    "STAGES",
    "build",
    "default_rig",
    "depth_onehot",
    "frame_from_scene",
    "infer",
    "named_arrays",
    "replace_arrays",
]
