"""Occupancy heads: BEV conv chain + channel-to-height, and the 3D-conv reference."""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, ShapeError
from .evaluation import OccupancyGrid
from .tensor import (
    F32,
    Conv2dParams,
    concat_channels,
    conv2d,
    conv3d,
    init_conv2d,
    init_conv3d,
    upsample2x_bilinear,
)


def channel_to_height(bev, num_classes, z):
    """Reinterpret ``[B, C*·Z, H, W]`` as logits ``[B, C*, Z, H, W]``.

    Channel ``k·Z + z`` becomes class ``k`` at height bin ``z``.  Returns a view;
    no value is touched.
    """
    bev = np.asarray(bev)
    if bev.ndim != 4:
        raise ShapeError(f"channel_to_height expects [B,C,H,W], got {bev.shape}")
    b, c, h, w = bev.shape
    if c != num_classes * z:
        raise ShapeError(f"channel_to_height: C={c} != num_classes*Z = {num_classes}*{z} = {num_classes * z}")
    return np.ascontiguousarray(bev).reshape(b, num_classes, z, h, w)


def height_to_channel(logits):
    """Inverse of :func:`channel_to_height`: ``[B, C*, Z, H, W] -> [B, C*·Z, H, W]``."""
    logits = np.asarray(logits)
    if logits.ndim != 5:
        raise ShapeError(f"height_to_channel expects [B,C*,Z,H,W], got {logits.shape}")
    b, k, z, h, w = logits.shape
    return np.ascontiguousarray(logits).reshape(b, k * z, h, w)


@dataclass(frozen=True)
class FlashHeadParams:
    convs: tuple  # 3x3 Conv2dParams; ReLU between, last layer linear

    def __post_init__(self):
        convs = tuple(self.convs)
        if not convs:
            raise ShapeError("flash head needs at least one conv")
        for i in range(1, len(convs)):
            if convs[i].in_channels != convs[i - 1].out_channels:
                raise ShapeError(
                    f"head layer {i} expects {convs[i].in_channels} channels, layer {i - 1} gives {convs[i - 1].out_channels}"
                )
        object.__setattr__(self, "convs", convs)

    @property
    def out_channels(self):
        return self.convs[-1].out_channels


@dataclass(frozen=True)
class MsoHeadParams:
    """Multi-scale variant: lateral 1x1s bring each input to a common width, the
    results are upsampled to the finest scale, concatenated and fed to a conv chain."""

    laterals: tuple
    head: FlashHeadParams


@dataclass(frozen=True)
class VoxelHeadParams:
    convs: tuple  # 3x3x3 Conv3dParams with ReLU
    classifier: object  # 1x1x1 Conv3dParams to C*

    @property
    def num_classes(self):
        return self.classifier.out_channels


def _check_final(width, num_classes, z):
    if width != num_classes * z:
        raise ShapeError(f"head final width {width} != num_classes*Z = {num_classes}*{z} = {num_classes * z}")


def flash_head(bev, p, num_classes, z):
    """2D conv chain then channel-to-height; no 3D convolution on this path."""
    _check_final(p.out_channels, num_classes, z)
    y = bev
    last = len(p.convs) - 1
    for i, c in enumerate(p.convs):
        y = conv2d(y, c, relu=i < last)
    return channel_to_height(y, num_classes, z)


def mso_head(features, p, num_classes, z):
    if len(features) != len(p.laterals):
        raise ShapeError(f"MSO head has {len(p.laterals)} laterals, got {len(features)} inputs")
    target = features[0].shape[2:]
    parts = []
    for f, lat in zip(features, p.laterals):
        y = conv2d(f, lat, relu=True)
        while y.shape[2] < target[0]:
            y = upsample2x_bilinear(y)
        if y.shape[2:] != target:
            raise ShapeError(f"MSO input at {f.shape[2:]} does not reach {target} by 2x upsampling")
        parts.append(y)
    cat = concat_channels(parts)
    del parts
    return flash_head(cat, p.head, num_classes, z)


def voxel_head(vox, p):
    """3x3x3 conv chain + per-voxel classifier on ``[B, Cv, Z, H, W]``."""
    y = vox
    for c in p.convs:
        y = conv3d(y, c, relu=True)
    return conv3d(y, p.classifier)


def predict_labels(logits):
    """Per-voxel argmax over classes; ties go to the lowest class index."""
    logits = np.asarray(logits)
    if logits.ndim == 4:
        logits = logits[None]
    if logits.ndim != 5:
        raise ShapeError(f"logits must be [B,C*,Z,H,W], got {logits.shape}")
    if np.isnan(logits).any():
        raise ValueError("logits contain NaN")
    labels = np.argmax(logits, axis=1).astype(np.uint8)
    grids = [OccupancyGrid(lab, logits.shape[1]) for lab in labels]
    return grids[0] if len(grids) == 1 else grids


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def init_flash_head(name, cin, widths, seed=0):
    convs = []
    prev = cin
    for i, w in enumerate(widths):
        convs.append(init_conv2d(f"{name}.conv{i}", prev, w, 3, 1, seed))
        prev = w
    return FlashHeadParams(tuple(convs))


def init_mso_head(name, feature_widths, lateral_widths, widths, final_width, seed=0):
    """Laterals map each input scale to ``lateral_widths``; 3x3 chain ``widths``; 1x1 to ``final_width``."""
    if len(feature_widths) != len(lateral_widths):
        raise ShapeError(f"{len(feature_widths)} input scales but {len(lateral_widths)} lateral widths")
    laterals = tuple(
        init_conv2d(f"{name}.lat{i}", cin, cout, 1, 1, seed, padding=0)
        for i, (cin, cout) in enumerate(zip(feature_widths, lateral_widths))
    )
    head = init_flash_head(f"{name}.mc", sum(lateral_widths), list(widths), seed)
    final = init_conv2d(f"{name}.final", widths[-1], final_width, 1, 1, seed, padding=0)
    return MsoHeadParams(laterals, FlashHeadParams(head.convs + (final,)))


def init_voxel_head(name, cin, widths, num_classes, seed=0):
    convs = []
    prev = cin
    for i, w in enumerate(widths):
        convs.append(init_conv3d(f"{name}.conv{i}", prev, w, 3, 1, seed))
        prev = w
    classifier = init_conv3d(f"{name}.cls", prev, num_classes, 1, 1, seed, padding=0)
    return VoxelHeadParams(tuple(convs), classifier)


# ---------------------------------------------------------------------------
# single-layer linear head with analytic gradients
# ---------------------------------------------------------------------------


def linear_head_loss_grad(weight, bias, features, labels, num_classes, z):
    """Mean per-voxel softmax cross-entropy of a 1x1 conv + channel-to-height head.

    ``features`` is ``[Cin, N]`` (N BEV cells), ``labels`` is ``[Z, N]``.
    Returns ``(loss, dW, db)`` in the dtype of ``weight``.
    """
    logits = (weight @ features + bias[:, None]).reshape(num_classes, z, -1)
    shifted = logits - logits.max(axis=0, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=0))
    logp = shifted - logsum
    count = labels.size
    zi, ni = np.indices(labels.shape)
    loss = -logp[labels, zi, ni].sum() / count
    g = np.exp(logp)
    g[labels, zi, ni] -= 1.0
    g = (g / count).reshape(num_classes * z, -1)
    return loss, g @ features.T, g.sum(axis=1)


def train_linear_head(bev, labels, num_classes, z, lr, steps, seed=0):
    """Plain gradient descent on the linear head; returns ``(FlashHeadParams, losses)``.

    The returned trace has ``steps + 1`` entries (initial loss included).
    """
    bev = np.asarray(bev)
    if bev.ndim != 4 or bev.shape[0] != 1:
        raise ShapeError(f"train_linear_head expects [1,Cin,H,W], got {bev.shape}")
    _, cin, h, w = bev.shape
    lab = labels.labels if isinstance(labels, OccupancyGrid) else np.asarray(labels)
    if lab.shape != (z, h, w):
        raise ShapeError(f"labels shape {lab.shape} != (Z,H,W) = {(z, h, w)}")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    x = bev[0].reshape(cin, -1).astype(np.float64)
    y = lab.reshape(z, -1).astype(np.int64)
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((num_classes * z, cin)) * 0.01
    bias = np.zeros(num_classes * z)
    losses = []
    for step in range(steps + 1):
        # a non-finite loss is reported below, not warned about
        with np.errstate(invalid="ignore", over="ignore"):
            loss, dw, db = linear_head_loss_grad(weight, bias, x, y, num_classes, z)
        if not np.isfinite(loss):
            raise DivergenceError(step, float(loss))
        losses.append(float(loss))
        if step == steps:
            break
        weight -= lr * dw
        bias -= lr * db
    conv = Conv2dParams(weight.reshape(num_classes * z, cin, 1, 1).astype(F32), bias.astype(F32), 1, 0)
    return FlashHeadParams((conv,)), losses


__all__ = [
    "FlashHeadParams",
    "MsoHeadParams",
    "VoxelHeadParams",
    "channel_to_height",
    "flash_head",
    "height_to_channel",
    "init_flash_head",
    "init_mso_head",
    "init_voxel_head",
    "linear_head_loss_grad",
    "mso_head",
    "predict_labels",
    "train_linear_head",
    "voxel_head",
]
