"""Residual backbone + FPN-LSS neck, in 2D (BEV / image) or 3D (voxel reference).

Every function here dispatches on tensor rank: 4D inputs run 2D convolutions,
5D inputs run the 3D twins.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import (
    Conv2dParams,
    Conv3dParams,
    batch_norm_inference,
    concat_channels,
    conv2d,
    conv3d,
    init_conv2d,
    init_conv3d,
    upsample2x_bilinear,
    upsample2x_trilinear,
)


@dataclass(frozen=True)
class BatchNormParams:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5

    @classmethod
    def identity(cls, c):
        return cls(np.zeros(c, np.float32), np.ones(c, np.float32), np.ones(c, np.float32), np.zeros(c, np.float32))


@dataclass(frozen=True)
class ResidualBlockParams:
    conv1: object  # 3x3(x3), carries the stride
    bn1: BatchNormParams
    conv2: object
    bn2: BatchNormParams
    proj: object = None  # 1x1(x1) projection when channels or stride change
    proj_bn: BatchNormParams = None

    @property
    def in_channels(self):
        return self.conv1.in_channels

    @property
    def out_channels(self):
        return self.conv2.out_channels

    @property
    def stride(self):
        return self.conv1.stride


@dataclass(frozen=True)
class NeckParams:
    fuse: object  # 3x3 conv on concat(up(coarse), fine)
    up_convs: tuple = ()  # 3x3 convs after each further 2x upsample

    @property
    def out_channels(self):
        return (self.up_convs[-1] if self.up_convs else self.fuse).out_channels


@dataclass(frozen=True)
class EncoderParams:
    stages: tuple  # tuple of tuples of ResidualBlockParams
    neck: NeckParams = None
    widths: tuple = field(default=())

    def __post_init__(self):
        prev = None
        for i, stage in enumerate(self.stages):
            for blk in stage:
                if prev is not None and blk.in_channels != prev:
                    raise ShapeError(f"stage {i}: block expects {blk.in_channels} channels, previous stage gives {prev}")
                prev = blk.out_channels


def _ops(x):
    if x.ndim == 5:
        return conv3d, upsample2x_trilinear
    if x.ndim == 4:
        return conv2d, upsample2x_bilinear
    raise ShapeError(f"expected a 4D or 5D feature tensor, got shape {x.shape}")


def _bn(x, p):
    return batch_norm_inference(x, p.mean, p.var, p.gamma, p.beta, p.eps)


def residual_block(x, p):
    """``relu(bn(conv(relu(bn(conv(x))))) + project(x))``."""
    conv, _ = _ops(x)
    y = conv(x, p.conv1)
    y = _bn(y, p.bn1)
    np.maximum(y, 0, out=y)
    y = conv(y, p.conv2)
    y = _bn(y, p.bn2)
    if p.proj is None:
        if y.shape != x.shape:
            raise ShapeError(f"residual branch gives {y.shape} but identity shortcut is {x.shape}; a projection is required")
        y += x
    else:
        s = _bn(conv(x, p.proj), p.proj_bn)
        if s.shape != y.shape:
            raise ShapeError(f"projection gives {s.shape}, branch gives {y.shape}")
        y += s
        del s
    np.maximum(y, 0, out=y)
    return y


def encode(x, p):
    """Run all stages; return ``(fine, coarse)``, the last two stage outputs."""
    if len(p.stages) < 2:
        raise ShapeError("encoder needs at least two stages to produce (fine, coarse)")
    first = p.stages[0][0]
    if x.shape[1] != first.in_channels:
        raise ShapeError(f"encoder input has {x.shape[1]} channels, stage 0 expects {first.in_channels}")
    fine = None
    y = x
    for i, stage in enumerate(p.stages):
        for blk in stage:
            y = residual_block(y, blk)
        if i == len(p.stages) - 2:
            fine = y
    return fine, y


def fpn_lss_fuse(fine, coarse, conv):
    """``conv(concat(upsample2x(coarse), fine))`` at the fine resolution."""
    _, up = _ops(fine)
    if coarse.ndim != fine.ndim or tuple(2 * s for s in coarse.shape[2:]) != fine.shape[2:]:
        raise ShapeError(f"coarse spatial dims {coarse.shape[2:]} must be exactly half of fine {fine.shape[2:]}")
    cat = concat_channels([up(coarse), fine])
    conv_fn, _ = _ops(fine)
    return conv_fn(cat, conv, relu=True)


def neck(fine, coarse, p):
    """FPN-LSS fuse, then upsample back to the encoder input resolution."""
    conv_fn, up = _ops(fine)
    y = fpn_lss_fuse(fine, coarse, p.fuse)
    for c in p.up_convs:
        y = conv_fn(up(y), c, relu=True)
    return y


def encode_and_fuse(x, p):
    fine, coarse = encode(x, p)
    return neck(fine, coarse, p.neck)


# ---------------------------------------------------------------------------
# seeded construction
# ---------------------------------------------------------------------------


def init_residual_block(name, cin, cout, stride=1, seed=0, dims=2):
    init = init_conv3d if dims == 3 else init_conv2d
    proj = proj_bn = None
    if cin != cout or stride != 1:
        proj = init(f"{name}.proj", cin, cout, k=1, stride=stride, seed=seed, padding=0)
        proj_bn = BatchNormParams.identity(cout)
    return ResidualBlockParams(
        init(f"{name}.conv1", cin, cout, 3, stride, seed),
        BatchNormParams.identity(cout),
        init(f"{name}.conv2", cout, cout, 3, 1, seed),
        BatchNormParams.identity(cout),
        proj,
        proj_bn,
    )


def init_encoder(name, cin, widths, neck_width, seed=0, dims=2, blocks_per_stage=1):
    """Stages at strides 1, 2, 2, ...; neck restores stage-0 resolution."""
    init = init_conv3d if dims == 3 else init_conv2d
    stages = []
    prev = cin
    for i, w in enumerate(widths):
        blocks = []
        for j in range(blocks_per_stage):
            stride = 2 if (i > 0 and j == 0) else 1
            blocks.append(init_residual_block(f"{name}.s{i}.b{j}", prev, w, stride, seed, dims))
            prev = w
        stages.append(tuple(blocks))
    fuse = init(f"{name}.neck.fuse", widths[-1] + widths[-2], neck_width, 3, 1, seed)
    ups = tuple(init(f"{name}.neck.up{k}", neck_width, neck_width, 3, 1, seed) for k in range(len(widths) - 2))
    return EncoderParams(tuple(stages), NeckParams(fuse, ups), tuple(widths))


def iter_convs(p):
    """Yield ``(name, conv_params)`` in execution order (used for flop accounting and checkpoints)."""
    for i, stage in enumerate(p.stages):
        for j, blk in enumerate(stage):
            yield f"s{i}.b{j}.conv1", blk.conv1
            yield f"s{i}.b{j}.conv2", blk.conv2
            if blk.proj is not None:
                yield f"s{i}.b{j}.proj", blk.proj
    if p.neck is not None:
        yield "neck.fuse", p.neck.fuse
        for k, c in enumerate(p.neck.up_convs):
            yield f"neck.up{k}", c


__all__ = [
    "BatchNormParams",
    "Conv2dParams",
    "Conv3dParams",
    "EncoderParams",
    "NeckParams",
    "ResidualBlockParams",
    "encode",
    "encode_and_fuse",
    "fpn_lss_fuse",
    "init_encoder",
    "init_residual_block",
    "neck",
    "residual_block",
]
