"""Dense float32 tensor kernels: convolution, normalisation, resampling, reshapes.

Tensors are plain C-contiguous ``numpy.float32`` arrays.  Every op that
allocates a fresh output reports it to the active :class:`TensorTracker`
(if any), which is how the benchmark measures peak live tensor bytes and
counts 2D/3D convolutions.
"""

import weakref
import zlib
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError

F32 = np.float32

# Upper bound on im2col tile elements (float32), ~16 MiB.
TILE_ELEMS = 1 << 22

_trackers = []


class TensorTracker:
    """Allocator shim: accounts live logical tensor bytes and op counts.

    Tracks op *outputs* only; kernel scratch (padding copies, im2col tiles) is
    not logical tensor memory.  Liveness follows CPython reference counting:
    an output stops counting as soon as its last reference is dropped.
    """

    def __init__(self):
        self.live_bytes = 0
        self.peak_bytes = 0
        self.ops = Counter()
        self.flops = Counter()

    def __enter__(self):
        _trackers.append(self)
        return self

    def __exit__(self, *exc):
        _trackers.remove(self)
        return False

    def adopt(self, arr):
        """Count an already-existing array (e.g. a stage input) as live."""
        self._alloc(arr)
        return arr

    def _alloc(self, arr):
        nbytes = int(arr.nbytes)
        self.live_bytes += nbytes
        self.peak_bytes = max(self.peak_bytes, self.live_bytes)
        weakref.finalize(arr, self._free, nbytes)

    def _free(self, nbytes):
        self.live_bytes -= nbytes


def _record(kind, out, flops=0):
    for t in _trackers:
        t.ops[kind] += 1
        t.flops[kind] += flops
        t._alloc(out)
    return out


# ---------------------------------------------------------------------------
# parameters and initialisation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2dParams:
    weight: np.ndarray  # [Cout, Cin, Kh, Kw]
    bias: np.ndarray  # [Cout]
    stride: int = 1
    padding: int = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=F32)
        b = np.ascontiguousarray(self.bias, dtype=F32)
        if w.ndim != 4:
            raise ShapeError(f"conv2d weight must be 4D [Cout,Cin,Kh,Kw], got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv2d bias shape {b.shape} != ({w.shape[0]},)")
        if w.shape[2] % 2 == 0 or w.shape[3] % 2 == 0:
            raise ShapeError(f"conv2d kernel must be odd, got {w.shape[2:]}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        pad = w.shape[2] // 2 if self.padding is None else self.padding
        if pad < 0:
            raise ShapeError(f"padding must be non-negative, got {pad}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "padding", int(pad))

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]


@dataclass(frozen=True)
class Conv3dParams:
    weight: np.ndarray  # [Cout, Cin, Kd, Kh, Kw]
    bias: np.ndarray
    stride: int = 1
    padding: int = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weight, dtype=F32)
        b = np.ascontiguousarray(self.bias, dtype=F32)
        if w.ndim != 5:
            raise ShapeError(f"conv3d weight must be 5D [Cout,Cin,Kd,Kh,Kw], got {w.shape}")
        if b.shape != (w.shape[0],):
            raise ShapeError(f"conv3d bias shape {b.shape} != ({w.shape[0]},)")
        if any(k % 2 == 0 for k in w.shape[2:]):
            raise ShapeError(f"conv3d kernel must be odd, got {w.shape[2:]}")
        if self.stride < 1:
            raise ShapeError(f"stride must be positive, got {self.stride}")
        pad = w.shape[2] // 2 if self.padding is None else self.padding
        if pad < 0:
            raise ShapeError(f"padding must be non-negative, got {pad}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "padding", int(pad))

    @property
    def in_channels(self):
        return self.weight.shape[1]

    @property
    def out_channels(self):
        return self.weight.shape[0]


def param_rng(seed, name):
    """Deterministic generator for one named parameter."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def init_conv2d(name, cin, cout, k=3, stride=1, seed=0, padding=None):
    """He (fan-in) normal init, zero bias."""
    std = np.sqrt(2.0 / (cin * k * k))
    w = param_rng(seed, name).standard_normal((cout, cin, k, k)) * std
    return Conv2dParams(w.astype(F32), np.zeros(cout, F32), stride, padding)


def init_conv3d(name, cin, cout, k=3, stride=1, seed=0, padding=None):
    std = np.sqrt(2.0 / (cin * k**3))
    w = param_rng(seed, name).standard_normal((cout, cin, k, k, k)) * std
    return Conv3dParams(w.astype(F32), np.zeros(cout, F32), stride, padding)


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _out_size(n, k, s, p, axis):
    # floor semantics: a stride-2 3x3 conv maps 200 -> 100
    span = n + 2 * p - k
    if span < 0:
        raise ShapeError(f"axis {axis}: in={n} + 2*pad={p} is smaller than kernel {k}")
    return span // s + 1


def _conv5(x, w, bias, stride, pad):
    b_dim, cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    sd, sh, sw = stride
    pd, ph, pw = pad
    do = _out_size(d, kd, sd, pd, "depth")
    ho = _out_size(h, kh, sh, ph, "height")
    wo = _out_size(wd, kw, sw, pw, "width")
    out = np.empty((b_dim, cout, do, ho, wo), dtype=F32)
    w2 = w.reshape(cout, -1)
    krows = w2.shape[1]

    if kd == kh == kw == 1 and stride == (1, 1, 1) and pad == (0, 0, 0):
        for b in range(b_dim):
            np.matmul(w2, x[b].reshape(cin, -1), out=out[b].reshape(cout, -1))
    else:
        rows = max(1, min(ho, TILE_ELEMS // max(1, krows * wo)))
        col_buf = np.empty(krows * rows * wo, dtype=F32)
        tmp_buf = np.empty(cout * rows * wo, dtype=F32)
        for b in range(b_dim):
            xb = x[b]
            if pd or ph or pw:
                xb = np.pad(xb, ((0, 0), (pd, pd), (ph, ph), (pw, pw)))
            xb = np.ascontiguousarray(xb)
            ob = out[b].reshape(cout, do, ho * wo)
            for od in range(do):
                for oh0 in range(0, ho, rows):
                    oh1 = min(ho, oh0 + rows)
                    n = (oh1 - oh0) * wo
                    col = col_buf[: krows * n].reshape(krows, n)
                    kernels.gather_tile(xb, (kd, kh, kw), stride, od, oh0, oh1, wo, col)
                    tmp = tmp_buf[: cout * n].reshape(cout, n)
                    np.matmul(w2, col, out=tmp)
                    ob[:, od, oh0 * wo : oh1 * wo] = tmp
    out += bias[None, :, None, None, None]
    return out


def conv2d(x, p, relu=False):
    """Zero-padded 2D cross-correlation ``[B,Cin,H,W] -> [B,Cout,H',W']``.

    ``relu=True`` fuses the activation into the output buffer.
    """
    x = np.asarray(x, dtype=F32)
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [B,Cin,H,W], got shape {x.shape}")
    if x.shape[1] != p.in_channels:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape} has Cin={x.shape[1]}, weight {p.weight.shape} expects {p.in_channels}"
        )
    x5 = np.ascontiguousarray(x)[:, :, None]
    w5 = p.weight[:, :, None]
    out = _conv5(x5, w5, p.bias, (1, p.stride, p.stride), (0, p.padding, p.padding))[:, :, 0]
    if relu:
        np.maximum(out, 0, out=out)
    _, cout, ho, wo = out.shape
    kh, kw = p.weight.shape[2:]
    return _record("conv2d", out, 2 * p.in_channels * kh * kw * cout * ho * wo * x.shape[0])


def conv3d(x, p, relu=False):
    """Zero-padded 3D cross-correlation ``[B,Cin,Z,H,W] -> [B,Cout,Z',H',W']``."""
    x = np.asarray(x, dtype=F32)
    if x.ndim != 5:
        raise ShapeError(f"conv3d expects [B,Cin,Z,H,W], got shape {x.shape}")
    if x.shape[1] != p.in_channels:
        raise ShapeError(
            f"conv3d channel mismatch: input {x.shape} has Cin={x.shape[1]}, weight {p.weight.shape} expects {p.in_channels}"
        )
    s, q = p.stride, p.padding
    out = _conv5(np.ascontiguousarray(x), p.weight, p.bias, (s, s, s), (q, q, q))
    if relu:
        np.maximum(out, 0, out=out)
    _, cout, do, ho, wo = out.shape
    kd, kh, kw = p.weight.shape[2:]
    return _record("conv3d", out, 2 * p.in_channels * kd * kh * kw * cout * do * ho * wo * x.shape[0])


# ---------------------------------------------------------------------------
# elementwise / normalisation
# ---------------------------------------------------------------------------


def relu(t):
    return _record("relu", np.maximum(np.asarray(t, dtype=F32), F32(0)))


def batch_norm_inference(t, mean, var, gamma, beta, eps=1e-5):
    """Per-channel (axis 1) affine normalisation with frozen statistics."""
    if not eps > 0:
        raise ValueError(f"batch_norm eps must be positive, got {eps}")
    t = np.asarray(t, dtype=F32)
    c = t.shape[1]
    stats = [np.asarray(a, dtype=F32).reshape(-1) for a in (mean, var, gamma, beta)]
    for name, a in zip(("mean", "var", "gamma", "beta"), stats):
        if a.shape != (c,):
            raise ShapeError(f"batch_norm {name} has length {a.shape[0]}, channel dim is {c}")
    mean, var, gamma, beta = stats
    shape = (1, c) + (1,) * (t.ndim - 2)
    scale = (gamma / np.sqrt(var + F32(eps))).reshape(shape)
    out = (t - mean.reshape(shape)) * scale + beta.reshape(shape)
    return _record("batch_norm", out.astype(F32, copy=False))


def softmax_axis(t, axis):
    t = np.asarray(t)
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for {t.ndim}-d tensor")
    z = t.astype(np.float64)
    z = np.exp(z - z.max(axis=axis, keepdims=True))
    z /= z.sum(axis=axis, keepdims=True)
    return _record("softmax", z.astype(F32))


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------


def _upsample_trailing(t, naxes):
    t = np.ascontiguousarray(t, dtype=F32)
    lead = t.shape[: t.ndim - naxes]
    for _ in range(naxes):
        # upsample the last axis, then rotate it to the front of the spatial block
        n = t.shape[-1]
        up = kernels.upsample2x_last(t.reshape(-1, n)).reshape(t.shape[:-1] + (2 * n,))
        k = len(lead)
        t = np.ascontiguousarray(np.moveaxis(up, -1, k))
    return t


def upsample2x_bilinear(t):
    """Bilinear 2x upsampling of ``[B,C,H,W]`` (align_corners=False, edge clamp)."""
    t = np.asarray(t, dtype=F32)
    if t.ndim != 4 or min(t.shape[2:]) < 1:
        raise ShapeError(f"upsample2x_bilinear expects [B,C,H,W] with H,W>=1, got {t.shape}")
    return _record("upsample", _upsample_trailing(t, 2))


def upsample2x_trilinear(t):
    """Trilinear 2x upsampling of ``[B,C,Z,H,W]``; the 3D analogue used by voxel necks."""
    t = np.asarray(t, dtype=F32)
    if t.ndim != 5 or min(t.shape[2:]) < 1:
        raise ShapeError(f"upsample2x_trilinear expects [B,C,Z,H,W], got {t.shape}")
    return _record("upsample", _upsample_trailing(t, 3))


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def reshape(t, new_shape):
    t = np.asarray(t)
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} elements) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def permute(t, axis_order):
    t = np.asarray(t)
    order = tuple(int(a) for a in axis_order)
    if sorted(order) != list(range(t.ndim)):
        raise ShapeError(f"{order} is not a permutation of {t.ndim} axes")
    return _record("permute", np.ascontiguousarray(np.transpose(t, order)))


def concat_channels(tensors):
    return _record("concat", np.concatenate([np.asarray(a, dtype=F32) for a in tensors], axis=1))
