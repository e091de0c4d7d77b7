"""Hot inner loops, each with a numba and a numpy implementation.

The public functions dispatch on :func:`bevocc._accel.get_backend`.  Both
implementations perform floating-point accumulation in the same order, so the
two backends agree bit-for-bit; ``tests/test_backends.py`` holds them to that.
"""

import numpy as np

from ._accel import get_backend, njit

# ---------------------------------------------------------------------------
# im2col tile gather for (2D-as-3D) convolution
# ---------------------------------------------------------------------------


@njit
def _gather_tile_nb(xp, kd, kh, kw, sd, sh, sw, od, oh0, oh1, wo, col):
    cin = xp.shape[0]
    for c in range(cin):
        for a in range(kd):
            zi = od * sd + a
            for b in range(kh):
                for e in range(kw):
                    row = ((c * kd + a) * kh + b) * kw + e
                    dst = col[row]
                    k = 0
                    for oh in range(oh0, oh1):
                        src = xp[c, zi, oh * sh + b]
                        # separate unit-stride loop so llvm can vectorise the copy
                        if sw == 1:
                            for ow in range(wo):
                                dst[k + ow] = src[ow + e]
                        else:
                            for ow in range(wo):
                                dst[k + ow] = src[ow * sw + e]
                        k += wo


def _gather_tile_np(xp, kd, kh, kw, sd, sh, sw, od, oh0, oh1, wo, col):
    cin = xp.shape[0]
    nr = oh1 - oh0
    view = col.reshape(cin, kd * kh * kw, nr, wo)
    tap = 0
    for a in range(kd):
        zi = od * sd + a
        for b in range(kh):
            y0 = oh0 * sh + b
            for e in range(kw):
                view[:, tap] = xp[:, zi, y0 : y0 + (nr - 1) * sh + 1 : sh, e : e + (wo - 1) * sw + 1 : sw]
                tap += 1


def gather_tile(xp, kernel, stride, od, oh0, oh1, wo, col):
    """Fill ``col[Cin*kd*kh*kw, (oh1-oh0)*wo]`` with the receptive fields of one tile.

    ``xp`` is a padded ``[Cin, Dp, Hp, Wp]`` volume; the tile covers output depth
    slice ``od`` and output rows ``oh0:oh1``.
    """
    kd, kh, kw = kernel
    sd, sh, sw = stride
    if get_backend() == "numba":
        _gather_tile_nb(xp, kd, kh, kw, sd, sh, sw, od, oh0, oh1, wo, col)
    else:
        _gather_tile_np(xp, kd, kh, kw, sd, sh, sw, od, oh0, oh1, wo, col)


# ---------------------------------------------------------------------------
# scatter-add of point features into flat cells (splat)
# ---------------------------------------------------------------------------


@njit
def _scatter_add_nb(feat, idx, out):
    c_dim = feat.shape[0]
    for n in range(idx.shape[0]):
        m = idx[n]
        if m < 0:
            continue
        for c in range(c_dim):
            out[c, m] += feat[c, n]


def _scatter_add_np(feat, idx, out):
    keep = idx >= 0
    np.add.at(out.T, idx[keep], feat[:, keep].T)


def scatter_add(feat, idx, out):
    """``out[:, idx[n]] += feat[:, n]`` for every ``idx[n] >= 0``, in order of ``n``."""
    if get_backend() == "numba":
        _scatter_add_nb(feat, idx, out)
    else:
        _scatter_add_np(feat, idx, out)


# ---------------------------------------------------------------------------
# bilinear sampling with zero fill (BEV warping)
# ---------------------------------------------------------------------------


@njit
def _bilinear_nb(src, sx, sy, out):
    c_dim, h, w = src.shape
    ho, wo = sx.shape
    acc = np.zeros(c_dim)
    for i in range(ho):
        for j in range(wo):
            x = sx[i, j]
            y = sy[i, j]
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            acc[:] = 0.0
            for q in range(4):
                xi = x0 + (q & 1)
                yi = y0 + (q >> 1)
                wx = fx if (q & 1) else 1.0 - fx
                wy = fy if (q >> 1) else 1.0 - fy
                wgt = wx * wy
                if wgt == 0.0 or xi < 0 or yi < 0 or xi >= w or yi >= h:
                    continue
                for c in range(c_dim):
                    acc[c] += wgt * src[c, yi, xi]
            for c in range(c_dim):
                out[c, i, j] = acc[c]


def _bilinear_np(src, sx, sy, out):
    c_dim, h, w = src.shape
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    acc = np.zeros((c_dim,) + sx.shape)
    for q in range(4):
        xi = x0 + (q & 1)
        yi = y0 + (q >> 1)
        wx = fx if (q & 1) else 1.0 - fx
        wy = fy if (q >> 1) else 1.0 - fy
        wgt = wx * wy
        ok = (wgt != 0.0) & (xi >= 0) & (yi >= 0) & (xi < w) & (yi < h)
        vals = src[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
        acc += np.where(ok, wgt, 0.0) * np.where(ok, vals, 0.0)
    out[...] = acc


def bilinear_sample(src, sx, sy):
    """Sample ``src[C, H, W]`` at fractional cell indices ``(sx, sy)``; outside reads 0."""
    src = np.ascontiguousarray(src, dtype=np.float32)
    sx = np.ascontiguousarray(sx, dtype=np.float64)
    sy = np.ascontiguousarray(sy, dtype=np.float64)
    out = np.empty((src.shape[0],) + sx.shape, dtype=np.float32)
    if get_backend() == "numba":
        _bilinear_nb(src, sx, sy, out)
    else:
        _bilinear_np(src, sx, sy, out)
    return out


# ---------------------------------------------------------------------------
# 2x linear upsampling along the last axis (align_corners=False)
# ---------------------------------------------------------------------------


def _upsample_taps(n):
    o = np.arange(2 * n)
    src = np.maximum((o + 0.5) / 2.0 - 0.5, 0.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    w1 = (src - i0).astype(np.float32)
    w0 = (1.0 - (src - i0)).astype(np.float32)
    return i0, i1, w0, w1


@njit
def _upsample_last_nb(x, i0, i1, w0, w1, out):
    rows, m = out.shape
    for r in range(rows):
        for o in range(m):
            out[r, o] = w0[o] * x[r, i0[o]] + w1[o] * x[r, i1[o]]


def _upsample_last_np(x, i0, i1, w0, w1, out):
    out[...] = w0 * x[:, i0] + w1 * x[:, i1]


def upsample2x_last(x):
    """Double the last axis of a 2D ``[rows, n]`` float32 array by linear interpolation."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    rows, n = x.shape
    i0, i1, w0, w1 = _upsample_taps(n)
    out = np.empty((rows, 2 * n), dtype=np.float32)
    if get_backend() == "numba":
        _upsample_last_nb(x, i0, i1, w0, w1, out)
    else:
        _upsample_last_np(x, i0, i1, w0, w1, out)
    return out


# ---------------------------------------------------------------------------
# voxel ray traversal (visibility)
# ---------------------------------------------------------------------------


@njit
def _dda_nb(occ, origin, res, cam, targets, out):
    nz, ny, nx = occ.shape
    dims = np.array([nx, ny, nz])
    lo = origin
    hi = np.empty(3)
    for a in range(3):
        hi[a] = origin[a] + dims[a] * res[a]
    d = np.empty(3)
    cell = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    tmax = np.empty(3)
    tdelta = np.empty(3)
    max_steps = nx + ny + nz + 3
    for n in range(targets.shape[0]):
        tx, ty, tz = targets[n, 0], targets[n, 1], targets[n, 2]
        tgt = (tx, ty, tz)
        t0 = 0.0
        t1 = 1.0
        for a in range(3):
            p = lo[a] + (tgt[a] + 0.5) * res[a]
            d[a] = p - cam[a]
            if d[a] != 0.0:
                ta = (lo[a] - cam[a]) / d[a]
                tb = (hi[a] - cam[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                t0 = max(t0, ta)
                t1 = min(t1, tb)
        for a in range(3):
            q = cam[a] + t0 * d[a]
            c = int(np.floor((q - lo[a]) / res[a]))
            cell[a] = min(max(c, 0), dims[a] - 1)
            if d[a] > 0.0:
                step[a] = 1
                tmax[a] = (lo[a] + (cell[a] + 1) * res[a] - cam[a]) / d[a]
                tdelta[a] = res[a] / d[a]
            elif d[a] < 0.0:
                step[a] = -1
                tmax[a] = (lo[a] + cell[a] * res[a] - cam[a]) / d[a]
                tdelta[a] = -res[a] / d[a]
            else:
                step[a] = 0
                tmax[a] = np.inf
                tdelta[a] = np.inf
        visible = True
        for _ in range(max_steps):
            if cell[0] == tx and cell[1] == ty and cell[2] == tz:
                break
            if occ[cell[2], cell[1], cell[0]]:
                visible = False
                break
            a = 0
            if tmax[1] < tmax[a]:
                a = 1
            if tmax[2] < tmax[a]:
                a = 2
            cell[a] += step[a]
            tmax[a] += tdelta[a]
            if cell[a] < 0 or cell[a] >= dims[a]:
                break
        out[n] = visible


def _dda_np(occ, origin, res, cam, targets, out):
    nz, ny, nx = occ.shape
    dims = np.array([nx, ny, nz])
    lo = origin
    hi = origin + dims * res
    tgt = targets.astype(np.int64)
    p = lo + (tgt + 0.5) * res
    d = p - cam
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo - cam) / d
        tb = (hi - cam) / d
        tlo = np.where(d != 0.0, np.minimum(ta, tb), -np.inf)
        thi = np.where(d != 0.0, np.maximum(ta, tb), np.inf)
        t0 = np.maximum(0.0, tlo.max(axis=1))
        q = cam + t0[:, None] * d
        cell = np.clip(np.floor((q - lo) / res).astype(np.int64), 0, dims - 1)
        step = np.sign(d).astype(np.int64)
        nxt = lo + (cell + (step > 0)) * res
        tmax = np.where(d != 0.0, (nxt - cam) / d, np.inf)
        tdelta = np.where(d != 0.0, res / np.abs(d), np.inf)
    del thi
    n = tgt.shape[0]
    visible = np.ones(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    rows = np.arange(n)
    for _ in range(nx + ny + nz + 3):
        if not active.any():
            break
        ids = rows[active]
        c = cell[ids]
        reached = np.all(c == tgt[ids], axis=1)
        blocked = ~reached & occ[c[:, 2], c[:, 1], c[:, 0]]
        visible[ids[blocked]] = False
        active[ids[reached | blocked]] = False
        ids = ids[~(reached | blocked)]
        if ids.size == 0:
            break
        tm = tmax[ids]
        a = np.argmin(tm, axis=1)
        cell[ids, a] += step[ids, a]
        tmax[ids, a] += tdelta[ids, a]
        gone = (cell[ids, a] < 0) | (cell[ids, a] >= dims[a])
        active[ids[gone]] = False
    out[:] = visible


def dda_visible(occ, origin, res, cam, targets):
    """For each target voxel ``(ix, iy, iz)``, trace the segment from ``cam`` to its
    center through ``occ[Z, Y, X]`` and report whether no other occupied voxel is
    crossed first.
    """
    occ = np.ascontiguousarray(occ, dtype=np.bool_)
    origin = np.asarray(origin, dtype=np.float64)
    res = np.asarray(res, dtype=np.float64)
    cam = np.asarray(cam, dtype=np.float64)
    targets = np.ascontiguousarray(targets, dtype=np.int64).reshape(-1, 3)
    out = np.empty(targets.shape[0], dtype=np.bool_)
    if targets.shape[0] == 0:
        return out
    if get_backend() == "numba":
        _dda_nb(occ, origin, res, cam, targets, out)
    else:
        _dda_np(occ, origin, res, cam, targets, out)
    return out
