"""Slow, independent reference implementations used by the tests.

Nothing here imports the package's kernels; everything runs in float64 with
plain loops so disagreements point at the fast paths.
"""

import itertools
import math

import numpy as np


def conv2d_naive(x, w, b, stride=1, pad=None):
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    pad = kh // 2 if pad is None else pad
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = float(b[o])
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                y = i * stride + p - pad
                                xx = j * stride + q - pad
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += float(w[o, c, p, q]) * float(x[n, c, y, xx])
                    out[n, o, i, j] = acc
    return out


def conv3d_naive(x, w, b, stride=1, pad=None):
    bsz, cin, d, h, wd = x.shape
    cout, _, kd, kh, kw = w.shape
    pad = kd // 2 if pad is None else pad
    do = (d + 2 * pad - kd) // stride + 1
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, cout, do, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for a, i, j in itertools.product(range(do), range(ho), range(wo)):
                acc = float(b[o])
                for c in range(cin):
                    for r, p, q in itertools.product(range(kd), range(kh), range(kw)):
                        z = a * stride + r - pad
                        y = i * stride + p - pad
                        xx = j * stride + q - pad
                        if 0 <= z < d and 0 <= y < h and 0 <= xx < wd:
                            acc += float(w[o, c, r, p, q]) * float(x[n, c, z, y, xx])
                out[n, o, a, i, j] = acc
    return out


def _lerp_taps(o, n):
    """Source taps for output index ``o`` of a 2x align_corners=False upsample of length ``n``."""
    s = max((o + 0.5) / 2.0 - 0.5, 0.0)
    i0 = min(int(math.floor(s)), n - 1)
    i1 = min(i0 + 1, n - 1)
    f = s - i0
    return ((i0, 1.0 - f), (i1, f))


def upsample2x_naive(t):
    """Separable-by-definition loop over every output element (any number of trailing axes >= 2)."""
    lead = t.shape[:2]
    sp = t.shape[2:]
    out = np.zeros(lead + tuple(2 * n for n in sp))
    for b, c in itertools.product(range(lead[0]), range(lead[1])):
        for idx in itertools.product(*[range(2 * n) for n in sp]):
            acc = 0.0
            for taps in itertools.product(*[_lerp_taps(o, n) for o, n in zip(idx, sp)]):
                wgt = 1.0
                src = []
                for i, f in taps:
                    wgt *= f
                    src.append(i)
                acc += wgt * float(t[(b, c) + tuple(src)])
            out[(b, c) + idx] = acc
    return out


def softmax_naive(t, axis):
    t = np.moveaxis(np.asarray(t, dtype=np.float64), axis, -1)
    out = np.zeros_like(t)
    for idx in np.ndindex(t.shape[:-1]):
        row = t[idx]
        m = max(row)
        e = [math.exp(v - m) for v in row]
        s = sum(e)
        out[idx] = [v / s for v in e]
    return np.moveaxis(out, -1, axis)


def bn_naive(x, mean, var, gamma, beta, eps):
    out = np.zeros(x.shape)
    for idx in np.ndindex(x.shape):
        c = idx[1]
        out[idx] = (float(x[idx]) - float(mean[c])) / math.sqrt(float(var[c]) + eps) * float(gamma[c]) + float(beta[c])
    return out


def homogeneous(rot, trans):
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = trans
    return m


def splat_naive(points, feats, grid):
    """Loop over points: ``points[N,3]`` ego, ``feats[C,N]`` -> ``(bev[C,H,W], in_range_mass[C])``."""
    c = feats.shape[0]
    bev = np.zeros((c, grid.H, grid.W))
    mass = np.zeros(c)
    for n in range(points.shape[0]):
        x, y, z = points[n]
        i = math.floor((x - grid.x_min) / grid.xy_res)
        j = math.floor((y - grid.y_min) / grid.xy_res)
        k = math.floor((z - grid.z_min) / grid.z_res)
        if 0 <= i < grid.W and 0 <= j < grid.H and 0 <= k < grid.Z:
            bev[:, j, i] += feats[:, n]
            mass += feats[:, n]
    return bev, mass


def warp_naive(history, pose_hist, pose_cur, grid):
    """Dense per-cell warp: each current cell center -> history frame via 4x4 matrices,
    then 4-tap bilinear with out-of-grid taps reading zero."""
    m_hist = homogeneous(pose_hist.rotation, pose_hist.translation)
    m_cur = homogeneous(pose_cur.rotation, pose_cur.translation)
    rel = np.linalg.inv(m_hist) @ m_cur
    yaw = math.atan2(rel[1, 0], rel[0, 0])
    cs, sn = math.cos(yaw), math.sin(yaw)
    b, c, h, w = history.shape
    out = np.zeros(history.shape)
    for j in range(h):
        for i in range(w):
            px = grid.x_min + (i + 0.5) * grid.xy_res
            py = grid.y_min + (j + 0.5) * grid.xy_res
            hx = cs * px - sn * py + rel[0, 3]
            hy = sn * px + cs * py + rel[1, 3]
            fx = (hx - grid.x_min) / grid.xy_res - 0.5
            fy = (hy - grid.y_min) / grid.xy_res - 0.5
            x0, y0 = math.floor(fx), math.floor(fy)
            ax, ay = fx - x0, fy - y0
            for dx, dy, wgt in ((0, 0, (1 - ax) * (1 - ay)), (1, 0, ax * (1 - ay)), (0, 1, (1 - ax) * ay), (1, 1, ax * ay)):
                xi, yi = x0 + dx, y0 + dy
                if 0 <= xi < w and 0 <= yi < h:
                    out[:, :, j, i] += wgt * history[:, :, yi, xi]
    return out


def confusion_naive(pred, gt, mask=None, n=18):
    m = np.zeros((n, n), dtype=np.int64)
    for idx in np.ndindex(gt.shape):
        if mask is None or mask[idx]:
            m[int(gt[idx]), int(pred[idx])] += 1
    return m


def miou_naive(m, classes):
    ious = []
    for c in classes:
        tp = m[c, c]
        fp = sum(m[g, c] for g in range(m.shape[0])) - tp
        fn = sum(m[c, p] for p in range(m.shape[0])) - tp
        if tp + fp + fn:
            ious.append(tp / (tp + fp + fn))
    return math.fsum(ious) / len(ious) if ious else float("nan")


def _segment_box(p0, p1, lo, hi):
    """Parameter interval of segment p0->p1 (t in [0,1]) inside the open box (lo, hi), or None."""
    t0, t1 = 0.0, 1.0
    for a in range(3):
        d = p1[a] - p0[a]
        if d == 0.0:
            if not (lo[a] < p0[a] < hi[a]):
                return None
            continue
        ta = (lo[a] - p0[a]) / d
        tb = (hi[a] - p0[a]) / d
        if ta > tb:
            ta, tb = tb, ta
        t0, t1 = max(t0, ta), min(t1, tb)
        if t0 >= t1:
            return None
    return t0, t1


def visible_naive(occ, origin, res, cam, target):
    """Exact occlusion test: the segment from ``cam`` to the target voxel center must not
    pass through the interior of any other occupied voxel."""
    tx, ty, tz = target
    p1 = [origin[a] + (target[a] + 0.5) * res[a] for a in range(3)]
    for z, y, x in zip(*np.nonzero(occ)):
        if (x, y, z) == (tx, ty, tz):
            continue
        lo = [origin[0] + x * res[0], origin[1] + y * res[1], origin[2] + z * res[2]]
        hi = [lo[a] + res[a] for a in range(3)]
        if _segment_box(cam, p1, lo, hi) is not None:
            return False
    return True


def box_hit_naive(origin, direction, center, rot, size):
    """Ray/oriented-box slab test; returns entry parameter or inf."""
    o = rot.T @ (np.asarray(origin) - center)
    d = rot.T @ np.asarray(direction)
    t0, t1 = -math.inf, math.inf
    for a in range(3):
        h = size[a] / 2
        if d[a] == 0:
            if abs(o[a]) > h:
                return math.inf
            continue
        ta, tb = (-h - o[a]) / d[a], (h - o[a]) / d[a]
        t0, t1 = max(t0, min(ta, tb)), min(t1, max(ta, tb))
    return t0 if t0 <= t1 and t0 > 0 else math.inf


def cylinder_hit_naive(origin, direction, center, rot, radius, height):
    """Ray/vertical-cylinder test by solving the side quadratic and both caps separately."""
    o = rot.T @ (np.asarray(origin) - center)
    d = rot.T @ np.asarray(direction)
    best = math.inf
    a = d[0] ** 2 + d[1] ** 2
    if a > 0:
        bq = 2 * (o[0] * d[0] + o[1] * d[1])
        cq = o[0] ** 2 + o[1] ** 2 - radius**2
        disc = bq * bq - 4 * a * cq
        if disc >= 0:
            for t in ((-bq - math.sqrt(disc)) / (2 * a), (-bq + math.sqrt(disc)) / (2 * a)):
                if t > 0 and abs(o[2] + t * d[2]) <= height / 2:
                    best = min(best, t)
    if d[2] != 0:
        for zc in (-height / 2, height / 2):
            t = (zc - o[2]) / d[2]
            if t > 0 and (o[0] + t * d[0]) ** 2 + (o[1] + t * d[1]) ** 2 <= radius**2:
                best = min(best, t)
    return best
