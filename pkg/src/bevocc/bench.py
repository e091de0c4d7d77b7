"""Flash vs voxel benchmark: analytic FLOPs, peak live tensor bytes, wall-clock.

FLOPs count convolutions only (multiply and add each count as one):
``2 * Cin * prod(K) * Cout * prod(out spatial)`` per batch item.
"""

import time

import numpy as np

from .pipeline import BEV_ENC_OCC, OTHERS, STAGES, build, default_rig, frame_from_scene
from .scene import generate_scene

REPORT_SCHEMA = "bevocc.bench/1"
# A stage whose median is below this many timer ticks is flagged as unreliable.
MIN_TICKS = 1000


def conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv_flops(cin, cout, kernel, out_dims, batch=1):
    return 2 * cin * int(np.prod(kernel)) * cout * int(np.prod(out_dims)) * batch


def _encoder_flops(cin, widths, neck_width, spatial, blocks=1):
    """Residual stages at strides 1, 2, 2, ... plus the FPN-LSS neck."""
    nd = len(spatial)
    k3, k1 = (3,) * nd, (1,) * nd
    total = 0
    sizes = []
    dims = tuple(spatial)
    prev = cin
    for i, w in enumerate(widths):
        for j in range(blocks):
            s = 2 if (i > 0 and j == 0) else 1
            out = tuple(conv_out(n, 3, s, 1) for n in dims)
            total += conv_flops(prev, w, k3, out)  # conv1
            total += conv_flops(w, w, k3, out)  # conv2
            if prev != w or s != 1:
                total += conv_flops(prev, w, k1, tuple(conv_out(n, 1, s, 0) for n in dims))
            dims, prev = out, w
        sizes.append(dims)
    fine = sizes[-2]
    total += conv_flops(widths[-1] + widths[-2], neck_width, k3, fine)
    dims = fine
    for _ in range(len(widths) - 2):
        dims = tuple(2 * n for n in dims)
        total += conv_flops(neck_width, neck_width, k3, dims)
    return total


def analytic_flops(config):
    """Per-stage conv FLOPs computed from the config alone."""
    cfg = config
    grid = cfg.grid
    fh, fw = cfg.feat_hw
    ncam = len(default_rig(cfg))
    f = dict.fromkeys(STAGES, 0)
    f["image_encoder"] = ncam * _encoder_flops(cfg.image_channels, cfg.image_encoder_widths, cfg.image_neck, (fh, fw))
    d_bins = int(np.floor((cfg.depth_range[1] - cfg.depth_range[0]) / cfg.depth_step_m + 1e-9))
    vt_out = d_bins + cfg.vt_channels if cfg.vt_kind == "lss" else cfg.vt_channels
    f["view_transform"] = ncam * conv_flops(cfg.image_neck, vt_out, (1, 1), (fh, fw))
    hw = (grid.H, grid.W)
    if cfg.temporal == "mono_align_concat":
        f["temporal"] = conv_flops(2 * cfg.vt_channels, cfg.vt_channels, (3, 3), hw)
    if cfg.path == "voxel":
        d = cfg.voxel_width_divisor
        zhw = (grid.Z,) + hw
        f["bev_encoder"] = _encoder_flops(
            cfg.vt_channels // grid.Z, [w // d for w in cfg.bev_widths], cfg.bev_neck // d, zhw
        )
        head, prev = 0, cfg.bev_neck // d
        for w in cfg.head_widths[:-1]:
            head += conv_flops(prev, w // d, (3, 3, 3), zhw)
            prev = w // d
        f["head"] = head + conv_flops(prev, cfg.num_classes, (1, 1, 1), zhw)
        return f
    f["bev_encoder"] = _encoder_flops(cfg.vt_channels, cfg.bev_widths, cfg.bev_neck, hw)
    head = 0
    if cfg.head_kind == "mso":
        feats = [(cfg.bev_neck, hw)]
        h2 = tuple(conv_out(n, 3, 2, 1) for n in hw)
        h4 = tuple(conv_out(n, 3, 2, 1) for n in h2)
        scales = [hw, h2, h4][: len(cfg.bev_widths)]
        feats += [(cfg.bev_widths[-2], scales[-2]), (cfg.bev_widths[-1], scales[-1])]
        for (cin, dims), lw in zip(feats, cfg.head_inputs):
            head += conv_flops(cin, lw, (1, 1), dims)
        prev = sum(cfg.head_inputs)
        for w in cfg.head_widths:
            head += conv_flops(prev, w, (3, 3), hw)
            prev = w
        head += conv_flops(prev, cfg.num_classes * grid.Z, (1, 1), hw)
    else:
        prev = cfg.bev_neck
        for w in cfg.head_widths:
            head += conv_flops(prev, w, (3, 3), hw)
            prev = w
    f["head"] = head
    return f


def flops(config, stage="total"):
    """FLOPs of one stage, a group (``"others"``, ``"bev_enc_occ"``) or ``"total"``."""
    per = analytic_flops(config)
    if stage == "total":
        return sum(per.values())
    if stage == "others":
        return sum(per[s] for s in OTHERS)
    if stage == "bev_enc_occ":
        return sum(per[s] for s in BEV_ENC_OCC)
    if stage not in per:
        raise KeyError(f"unknown stage {stage!r}")
    return per[stage]


def summarize(samples):
    a = np.asarray(samples, dtype=np.float64)
    return {
        "median": float(np.median(a)),
        "p10": float(np.percentile(a, 10)),
        "p90": float(np.percentile(a, 90)),
    }


def _time_runs(pipe, frame, warmup, iters):
    for _ in range(warmup):
        pipe.infer(frame)
    per_stage = {}
    totals = []
    for _ in range(iters):
        pipe.buffer.clear()
        res = pipe.infer(frame)
        for k, v in res.timings.items():
            per_stage.setdefault(k, []).append(v)
        for k, v in res.grouped().items():
            per_stage.setdefault(k, []).append(v)
        totals.append(res.total)
    stats = {k: summarize(v) for k, v in per_stage.items()}
    stats["total"] = summarize(totals)
    res_s = time.get_clock_info("perf_counter").resolution
    flags = [
        f"{k}: median {s['median']:.3g} s is under {MIN_TICKS} timer ticks ({res_s:.1e} s)"
        for k, s in stats.items()
        if s["median"] < MIN_TICKS * res_s
    ]
    return stats, flags


def bench_path(config, frame, warmup, iters, timing=True, parallel=False):
    from threadpoolctl import threadpool_limits

    pipe = build(config)
    tracked = pipe.infer(frame, track=True)
    pipe.buffer.clear()
    per = analytic_flops(config)
    entry = {
        "params": pipe.param_count,
        "flops": dict(per, others=sum(per[s] for s in OTHERS), bev_enc_occ=sum(per[s] for s in BEV_ENC_OCC), total=sum(per.values())),
        "tracked_flops": {k: int(v) for k, v in sorted(tracked.flops.items()) if k.startswith("conv")},
        "peak_bytes": {"bev_enc_occ": int(tracked.peak_bytes)},
        "ops": {"conv2d": int(tracked.ops["conv2d"]), "conv3d": int(tracked.ops["conv3d"])},
        "logits_shape": list(tracked.logits.shape),
    }
    del tracked
    if timing:
        with threadpool_limits(limits=1):
            serial, flags = _time_runs(pipe, frame, warmup, iters)
        entry["timing"] = {"serial": serial}
        if parallel:
            par, pflags = _time_runs(pipe, frame, warmup, iters)
            entry["timing"]["parallel"] = par
            flags += [f"parallel {s}" for s in pflags]
        entry["timing"]["flags"] = flags
    return entry


def bench(config, warmup=5, iters=50, paths=("flash", "voxel"), scene_seed=0, timing=True, parallel=False):
    """Run each path sequentially on the same synthetic frame; return a JSON-ready report."""
    if iters < 3:
        raise ValueError(f"iters must be >= 3 for percentile stats, got {iters}")
    if warmup < 0:
        raise ValueError(f"warmup must be >= 0, got {warmup}")
    scene = generate_scene(scene_seed, config.grid, default_rig(config))
    frame = frame_from_scene(scene, config)
    report = {
        "schema": REPORT_SCHEMA,
        "config": config.name,
        "scene_seed": scene_seed,
        "warmup": warmup,
        "iters": iters,
        "paths": {},
    }
    for path in paths:
        report["paths"][path] = bench_path(config.with_(path=path).validate(), frame, warmup, iters, timing, parallel)
    if "flash" in paths and "voxel" in paths:
        fl, vx = report["paths"]["flash"], report["paths"]["voxel"]
        report["ratios"] = {
            "flops_bev_enc_occ": vx["flops"]["bev_enc_occ"] / fl["flops"]["bev_enc_occ"],
            "peak_bytes_bev_enc_occ": vx["peak_bytes"]["bev_enc_occ"] / fl["peak_bytes"]["bev_enc_occ"],
        }
        if timing:
            ts_f, ts_v = fl["timing"]["serial"], vx["timing"]["serial"]
            report["timing_speedup"] = {
                "bev_enc_occ": ts_v["bev_enc_occ"]["median"] / ts_f["bev_enc_occ"]["median"],
                "total": ts_v["total"]["median"] / ts_f["total"]["median"],
            }
    return report


__all__ = ["analytic_flops", "bench", "conv_flops", "conv_out", "flops", "summarize"]
