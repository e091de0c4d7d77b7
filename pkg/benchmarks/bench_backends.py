"""Time each hot kernel and one small end-to-end inference under both backends.

    python benchmarks/bench_backends.py [--repeat 5] [--json out.json]

The numba timings exclude compilation: every case runs once before timing.
"""

import argparse
import json
import time

import numpy as np
from threadpoolctl import threadpool_limits

from bevocc import _accel, kernels
from bevocc.config import small_config
from bevocc.pipeline import build, default_rig, frame_from_scene
from bevocc.scene import generate_scene


def _cases(rng):
    xp = rng.standard_normal((64, 1, 102, 102)).astype(np.float32)
    col = np.empty((64 * 9, 16 * 100), np.float32)

    feat = rng.standard_normal((64, 200_000)).astype(np.float32)
    idx = rng.integers(-1, 200 * 200, 200_000)
    cells = np.zeros((64, 200 * 200), np.float32)

    src = rng.standard_normal((64, 200, 200)).astype(np.float32)
    sx = rng.uniform(-2, 202, (200, 200))
    sy = rng.uniform(-2, 202, (200, 200))

    rows = rng.standard_normal((64 * 100, 100)).astype(np.float32)

    occ = rng.random((16, 64, 64)) < 0.03
    targets = np.argwhere(rng.random((16, 64, 64)) < 0.05)[:, ::-1]

    def scatter():
        cells[...] = 0.0
        kernels.scatter_add(feat, idx, cells)

    return {
        "gather_tile 64ch 3x3 16 rows": lambda: kernels.gather_tile(xp, (1, 3, 3), (1, 1, 1), 0, 0, 16, 100, col),
        "scatter_add 200k pts x 64ch": scatter,
        "bilinear_sample 64x200x200": lambda: kernels.bilinear_sample(src, sx, sy),
        "upsample2x_last 6400x100": lambda: kernels.upsample2x_last(rows),
        f"dda_visible {len(targets)} rays": lambda: kernels.dda_visible(occ, (-12.8, -12.8, -1.0), (0.4, 0.4, 0.4), (0.5, 0.3, 1.5), targets),
    }


def _pipeline_case():
    cfg = small_config(view_transform="LSS-16,32x32,1.0")
    frame = frame_from_scene(generate_scene(0, cfg.grid, default_rig(cfg)), cfg)
    pipes = {p: build(cfg.with_(path=p)) for p in ("flash", "voxel")}
    return {f"infer {p} (small config)": (lambda pipe=pipe: pipe.infer(frame)) for p, pipe in pipes.items()}


def _time(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.median(ts))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="write results here as well")
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    cases = dict(_cases(np.random.default_rng(0)))
    cases.update(_pipeline_case())
    results = {}
    with threadpool_limits(1):
        for name, fn in cases.items():
            results[name] = {}
            for be in backends:
                with _accel.use_backend(be):
                    results[name][be] = _time(fn, args.repeat)

    print(f"{'case':40s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, row in results.items():
        line = f"{name:40s}" + "".join(f"{row[b] * 1e3:10.2f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{row['numpy'] / row['numba']:11.2f}x"
        print(line)
    if not _accel.HAVE_NUMBA:
        print("numba unavailable or disabled; numpy backend only")
    if args.json:
        with open(args.json, "w") as f:
            json.dump({"seconds_median": results, "repeat": args.repeat}, f, indent=2)


if __name__ == "__main__":
    main()
