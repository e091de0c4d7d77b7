"""Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data error (malformed or inconsistent input).
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError, ShapeError
from .evaluation import NUM_CLASSES, SEMANTIC_CLASSES, CLASS_NAMES, OccupancyGrid, VisibilityMask, confusion, miou
from .fileio import read_occg, write_ften, write_occg

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _size(s):
    try:
        w, h = s.lower().replace("×", "x").split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {s!r}") from None


def _write_json(path, doc):
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load_config(args):
    from .config import load_config, preset

    if getattr(args, "config", None):
        return load_config(args.config)
    return preset(getattr(args, "preset", None) or "M1")


def _read_scene(path):
    from .scene import Scene

    text = Path(path).read_text()
    try:
        return Scene.from_json(text)
    except json.JSONDecodeError as e:
        raise DataFormatError(path, e.pos, f"invalid JSON: {e.msg}") from None
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(path, 0, f"invalid scene document: {e}") from None


def cmd_gen_scene(args):
    from .scene import generate_scene, visibility_mask, voxelize
    from .pipeline import default_rig

    cfg = _load_config(args)
    grid = cfg.grid
    if args.bev:
        cfg = cfg.with_(bev_size=args.bev).validate()
        grid = cfg.grid
    scene = generate_scene(args.seed, grid, default_rig(cfg))
    Path(args.out).write_text(scene.to_json())
    if args.gt or args.mask:
        gt = voxelize(scene, grid)
        if args.gt:
            write_occg(args.gt, gt.labels, gt.num_classes)
        if args.mask:
            m = visibility_mask(scene, scene.rig, grid, gt).as_grid()
            write_occg(args.mask, m.labels, m.num_classes)
    return EXIT_OK


def cmd_run(args):
    from .pipeline import build, frame_from_scene

    cfg = _load_config(args)
    if args.path:
        cfg = cfg.with_(path=args.path).validate()
    scene = _read_scene(args.scene)
    pipe = build(cfg)
    if args.checkpoint:
        pipe.load(args.checkpoint)
    res = pipe.infer(frame_from_scene(scene, cfg), oracle_depth=args.oracle_depth)
    write_occg(args.out, res.labels.labels, res.labels.num_classes)
    if args.logits:
        write_ften(args.logits, res.logits)
    if args.timings:
        _write_json(args.timings, {"stages": res.timings, "groups": res.grouped(), "total": res.total})
    return EXIT_OK


def _grid(path):
    labels, n = read_occg(path)
    return OccupancyGrid(labels, n)


def cmd_eval(args):
    if args.masked and not args.mask:
        raise UsageError("--masked requires --mask")
    pred, gt = _grid(args.pred), _grid(args.gt)
    mask = None
    if args.mask:
        m = _grid(args.mask)
        if m.num_classes != 2:
            raise DataFormatError(args.mask, 16, f"mask must have num_classes=2, got {m.num_classes}")
        if args.masked:
            mask = VisibilityMask.from_grid(m)
    try:
        conf = confusion(pred, gt, mask)
    except ShapeError as e:
        raise DataFormatError(args.pred, 0, str(e)) from None
    classes = SEMANTIC_CLASSES if gt.num_classes == NUM_CLASSES else tuple(range(gt.num_classes))
    per, mean = miou(conf, classes)
    names = CLASS_NAMES if gt.num_classes == NUM_CLASSES else [str(c) for c in range(gt.num_classes)]
    doc = {
        "per_class_iou": {names[c]: v for c, v in per.items()},
        "miou": None if np.isnan(mean) else mean,
        "masked": bool(args.masked),
        "voxels": int(conf.sum()),
    }
    _write_json(args.out, doc)
    return EXIT_OK


def cmd_bench(args):
    from .bench import bench

    cfg = _load_config(args)
    paths = ("flash", "voxel") if args.paths == "both" else (args.paths,)
    report = bench(
        cfg,
        warmup=args.warmup,
        iters=args.iters,
        paths=paths,
        scene_seed=args.seed,
        timing=not args.no_timing,
        parallel=args.parallel,
    )
    _write_json(args.report, report)
    if args.report and "ratios" in report:
        r = report["ratios"]
        line = f"BEV Enc.+Occ. voxel/flash: FLOPs x{r['flops_bev_enc_occ']:.2f}, peak bytes x{r['peak_bytes_bev_enc_occ']:.2f}"
        if "timing_speedup" in report:
            line += f", median time x{report['timing_speedup']['bev_enc_occ']:.2f}"
        print(line)
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run

    return EXIT_OK if run() else EXIT_DATA


def make_parser():
    p = _Parser(prog="bevocc", description="BEV occupancy: flash (2D + channel-to-height) vs voxel (3D) reference")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-scene", help="generate a synthetic scene with ground truth and visibility mask")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True, help="scene JSON")
    g.add_argument("--gt", help="ground-truth OCCG")
    g.add_argument("--mask", help="visibility mask OCCG")
    g.add_argument("--config", help="config JSON (grid and image size); default preset M1")
    g.add_argument("--bev", type=_size, help="override BEV size WxH")
    g.set_defaults(fn=cmd_gen_scene)

    r = sub.add_parser("run", help="run inference on a scene")
    r.add_argument("--config", help="config JSON")
    r.add_argument("--preset", help="preset name instead of --config")
    r.add_argument("--scene", required=True)
    r.add_argument("--path", choices=("flash", "voxel"))
    r.add_argument("--out", required=True, help="predicted OCCG")
    r.add_argument("--checkpoint", help="checkpoint directory to load")
    r.add_argument("--oracle-depth", action="store_true", help="replace predicted depth by rendered depth")
    r.add_argument("--logits", help="also write logits as FTEN")
    r.add_argument("--timings", help="also write per-stage timings JSON")
    r.set_defaults(fn=cmd_run)

    e = sub.add_parser("eval", help="mIoU of a prediction against ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--mask")
    e.add_argument("--masked", action="store_true", help="score only voxels marked visible in --mask")
    e.add_argument("--out", help="write the JSON report here instead of stdout")
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="flash vs voxel benchmark")
    b.add_argument("--config")
    b.add_argument("--preset")
    b.add_argument("--paths", choices=("both", "flash", "voxel"), default="both")
    b.add_argument("--warmup", type=int, default=5)
    b.add_argument("--iters", type=int, default=50)
    b.add_argument("--seed", type=int, default=0, help="synthetic scene seed")
    b.add_argument("--report", help="report JSON (stdout if omitted)")
    b.add_argument("--parallel", action="store_true", help="also time with BLAS threads enabled")
    b.add_argument("--no-timing", action="store_true", help="omit wall-clock sections (report is then reproducible byte for byte)")
    b.set_defaults(fn=cmd_bench)

    s = sub.add_parser("selftest", help="run the quick invariant suite")
    s.set_defaults(fn=cmd_selftest)
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"bevocc {args.cmd}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, ConfigError, ShapeError, FileNotFoundError, IsADirectoryError) as e:
        print(f"bevocc {args.cmd}: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
