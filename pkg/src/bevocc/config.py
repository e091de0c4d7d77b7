"""Pipeline configuration: JSON fields carrying the compact method-table tokens.

Token grammar (one token per field):

=================  ==============================  ===============================
field              example token                   meaning
=================  ==============================  ===============================
view_transform     ``LSS-64,200x200,0.5``          kind-channels,WxH,depth step (m)
bev_backbone       ``3B-128-256-512``              residual stages, widths
bev_neck           ``FL-256``                      FPN-LSS neck width
image_neck         ``FL-256``                      image-side FPN-LSS neck width
head               ``MC-256-512-288``              3x3 conv chain, output widths
head               ``MSO-(256,256,256)-128-256``   lateral widths, then chain widths
temporal           ``-`` / ``Mono-align-concat``   history fusion
path               ``flash`` / ``voxel``           2D + channel-to-height or 3D reference
=================  ==============================  ===============================
"""

import json
import re
from dataclasses import dataclass, replace

from .errors import ConfigError
from .evaluation import NUM_CLASSES
from .view_transform import BevGridSpec


@dataclass(frozen=True)
class PipelineConfig:
    name: str = "custom"
    image_size: tuple = (256, 704)  # (height, width) in pixels
    feature_stride: int = 16
    image_backbone: str = "R50"  # recorded only; realized by the small encoder below
    image_channels: int = NUM_CLASSES + 1
    image_encoder_widths: tuple = (64, 128)
    image_neck: int = 256
    vt_kind: str = "lss"
    vt_channels: int = 64
    bev_size: tuple = (200, 200)  # (W, H) cells
    depth_step_m: float = 0.5
    depth_range: tuple = (1.0, 45.0)
    xy_res: float = 0.4
    z_range: tuple = (-1.0, 5.4)
    z_res: float = 0.4
    bev_widths: tuple = (128, 256, 512)
    bev_neck: int = 256
    head_kind: str = "mc"
    head_widths: tuple = (256, 512, 288)
    head_inputs: tuple = ()  # MSO lateral widths
    path: str = "flash"
    temporal: str = "none"
    num_classes: int = NUM_CLASSES
    voxel_width_divisor: int = 4
    seed: int = 0

    @property
    def grid(self):
        w, h = self.bev_size
        return BevGridSpec.centered(w, h, self.xy_res, self.z_range[0], self.z_range[1], self.z_res)

    @property
    def feat_hw(self):
        return (self.image_size[0] // self.feature_stride, self.image_size[1] // self.feature_stride)

    def with_(self, **changes):
        return replace(self, **changes)

    def to_json(self):
        doc = {
            "name": self.name,
            "image_size": list(self.image_size),
            "feature_stride": self.feature_stride,
            "image_backbone": self.image_backbone,
            "image_encoder_widths": list(self.image_encoder_widths),
            "image_neck": f"FL-{self.image_neck}",
            "view_transform": format_vt(self),
            "depth_range": list(self.depth_range),
            "bev_backbone": f"{len(self.bev_widths)}B-" + "-".join(map(str, self.bev_widths)),
            "bev_neck": f"FL-{self.bev_neck}",
            "head": format_head(self),
            "temporal": "Mono-align-concat" if self.temporal == "mono_align_concat" else "-",
            "path": self.path,
            "voxel_width_divisor": self.voxel_width_divisor,
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2) + "\n"

    def validate(self):
        grid_err = None
        try:
            grid = self.grid
        except ValueError as e:
            grid_err = str(e)
        if grid_err:
            raise ConfigError("view_transform", grid_err)
        h, w = self.image_size
        s = self.feature_stride
        if s < 1 or h % s or w % s:
            raise ConfigError("image_encoder", f"image size {h}x{w} is not divisible by feature stride {s}")
        fh, fw = self.feat_hw
        if len(self.image_encoder_widths) != 2:
            # the neck returns to stage-0 resolution, which is the splat grid, only with two stages
            raise ConfigError("image_encoder", "image encoder must have exactly two stages (strides 1, 2)")
        k = 2 ** (len(self.image_encoder_widths) - 1)
        if fh % k or fw % k:
            raise ConfigError("image_encoder", f"feature grid {fh}x{fw} must be divisible by {k}")
        if self.vt_kind not in ("lss", "ls"):
            raise ConfigError("view_transform", f"unknown kind {self.vt_kind!r}")
        if len(self.bev_widths) < 2:
            raise ConfigError("bev_encoder", "needs at least two stages")
        k = 2 ** (len(self.bev_widths) - 1)
        if grid.W % k or grid.H % k:
            raise ConfigError("bev_encoder", f"BEV {grid.W}x{grid.H} must be divisible by {k} for {len(self.bev_widths)} stages")
        if self.temporal not in ("none", "mono_align_concat"):
            raise ConfigError("temporal", f"unknown mode {self.temporal!r}")
        if self.path not in ("flash", "voxel"):
            raise ConfigError("path", f"unknown path {self.path!r}")
        if self.head_kind not in ("mc", "mso"):
            raise ConfigError("head", f"unknown head kind {self.head_kind!r}")
        if not self.head_widths:
            raise ConfigError("head", "empty head width chain")
        final = self.head_widths[-1]
        if self.path == "flash" and self.head_kind == "mc" and final != self.num_classes * grid.Z:
            raise ConfigError(
                "head",
                f"final width {final} != num_classes*Z = {self.num_classes}*{grid.Z} = {self.num_classes * grid.Z}",
            )
        if self.head_kind == "mso" and len(self.head_inputs) != 3:
            raise ConfigError("head", f"MSO head takes three lateral widths, got {len(self.head_inputs)}")
        if self.path == "voxel":
            d = self.voxel_width_divisor
            if self.head_kind != "mc":
                raise ConfigError("head", "the voxel reference path is defined for MC heads only")
            if self.vt_channels % grid.Z:
                raise ConfigError("view_transform", f"channels {self.vt_channels} not divisible by Z={grid.Z} for the voxel path")
            k = 2 ** (len(self.bev_widths) - 1)
            if grid.Z % k:
                raise ConfigError("bev_encoder", f"Z={grid.Z} must be divisible by {k} for 3D strides")
            for stage, widths in (
                ("bev_encoder", self.bev_widths),
                ("bev_encoder", (self.bev_neck,)),
                ("head", self.head_widths[:-1]),
            ):
                bad = [x for x in widths if x % d]
                if bad:
                    raise ConfigError(stage, f"widths {bad} not divisible by voxel_width_divisor {d}")
        return self


# ---------------------------------------------------------------------------
# token parsing
# ---------------------------------------------------------------------------

_VT = re.compile(r"^(LSS|LS)-(\d+),(\d+)[x×](\d+),([0-9.]+)$", re.I)
_BACKBONE = re.compile(r"^(\d+)B-(\d+(?:-\d+)*)$", re.I)
_FL = re.compile(r"^FL-(\d+)$", re.I)
_MC = re.compile(r"^MC-(\d+(?:-\d+)*)$", re.I)
_MSO = re.compile(r"^MSO-\((\d+(?:,\d+)*)\)-(\d+(?:-\d+)*)$", re.I)


def _ints(s, sep="-"):
    return tuple(int(x) for x in s.split(sep))


def parse_view_transform(tok):
    m = _VT.match(tok.replace(" ", ""))
    if not m:
        raise ConfigError("view_transform", f"cannot parse {tok!r} (expected e.g. 'LSS-64,200x200,0.5')")
    return {
        "vt_kind": m.group(1).lower(),
        "vt_channels": int(m.group(2)),
        "bev_size": (int(m.group(3)), int(m.group(4))),
        "depth_step_m": float(m.group(5)),
    }


def parse_backbone(tok):
    m = _BACKBONE.match(tok.replace(" ", ""))
    if not m:
        raise ConfigError("bev_encoder", f"cannot parse {tok!r} (expected e.g. '3B-128-256-512')")
    widths = _ints(m.group(2))
    if int(m.group(1)) != len(widths):
        raise ConfigError("bev_encoder", f"{tok!r} declares {m.group(1)} stages but lists {len(widths)} widths")
    return {"bev_widths": widths}


def parse_neck(tok, stage):
    m = _FL.match(tok.replace(" ", ""))
    if not m:
        raise ConfigError(stage, f"cannot parse neck {tok!r} (expected e.g. 'FL-256')")
    return int(m.group(1))


def parse_head(tok):
    t = tok.replace(" ", "")
    m = _MC.match(t)
    if m:
        return {"head_kind": "mc", "head_widths": _ints(m.group(1)), "head_inputs": ()}
    m = _MSO.match(t)
    if m:
        return {"head_kind": "mso", "head_inputs": _ints(m.group(1), ","), "head_widths": _ints(m.group(2))}
    raise ConfigError("head", f"cannot parse {tok!r} (expected 'MC-a-b-c' or 'MSO-(a,b,c)-d-e')")


def parse_temporal(tok):
    t = (tok or "-").strip().lower()
    if t in ("-", "none", ""):
        return "none"
    if t in ("mono-align-concat", "mono_align_concat"):
        return "mono_align_concat"
    raise ConfigError("temporal", f"unsupported temporal mode {tok!r} (stereo fusion is out of scope)")


def format_vt(cfg):
    w, h = cfg.bev_size
    return f"{cfg.vt_kind.upper()}-{cfg.vt_channels},{w}x{h},{cfg.depth_step_m:g}"


def format_head(cfg):
    chain = "-".join(map(str, cfg.head_widths))
    if cfg.head_kind == "mso":
        return f"MSO-({','.join(map(str, cfg.head_inputs))})-{chain}"
    return f"MC-{chain}"


def from_dict(doc):
    """Build and validate a config from its JSON document."""
    kw = {}
    simple = {
        "name": str,
        "feature_stride": int,
        "image_backbone": str,
        "image_channels": int,
        "xy_res": float,
        "z_res": float,
        "num_classes": int,
        "voxel_width_divisor": int,
        "seed": int,
        "path": str,
    }
    for key, typ in simple.items():
        if key in doc:
            kw[key] = typ(doc[key])
    for key in ("image_size", "image_encoder_widths"):
        if key in doc:
            kw[key] = tuple(int(x) for x in doc[key])
    for key in ("depth_range", "z_range"):
        if key in doc:
            kw[key] = tuple(float(x) for x in doc[key])
    if "view_transform" in doc:
        kw.update(parse_view_transform(doc["view_transform"]))
    if "bev_backbone" in doc:
        kw.update(parse_backbone(doc["bev_backbone"]))
    if "bev_neck" in doc:
        kw["bev_neck"] = parse_neck(doc["bev_neck"], "bev_encoder")
    if "image_neck" in doc:
        kw["image_neck"] = parse_neck(doc["image_neck"], "image_encoder")
    if "head" in doc:
        kw.update(parse_head(doc["head"]))
    if "temporal" in doc:
        kw["temporal"] = parse_temporal(doc["temporal"])
    unknown = set(doc) - set(simple) - {
        "image_size",
        "image_encoder_widths",
        "depth_range",
        "z_range",
        "view_transform",
        "bev_backbone",
        "bev_neck",
        "image_neck",
        "head",
        "temporal",
    }
    if unknown:
        raise ConfigError("config", f"unknown fields {sorted(unknown)}")
    return PipelineConfig(**kw).validate()


def load_config(path):
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config", f"{path}: top level must be an object")
    return from_dict(doc)


# Method-table rows expressible here.  Image backbones are recorded but
# realized by the small encoder, so only the BEV side matches the table.
# Stereo4D and the forward-backward view transform are out of scope; "M7-lss"
# keeps the multi-scale head of M7 on an LSS view transform.
_M1 = {
    "image_backbone": "R50",
    "image_neck": "FL-256",
    "view_transform": "LSS-64,200x200,0.5",
    "bev_backbone": "3B-128-256-512",
    "bev_neck": "FL-256",
    "head": "MC-256-512-288",
    "temporal": "-",
}
PRESETS = {
    "M0": dict(_M1, view_transform="LSS-64,200x200,1.0", head="MC-128-256-288"),
    "M1": dict(_M1),
    "M4": dict(_M1, bev_backbone="3b-128-256-512"),
    "M1-temporal": dict(_M1, temporal="Mono-align-concat"),
    "M7-lss": dict(_M1, bev_backbone="3b-128-256-512", head="MSO-(256,256,256)-128-256"),
}


def preset(name, **overrides):
    if name not in PRESETS:
        raise ConfigError("config", f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    doc = dict(PRESETS[name], name=name)
    doc.update(overrides)
    return from_dict(doc)


def small_config(**overrides):
    """Tiny but structurally complete config for tests and self-checks."""
    doc = {
        "name": "tiny",
        "image_size": [64, 128],
        "feature_stride": 16,
        "image_encoder_widths": [8, 16],
        "image_neck": "FL-16",
        "view_transform": "LSS-16,16x16,1.0",
        "depth_range": [1.0, 17.0],
        "bev_backbone": "3B-16-32-64",
        "bev_neck": "FL-32",
        "head": "MC-32-288",
        "seed": 0,
    }
    doc.update(overrides)
    return from_dict(doc)


__all__ = [
    "PRESETS",
    "PipelineConfig",
    "from_dict",
    "load_config",
    "parse_backbone",
    "parse_head",
    "parse_neck",
    "parse_temporal",
    "parse_view_transform",
    "preset",
    "small_config",
]
