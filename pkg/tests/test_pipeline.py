import numpy as np
import pytest

from bevocc.config import preset, small_config
from bevocc.errors import ConfigError, ShapeError
from bevocc.geometry import RigidTransform
from bevocc.pipeline import BEV_ENC_OCC, OTHERS, FrameInput, build, default_rig, depth_onehot, frame_from_scene, replace_arrays
from bevocc.scene import generate_scene


@pytest.fixture(scope="module")
def cfg():
    return small_config()


@pytest.fixture(scope="module")
def frame(cfg):
    return frame_from_scene(generate_scene(1, cfg.grid, default_rig(cfg)), cfg)


def test_m1_builds_both_paths():
    flash = build(preset("M1"))
    assert flash.params.head.convs[-1].out_channels == 18 * 16
    assert flash.params.head.convs[-1].weight.shape == (288, 512, 3, 3)
    voxel = build(preset("M1", path="voxel"))
    assert voxel.params.head.classifier.out_channels == 18
    assert voxel.params.bev_encoder.stages[0][0].conv1.weight.shape == (32, 4, 3, 3, 3)
    assert voxel.params.depth_context.conv.weight.tobytes() == flash.params.depth_context.conv.weight.tobytes()
    assert flash.param_count > voxel.param_count > 0


def test_small_paths_shapes_and_isolation(cfg, frame):
    f = build(cfg).infer(frame, track=True)
    v = build(cfg.with_(path="voxel")).infer(frame, track=True)
    assert f.logits.shape == v.logits.shape == (1, 18, 16, 16, 16)
    assert f.ops["conv3d"] == 0 and v.ops["conv3d"] > 0
    assert f.labels.labels.shape == (16, 16, 16)
    # both paths consume the same view-transform bytes
    assert f.bev.tobytes() == v.bev.tobytes()


def test_same_seed_same_params(cfg):
    a, b = build(cfg).named_params(), build(cfg).named_params()
    assert a.keys() == b.keys()
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    c = build(cfg.with_(seed=1)).named_params()
    assert any(a[k].tobytes() != c[k].tobytes() for k in a if k.endswith("weight"))


def test_zero_network_labels_class_zero(cfg, frame):
    pipe = build(cfg)
    zeros = {k: np.zeros_like(v) for k, v in pipe.named_params().items()}
    pipe.params = replace_arrays(pipe.params, zeros)
    res = pipe.infer(frame)
    assert not res.logits.any()
    assert not res.labels.labels.any()


def test_temporal_identity_history(frame):
    cfg = small_config(temporal="Mono-align-concat")
    pipe = build(cfg)
    first = pipe.infer(frame)
    assert not first.aligned.any()
    second = pipe.infer(frame)
    assert second.aligned.tobytes() == first.bev.tobytes()
    assert "temporal" in second.timings


def test_stateless_without_temporal(cfg, frame):
    other = frame_from_scene(generate_scene(2, cfg.grid, default_rig(cfg)), cfg)
    pipe = build(cfg)
    a = pipe.infer(frame).logits.copy()
    pipe.infer(other)
    assert pipe.infer(frame).logits.tobytes() == a.tobytes()


def test_timings_sum_to_total(cfg, frame):
    pipe = build(cfg.with_(path="voxel"))
    for _ in range(3):
        res = pipe.infer(frame)
        s = sum(res.timings.values())
        assert abs(s - res.total) <= 0.05 * res.total
        g = res.grouped()
        assert set(g) == {"others", "bev_enc_occ"}
        assert abs(g["others"] + g["bev_enc_occ"] - s) <= 1e-12
    assert set(OTHERS) | set(BEV_ENC_OCC) >= set(res.timings)


def test_checkpoint_round_trip(cfg, frame, tmp_path):
    a = build(cfg)
    a.save(tmp_path / "ck")
    b = build(cfg.with_(seed=9)).load(tmp_path / "ck")
    assert b.infer(frame).logits.tobytes() == a.infer(frame).logits.tobytes()
    wrong = build(small_config(head="MC-16-288"))
    with pytest.raises(ShapeError):
        wrong.load(tmp_path / "ck")


def test_tracked_flops_match_analytic(cfg, frame):
    for c in (cfg, cfg.with_(path="voxel"), small_config(temporal="Mono-align-concat")):
        pipe = build(c)
        res = pipe.infer(frame, track=True)
        conv = res.flops["conv2d"] + res.flops["conv3d"]
        assert conv == sum(pipe.analytic_flops().values())


def test_ls_and_oracle_depth(cfg, frame):
    ls = build(small_config(view_transform="LS-16,16x16,1.0"))
    assert ls.infer(frame).logits.shape == (1, 18, 16, 16, 16)
    assert ls.params.depth_context is None
    res = build(cfg).infer(frame, oracle_depth=True)
    assert res.bev.shape == (1, 16, 16, 16)
    nodepth = FrameInput(frame.images, frame.rig)
    with pytest.raises(ValueError):
        build(cfg).infer(nodepth, oracle_depth=True)


def test_depth_onehot():
    d = np.array([[1.2, 2.0], [np.inf, 0.5]])
    out = depth_onehot(d, 1.0, 0.5, 4)
    assert out.shape == (1, 4, 2, 2)
    assert out[0, :, 0, 0].tolist() == [1, 0, 0, 0]
    assert out[0, :, 0, 1].tolist() == [0, 0, 1, 0]
    assert not out[0, :, 1].any()


def test_frame_validation(cfg, frame):
    with pytest.raises(ShapeError):
        FrameInput(frame.images[:2], frame.rig)
    with pytest.raises(ShapeError):
        build(cfg).infer(FrameInput(frame.images[:, :5], frame.rig))
    assert FrameInput(frame.images, frame.rig).ego_pose == RigidTransform.identity()
    with pytest.raises(ConfigError):
        build(cfg.with_(head_widths=(32, 280)))
