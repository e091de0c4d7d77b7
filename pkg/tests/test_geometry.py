import numpy as np
import pytest

import oracles
from bevocc.geometry import (
    Camera,
    CameraIntrinsics,
    CameraRig,
    RigidTransform,
    build_frustum,
    camera_to_pixel,
    compose,
    frustum_to_ego,
    inverse,
    pixel_to_camera,
    transform_point,
)


def random_transform(rng):
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return RigidTransform(q, rng.uniform(-10, 10, 3))


INTR = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


def test_pixel_to_camera_examples():
    assert np.allclose(pixel_to_camera(50, 50, 10, INTR), (0, 0, 10))
    assert np.allclose(pixel_to_camera(150, 50, 10, INTR), (10, 0, 10))
    with pytest.raises(ValueError):
        pixel_to_camera(1, 1, 0.0, INTR)


def test_pixel_to_camera_vs_matrix_oracle_and_reprojection():
    rng = np.random.default_rng(0)
    intr = CameraIntrinsics(310.0, 290.0, 200.5, 120.25, 400, 240)
    u, v = rng.uniform(0, 400, 50), rng.uniform(0, 240, 50)
    d = rng.uniform(0.1, 80, 50)
    got = pixel_to_camera(u, v, d, intr)
    kinv = np.linalg.inv(intr.matrix)
    ref = (kinv @ np.stack([u * d, v * d, d])).T
    assert np.abs(got - ref).max() <= 1e-6 * max(1.0, np.abs(ref).max())
    pu, pv, pz = camera_to_pixel(got, intr)
    assert np.abs(pu - u).max() <= 1e-4 and np.abs(pv - v).max() <= 1e-4
    assert np.allclose(pz, d)


def test_transform_basics():
    p = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(transform_point(p, RigidTransform.identity()), p)
    assert np.allclose(transform_point(np.zeros(3), RigidTransform(np.eye(3), (1, 2, 3))), (1, 2, 3))
    assert inverse(RigidTransform.identity()) == RigidTransform.identity()
    assert np.allclose(inverse(RigidTransform(np.eye(3), (1, 2, 3))).translation, (-1, -2, -3))
    with pytest.raises(ValueError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_compose_chain_vs_homogeneous_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        ts = [random_transform(rng) for _ in range(5)]
        acc = ts[0]
        m = oracles.homogeneous(ts[0].rotation, ts[0].translation)
        for t in ts[1:]:
            acc = compose(acc, t)
            m = m @ oracles.homogeneous(t.rotation, t.translation)
        assert np.abs(acc.matrix - m).max() <= 1e-6 * max(1.0, np.abs(m).max())
        p = rng.standard_normal(3)
        assert np.allclose(transform_point(transform_point(p, ts[0]), inverse(ts[0])), p, atol=1e-5)
        a, b, c = ts[:3]
        assert np.abs(compose(compose(a, b), c).matrix - compose(a, compose(b, c)).matrix).max() <= 1e-6
        assert np.abs(compose(a, inverse(a)).matrix - np.eye(4)).max() <= 1e-6
        assert np.allclose(transform_point(p, compose(a, b)), transform_point(transform_point(p, b), a), atol=1e-6)


def test_frustum_examples():
    fr = build_frustum(2, 2, 8, 1.0, 3.0, 1.0)
    assert fr.depths.tolist() == [1.5, 2.5]
    assert fr.us.tolist() == [4.0, 12.0]
    assert fr.shape == (2, 2, 2)
    rng = np.random.default_rng(2)
    for _ in range(10):
        w, h = rng.integers(1, 20, 2)
        start, step = rng.uniform(0.5, 3), rng.choice([0.25, 0.5, 1.0])
        end = start + step * rng.integers(1, 30) + step / 3
        fr = build_frustum(w, h, 4, start, end, step)
        assert len(fr) == w * h * int((end - start) // step)
        assert fr.uvd.shape == (len(fr.depths), h, w, 3)
    with pytest.raises(ValueError):
        build_frustum(2, 2, 8, 1.0, 1.4, 0.5)
    with pytest.raises(ValueError):
        build_frustum(2, 2, 8, 3.0, 1.0, 0.5)


def test_frustum_to_ego_uses_extrinsics():
    rot = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])  # camera looks along ego +x
    cam = Camera("front", INTR, RigidTransform(rot, (1.0, 0.0, 1.5)))
    fr = build_frustum(1, 1, 100, 9.0, 11.0, 2.0)  # one ray through the principal point, depth 10
    assert np.allclose(frustum_to_ego(fr, cam)[0, 0, 0], (11.0, 0.0, 1.5))


def test_intrinsics_and_rig_validation():
    with pytest.raises(ValueError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ValueError):
        CameraIntrinsics(1.0, 1.0, 4.0, 1.0, 4, 4)
    cam = Camera("a", INTR, RigidTransform.identity())
    with pytest.raises(ValueError):
        CameraRig((cam, cam))
    with pytest.raises(ValueError):
        CameraRig(())
