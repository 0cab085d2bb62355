import numpy as np
import pytest

from meshforge.camera import Camera, CameraError, project, project_vjp
from meshforge.gradcheck import rel_error


def axis_camera():
    return Camera(
        eye=np.zeros(3),
        look_at=np.array([0.0, 0.0, -1.0]),
        up=np.array([0.0, 1.0, 0.0]),
        fov_y=np.pi / 2,
        near=0.1,
        far=100.0,
        height=64,
        width=64,
    )


def test_look_at_point_maps_to_center():
    cam = axis_camera()
    ndc, depth, clipped = project(cam, np.array([[0.0, 0.0, -1.0]]))
    np.testing.assert_allclose(ndc[0], [0.0, 0.0], atol=1e-12)
    assert not clipped[0]
    assert depth[0] == pytest.approx(1.0)


def test_unit_offset_at_unit_depth_hits_ndc_one():
    # fov pi/2, square image: view-space (1, 0, -1) -> ndc x = 1
    cam = axis_camera()
    ndc, _, _ = project(cam, np.array([[1.0, 0.0, -1.0]]))
    assert ndc[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert ndc[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_behind_near_plane_clipped():
    cam = axis_camera()
    pts = np.array([[0.0, 0.0, -0.05], [0.0, 0.0, 0.5], [0.0, 0.0, -1e9]])
    ndc, _, clipped = project(cam, pts)
    assert clipped.all()
    assert np.all(np.isfinite(ndc))


def test_eye_position_never_nan():
    cam = axis_camera()
    ndc, _, clipped = project(cam, np.zeros((1, 3)))
    assert clipped[0] and np.all(np.isfinite(ndc))


def test_validation_errors():
    with pytest.raises(CameraError):
        Camera(np.zeros(3), np.zeros(3), np.array([0, 1.0, 0]), 0.7, 0.1, 10, 32, 32).validate()
    with pytest.raises(CameraError):
        Camera(np.zeros(3), np.ones(3), np.array([0, 1.0, 0]), 0.7, 5.0, 1.0, 32, 32).validate()
    with pytest.raises(CameraError):
        Camera(np.zeros(3), np.ones(3), np.array([0, 1.0, 0]), 0.7, 0.1, 10, 4, 32).validate()


def test_vjp_matches_finite_differences():
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(100):
        eye = rng.standard_normal(3) * 2
        look = eye + rng.standard_normal(3)
        cam = Camera(eye, look, np.array([0.0, 1.0, 0.0]), 0.8, 0.05, 50.0, 32, 48)
        try:
            cam.validate()
            cam.basis()
        except CameraError:
            continue
        pts = cam.eye + (cam.look_at - cam.eye) * rng.uniform(1.5, 4.0) + rng.standard_normal(3) * 0.3
        pts = pts.reshape(1, 3)
        du = rng.standard_normal((1, 2))
        dz = rng.standard_normal(1)
        an = project_vjp(cam, pts, du, dz)

        def f(x):
            ndc, depth, _ = project(cam, x.reshape(1, 3))
            return float(np.sum(ndc * du) + np.sum(depth * dz))

        h = 1e-6
        for c in range(3):
            xp = pts.copy().reshape(-1)
            xp[c] += h
            xm = pts.copy().reshape(-1)
            xm[c] -= h
            fd = (f(xp) - f(xm)) / (2 * h)
            worst = max(worst, rel_error(fd, float(an.reshape(-1)[c]), 1e-8))
    assert worst < 1e-4, worst
