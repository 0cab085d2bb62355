"""Perspective camera: right-handed look-at view transform and pinhole NDC
projection, with the exact adjoint used by the renderer backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EYE_EPS = 1e-9


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    eye: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    fov_y: float            # vertical field of view, radians
    near: float
    far: float
    height: int
    width: int

    def __post_init__(self):
        object.__setattr__(self, "eye", np.asarray(self.eye, dtype=np.float64))
        object.__setattr__(self, "look_at", np.asarray(self.look_at, dtype=np.float64))
        object.__setattr__(self, "up", np.asarray(self.up, dtype=np.float64))

    def validate(self) -> None:
        if not (0.0 < self.fov_y < np.pi):
            raise CameraError(f"fov_y must be in (0, pi), got {self.fov_y}")
        if not (0.0 < self.near < self.far):
            raise CameraError(f"need 0 < near < far, got near={self.near} far={self.far}")
        if np.linalg.norm(self.look_at - self.eye) < _EYE_EPS:
            raise CameraError("eye and look_at coincide")
        if self.height < 8 or self.width < 8:
            raise CameraError("resolution must be at least 8x8")

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal (right, up, forward); forward points at look_at."""
        fwd = self.look_at - self.eye
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        nr = np.linalg.norm(right)
        if nr < 1e-12:
            raise CameraError("up vector is parallel to the viewing direction")
        right = right / nr
        up = np.cross(right, fwd)
        return right, up, fwd


def project(camera: Camera, vertices: np.ndarray):
    """Project world points to (ndc (N,2), view depth (N,), clipped (N,) bool).

    Depth is the positive view-space distance along the camera forward axis;
    points with depth outside (near, far) are flagged clipped and excluded
    from rasterization. A point at the eye produces a clipped flag, never NaN.
    """
    camera.validate()
    right, up, fwd = camera.basis()
    d = vertices - camera.eye
    xv = d @ right
    yv = d @ up
    zv = d @ fwd
    clipped = (zv < camera.near) | (zv > camera.far)
    safe_z = np.where(zv > _EYE_EPS, zv, _EYE_EPS)
    t = np.tan(0.5 * camera.fov_y)
    aspect = camera.width / camera.height
    ndc = np.stack([xv / (safe_z * t * aspect), yv / (safe_z * t)], axis=1)
    return ndc, zv, clipped


def project_vjp(
    camera: Camera,
    vertices: np.ndarray,
    d_ndc: np.ndarray,
    d_depth: np.ndarray | None = None,
) -> np.ndarray:
    """Adjoint of `project`; clipped vertices receive zero gradient."""
    right, up, fwd = camera.basis()
    d = vertices - camera.eye
    xv = d @ right
    yv = d @ up
    zv = d @ fwd
    clipped = (zv < camera.near) | (zv > camera.far)
    safe_z = np.where(zv > _EYE_EPS, zv, _EYE_EPS)
    t = np.tan(0.5 * camera.fov_y)
    aspect = camera.width / camera.height
    gx = d_ndc[:, 0]
    gy = d_ndc[:, 1]
    d_xv = gx / (safe_z * t * aspect)
    d_yv = gy / (safe_z * t)
    d_zv = -(gx * xv / (safe_z**2 * t * aspect) + gy * yv / (safe_z**2 * t))
    if d_depth is not None:
        d_zv = d_zv + d_depth
    grad = np.outer(d_xv, right) + np.outer(d_yv, up) + np.outer(d_zv, fwd)
    grad[clipped] = 0.0
    return grad
