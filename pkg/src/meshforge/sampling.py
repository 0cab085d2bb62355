"""Camera and pose distributions plus deterministic RNG substreams.

Substreams are keyed by content (seed, step, prompt text, camera distribution
id, textured flag), never by list position: adding or removing a prompt leaves
every other prompt's draws unchanged, and two prompts with identical specs
draw identical cameras and poses.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .body import TemplateModel
from .camera import Camera
from .rotation import slerp_axis_angle


class SamplingError(ValueError):
    pass


def substream(*parts) -> np.random.Generator:
    """Independent generator derived from a canonical hash of `parts`."""
    h = hashlib.sha256()
    for p in parts:
        chunk = repr(p).encode("utf-8") if not isinstance(p, bytes) else p
        h.update(len(chunk).to_bytes(4, "little"))
        h.update(chunk)
    words = np.frombuffer(h.digest()[:16], dtype=np.uint32)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words.tolist())))


@dataclass(frozen=True)
class OrbitDist:
    azimuth: tuple[float, float] = (0.0, 2.0 * np.pi)
    elevation: tuple[float, float] = (-0.3, 0.5)
    radius: tuple[float, float] = (2.2, 3.2)
    fov: tuple[float, float] = (0.6, 0.6)
    look_at: str = "origin"          # "origin" or a vertex-group name

    def validate(self) -> None:
        for name in ("azimuth", "elevation", "radius", "fov"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise SamplingError(f"orbit {name} range must be a closed interval, got ({lo}, {hi})")
        if self.radius[0] <= 0:
            raise SamplingError("orbit radius must be positive")
        if not (0 < self.fov[0] and self.fov[1] < np.pi):
            raise SamplingError("orbit fov range must lie in (0, pi)")


@dataclass(frozen=True)
class PartGridDist:
    group: str
    rows: int = 2
    cols: int = 2
    spread: float = 0.8              # angular extent of the grid, radians
    zoom_radius: float = 0.8
    fov: float = 0.6

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise SamplingError("part grid needs rows >= 1 and cols >= 1")
        if self.zoom_radius <= 0:
            raise SamplingError("zoom_radius must be positive")
        if not (0 < self.fov < np.pi):
            raise SamplingError("part grid fov must lie in (0, pi)")


CameraDist = OrbitDist | PartGridDist


@dataclass(frozen=True)
class PoseDist:
    mode: str = "rest"                       # rest | per_joint_uniform | keyframe_interp
    lo: np.ndarray | None = None             # (J, 3) lower bounds, radians
    hi: np.ndarray | None = None
    keyframes: tuple[np.ndarray, ...] = field(default_factory=tuple)

    def validate(self, num_joints: int | None = None) -> None:
        if self.mode not in ("rest", "per_joint_uniform", "keyframe_interp"):
            raise SamplingError(f"unknown pose mode {self.mode!r}")
        if self.mode == "per_joint_uniform":
            if self.lo is None or self.hi is None:
                raise SamplingError("per_joint_uniform needs lo and hi bounds")
            if np.any(self.lo > self.hi):
                raise SamplingError("pose bounds need lo <= hi per joint axis")
            if num_joints is not None and self.lo.shape != (num_joints, 3):
                raise SamplingError(f"pose bounds must be (J={num_joints}, 3)")
        if self.mode == "keyframe_interp":
            if len(self.keyframes) < 2:
                raise SamplingError("keyframe_interp needs at least 2 keyframes")
            shapes = {k.shape for k in self.keyframes}
            if len(shapes) != 1:
                raise SamplingError("keyframes must share one (J, 3) shape")


def _orbit_eye(look_at: np.ndarray, azimuth: float, elevation: float, radius: float) -> np.ndarray:
    direction = np.array(
        [
            np.cos(elevation) * np.sin(azimuth),
            np.sin(elevation),
            np.cos(elevation) * np.cos(azimuth),
        ]
    )
    return look_at + radius * direction


def _frustum_planes(eye, look_at, model: TemplateModel):
    # frustum sized from the constant template so camera geometry carries no
    # hidden dependence on the optimized shape (placement is stop-gradient)
    dist = float(np.linalg.norm(eye - look_at))
    bound = float(np.max(np.linalg.norm(model.template_vertices - look_at, axis=1)))
    near = max(1e-3, 0.02 * dist)
    far = dist + 3.0 * bound + 2.0
    return near, far


def _group_centroid(model: TemplateModel, rest_vertices: np.ndarray, name: str) -> np.ndarray:
    idx = model.group_indices(name)
    return rest_vertices[idx].mean(axis=0)


def part_grid_cameras(
    dist: PartGridDist,
    model: TemplateModel,
    rest_vertices: np.ndarray,
    resolution: tuple[int, int] = (224, 224),
) -> list[Camera]:
    """The full rows x cols camera grid aimed at the group centroid."""
    dist.validate()
    center = _group_centroid(model, rest_vertices, dist.group)
    cams = []
    for r in range(dist.rows):
        for c in range(dist.cols):
            el = 0.0 if dist.rows == 1 else (r / (dist.rows - 1) - 0.5) * dist.spread
            az = 0.0 if dist.cols == 1 else (c / (dist.cols - 1) - 0.5) * dist.spread
            eye = _orbit_eye(center, az, el, dist.zoom_radius)
            near, far = _frustum_planes(eye, center, model)
            cams.append(
                Camera(
                    eye=eye, look_at=center, up=np.array([0.0, 1.0, 0.0]),
                    fov_y=dist.fov, near=near, far=far,
                    height=resolution[0], width=resolution[1],
                )
            )
    return cams


def sample_camera(
    dist: CameraDist,
    model: TemplateModel,
    rest_vertices: np.ndarray,
    rng: np.random.Generator,
    resolution: tuple[int, int] = (224, 224),
) -> Camera:
    """Draw one camera. Orbit mode draws each range uniformly; part_grid mode
    picks one grid cell uniformly. Degenerate ranges give deterministic output."""
    if isinstance(dist, PartGridDist):
        cams = part_grid_cameras(dist, model, rest_vertices, resolution)
        return cams[int(rng.integers(len(cams)))]
    dist.validate()
    az = float(rng.uniform(*dist.azimuth))
    el = float(rng.uniform(*dist.elevation))
    radius = float(rng.uniform(*dist.radius))
    fov = float(rng.uniform(*dist.fov))
    if dist.look_at == "origin":
        look_at = np.zeros(3)
    else:
        look_at = _group_centroid(model, rest_vertices, dist.look_at)
    eye = _orbit_eye(look_at, az, el, radius)
    near, far = _frustum_planes(eye, look_at, model)
    return Camera(
        eye=eye, look_at=look_at, up=np.array([0.0, 1.0, 0.0]),
        fov_y=fov, near=near, far=far, height=resolution[0], width=resolution[1],
    )


def sample_pose(dist: PoseDist, rng: np.random.Generator, num_joints: int) -> np.ndarray:
    """Draw a (J, 3) axis-angle pose per the distribution."""
    dist.validate(num_joints)
    if dist.mode == "rest":
        return np.zeros((num_joints, 3))
    if dist.mode == "per_joint_uniform":
        return rng.uniform(dist.lo, dist.hi)
    # keyframe_interp: uniform t over the whole track, slerp between neighbors
    t = float(rng.uniform(0.0, 1.0))
    return interpolate_keyframes(dist.keyframes, t)


def interpolate_keyframes(keyframes, t: float) -> np.ndarray:
    """Piecewise spherical interpolation over a keyframe track at t in [0, 1]."""
    k = len(keyframes)
    if k == 1:
        return np.asarray(keyframes[0], dtype=float).copy()
    t = min(max(t, 0.0), 1.0)
    scaled = t * (k - 1)
    seg = min(int(scaled), k - 2)
    local = scaled - seg
    return slerp_axis_angle(
        np.asarray(keyframes[seg], dtype=float),
        np.asarray(keyframes[seg + 1], dtype=float),
        local,
    )
