"""Asset export: PNG images, OBJ/MTL meshes, and turntable sequences.

All writers are deterministic: equal inputs produce byte-identical files.
OBJ vertex data is formatted with six decimals; texture rows are written top
first, with UV v running bottom-up (standard OBJ convention, matching the
renderer's sampling).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .body import BodyParams, PosedMesh, blend_shape, forward_kinematics, skin
from .camera import Camera
from .raster import render
from .sampling import interpolate_keyframes


class ExportError(OSError):
    pass


def write_png(image: np.ndarray, path: str | Path) -> None:
    """Quantize a [0,1] float image to 8-bit sRGB PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    quant = np.round(arr * 255.0).astype(np.uint8)
    PILImage.fromarray(quant, mode="RGB").save(path, format="PNG")


def read_png(path: str | Path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def export_obj(mesh: PosedMesh, texture: np.ndarray, out_dir: str | Path,
               material=None) -> dict[str, Path]:
    """Write mesh.obj + mesh.mtl + texture.png into `out_dir`.

    OBJ uses 1-based v/vt/f records; faces reference the same index for
    position and UV (per-vertex UVs). The MTL references texture.png by
    relative name.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create output directory {out}: {exc}") from exc

    obj_path = out / "mesh.obj"
    mtl_path = out / "mesh.mtl"
    tex_path = out / "texture.png"

    ka = kd = ks = (1.0, 1.0, 1.0)
    ns = 16.0
    if material is not None:
        ka = tuple(np.asarray(material.ambient, dtype=float))
        kd = tuple(np.asarray(material.diffuse, dtype=float))
        ks = tuple(np.asarray(material.specular, dtype=float))
        ns = float(material.shininess)

    lines = ["mtllib mesh.mtl", "usemtl textured"]
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}")
    for uv in mesh.uv_coords:
        lines.append(f"vt {uv[0]:.6f} {uv[1]:.6f}")
    for f in mesh.faces:
        a, b, c = int(f[0]) + 1, int(f[1]) + 1, int(f[2]) + 1
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    try:
        obj_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        mtl_path.write_text(
            "newmtl textured\n"
            f"Ka {ka[0]:.6f} {ka[1]:.6f} {ka[2]:.6f}\n"
            f"Kd {kd[0]:.6f} {kd[1]:.6f} {kd[2]:.6f}\n"
            f"Ks {ks[0]:.6f} {ks[1]:.6f} {ks[2]:.6f}\n"
            f"Ns {ns:.6f}\n"
            "map_Kd texture.png\n",
            encoding="utf-8",
        )
        write_png(texture, tex_path)
    except OSError as exc:
        raise ExportError(f"failed writing export files to {out}: {exc}") from exc
    return {"obj": obj_path, "mtl": mtl_path, "texture": tex_path}


def export_checkpoint(checkpoint_path: str | Path, out_dir: str | Path) -> dict[str, Path]:
    """Rebuild the scene from a checkpoint and export OBJ/MTL/PNG."""
    from .config import build_model
    from .optim import build_scene_point, checkpoint_load

    groups, state, cfg = checkpoint_load(checkpoint_path)
    model = build_model(cfg).astype(np.float64)
    point = build_scene_point(model, groups)
    rest = blend_shape(
        model,
        BodyParams(beta=point.beta, theta=np.zeros((model.num_joints, 3)), delta=point.delta),
    )
    mesh = skin(model, rest, forward_kinematics(model, rest, np.zeros((model.num_joints, 3))))
    return export_obj(mesh, point.texture, out_dir, material=point.material)


def render_turntable(
    checkpoint_path: str | Path,
    frames: int = 60,
    resolution: tuple[int, int] | None = None,
    pose_keyframes=None,
    out_dir: str | Path | None = None,
    radius: float | None = None,
    elevation: float = 0.15,
    fov: float = 0.7,
) -> list[Path]:
    """Numbered PNG orbit at azimuths 2*pi*k/frames around the posed mesh.

    With pose keyframes, frame k also interpolates the pose track at
    t = k/(frames-1). Default resolution is the config's inference size
    (768x768 unless overridden).
    """
    from .config import build_model
    from .optim import build_scene_point, checkpoint_load

    if frames < 1:
        raise ValueError("frames must be >= 1")
    groups, state, cfg = checkpoint_load(checkpoint_path)
    model = build_model(cfg).astype(np.float64)
    point = build_scene_point(model, groups)
    res = tuple(resolution) if resolution is not None else tuple(cfg.render.final_resolution)
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.directory) / "turntable"
    out.mkdir(parents=True, exist_ok=True)

    from .config import build_raster_config

    raster_cfg = build_raster_config(cfg)
    rest = blend_shape(
        model,
        BodyParams(beta=point.beta, theta=np.zeros((model.num_joints, 3)), delta=point.delta),
    )
    center = 0.5 * (rest.min(axis=0) + rest.max(axis=0))
    bound = float(np.max(np.linalg.norm(rest - center, axis=1)))
    r = radius if radius is not None else 2.6 * bound

    paths = []
    for k in range(frames):
        azimuth = 2.0 * np.pi * k / frames
        if pose_keyframes is not None:
            t = 0.0 if frames == 1 else k / (frames - 1)
            theta = interpolate_keyframes(pose_keyframes, t)
        else:
            theta = np.zeros((model.num_joints, 3))
        mesh = skin(model, rest, forward_kinematics(model, rest, theta))
        eye = center + r * np.array(
            [np.cos(elevation) * np.sin(azimuth), np.sin(elevation), np.cos(elevation) * np.cos(azimuth)]
        )
        cam = Camera(
            eye=eye, look_at=center, up=np.array([0.0, 1.0, 0.0]), fov_y=fov,
            near=max(1e-3, 0.02 * r), far=r + 3.0 * bound + 2.0,
            height=res[0], width=res[1],
        )
        img = render(mesh, cam, point.light, point.material, point.texture, raster_cfg)
        frame_path = out / f"frame_{k:04d}.png"
        write_png(img, frame_path)
        paths.append(frame_path)
    return paths
