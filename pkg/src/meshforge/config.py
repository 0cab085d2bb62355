"""Run configuration: strict YAML parsing into pydantic models, plus builders
that assemble engine objects (model, distributions, scorer, initial scene)
from a validated config.

Unknown keys and duplicate keys are rejected, never ignored: a typo in a
20-minute run's config should fail at parse time. Paper-scale defaults:
600 steps, 4 views per minibatch, 224x224 training renders, 1024x1024 texture,
768x768 inference renders.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .humanoid import HUMANOID_GROUPS

SCORER_ENDPOINT_ENV = "MESHFORGE_SCORER_ENDPOINT"


class ConfigError(ValueError):
    pass


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelCfg(_StrictModel):
    source: Literal["humanoid", "file"] = "humanoid"
    segments: int = Field(default=3, ge=1)
    path: str | None = None


class OrbitCfg(_StrictModel):
    mode: Literal["orbit"] = "orbit"
    azimuth: tuple[float, float] = (0.0, 2.0 * np.pi)
    elevation: tuple[float, float] = (-0.3, 0.5)
    radius: tuple[float, float] = (2.2, 3.2)
    fov: tuple[float, float] = (0.6, 0.6)
    look_at: str = "origin"

    @field_validator("azimuth", "elevation", "radius", "fov")
    @classmethod
    def _ordered(cls, v):
        if v[0] > v[1]:
            raise ValueError(f"range lower bound {v[0]} exceeds upper bound {v[1]}")
        return v


class PartGridCfg(_StrictModel):
    mode: Literal["part_grid"]
    group: str
    rows: int = Field(default=2, ge=1)
    cols: int = Field(default=2, ge=1)
    spread: float = 0.8
    zoom_radius: float = Field(default=0.8, gt=0)
    fov: float = Field(default=0.6, gt=0, lt=np.pi)


CameraCfg = Union[OrbitCfg, PartGridCfg]


class PromptCfg(_StrictModel):
    text: str = Field(min_length=1)
    cameras: str = "default"
    textured: bool = True
    weight: float = Field(default=1.0, ge=0)


class PoseCfg(_StrictModel):
    mode: Literal["rest", "per_joint_uniform", "keyframe_interp"] = "rest"
    bound: float = Field(default=0.3, ge=0)   # symmetric default when lo/hi omitted
    lo: list[list[float]] | None = None
    hi: list[list[float]] | None = None
    keyframes: list[list[list[float]]] | None = None
    pairing: Literal["per_step", "per_view"] = "per_step"


class ScorerCfg(_StrictModel):
    kind: Literal["random_projection", "target_image", "remote"] = "random_projection"
    embed_dim: int = Field(default=128, ge=1)
    seed: int = 0
    path: str | None = None          # target_image
    endpoint: str | None = None      # remote; falls back to $MESHFORGE_SCORER_ENDPOINT


class RegCfg(_StrictModel):
    laplacian: float = Field(default=1.0, ge=0)
    edge: float = Field(default=1.0, ge=0)
    normal: float = Field(default=0.01, ge=0)
    total: float = Field(default=1.0, ge=0)


class LearningRatesCfg(_StrictModel):
    texture: float = 0.05
    delta: float = 1e-4
    beta: float = 1e-3
    light: float = 1e-3
    material: float = 1e-3


class OptimizerCfg(_StrictModel):
    max_steps: int = Field(default=600, ge=0)
    batch_views: int = Field(default=4, ge=1)
    learning_rates: LearningRatesCfg = LearningRatesCfg()
    enabled: list[Literal["beta", "delta", "texture", "light", "material"]] = Field(
        default_factory=lambda: ["beta", "delta", "texture", "light", "material"]
    )
    grad_clip: dict[Literal["beta", "delta", "texture", "light", "material"], float] = Field(
        default_factory=lambda: {"delta": 1.0}
    )


class RasterCfg(_StrictModel):
    sigma: float = Field(default=1e-5, gt=0)
    gamma: float = Field(default=1e-4, gt=0)
    faces_per_pixel: int = Field(default=8, ge=1, le=64)
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)


class RenderCfg(_StrictModel):
    train_resolution: tuple[int, int] = (224, 224)
    final_resolution: tuple[int, int] = (768, 768)
    texture_resolution: tuple[int, int] = (1024, 1024)
    raster: RasterCfg = RasterCfg()

    @field_validator("train_resolution", "final_resolution")
    @classmethod
    def _min_res(cls, v):
        if v[0] < 8 or v[1] < 8:
            raise ValueError("resolutions must be at least 8x8")
        return v

    @field_validator("texture_resolution")
    @classmethod
    def _min_tex(cls, v):
        if v[0] < 2 or v[1] < 2:
            raise ValueError("texture resolution must be at least 2x2")
        return v


class LightCfg(_StrictModel):
    direction: tuple[float, float, float] = (0.0, 0.6, 0.8)
    ambient: tuple[float, float, float] = (0.25, 0.25, 0.25)
    diffuse: tuple[float, float, float] = (0.75, 0.75, 0.75)
    specular: tuple[float, float, float] = (0.3, 0.3, 0.3)


class MaterialCfg(_StrictModel):
    ambient: tuple[float, float, float] = (0.9, 0.9, 0.9)
    diffuse: tuple[float, float, float] = (0.85, 0.85, 0.85)
    specular: tuple[float, float, float] = (0.4, 0.4, 0.4)
    shininess: float = Field(default=16.0, gt=0)


class OutputCfg(_StrictModel):
    directory: str = "runs/latest"
    snapshot_every: int = Field(default=50, ge=0)     # 0 disables
    checkpoint_every: int = Field(default=100, ge=0)  # 0 disables intermediates


class RunConfig(_StrictModel):
    model: ModelCfg = ModelCfg()
    seed: int = 0
    prompts: list[PromptCfg] = Field(min_length=1)
    cameras: dict[str, CameraCfg] = Field(default_factory=lambda: {"default": OrbitCfg()})
    pose: PoseCfg = PoseCfg()
    scorer: ScorerCfg = ScorerCfg()
    regularizers: RegCfg = RegCfg()
    optimizer: OptimizerCfg = OptimizerCfg()
    render: RenderCfg = RenderCfg()
    light: LightCfg = LightCfg()
    material: MaterialCfg = MaterialCfg()
    output: OutputCfg = OutputCfg()


class _NoDuplicateLoader(yaml.SafeLoader):
    pass


def _mapping_no_dupes(loader, node, deep=False):
    mapping = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in mapping:
            raise ConfigError(f"duplicate key {key!r} at line {key_node.start_mark.line + 1}")
        mapping[key] = loader.construct_object(value_node, deep=deep)
    return mapping


_NoDuplicateLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _mapping_no_dupes
)


def _format_validation_error(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def model_group_names(cfg: ModelCfg, base_dir: Path) -> set[str]:
    """Vertex-group names without loading a full model (header-only for files)."""
    if cfg.source == "humanoid":
        return set(HUMANOID_GROUPS)
    from .mmx import read_header

    path = (base_dir / cfg.path).resolve() if not Path(cfg.path).is_absolute() else Path(cfg.path)
    return set(read_header(path)["vertex_groups"].keys())


def parse_config(text: str, base_dir: str | Path | None = None) -> RunConfig:
    """Parse and fully validate a YAML run config.

    Rejects unknown keys, duplicate keys, bad ranges, and dangling
    cross-references (camera distribution ids, vertex groups, scorer fields).
    """
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    try:
        raw = yaml.load(text, Loader=_NoDuplicateLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc

    # cross references
    for i, prompt in enumerate(cfg.prompts):
        if prompt.cameras not in cfg.cameras:
            raise ConfigError(
                f"prompts.{i}.cameras: unknown camera distribution {prompt.cameras!r} "
                f"(defined: {sorted(cfg.cameras)})"
            )
    if cfg.model.source == "file":
        if not cfg.model.path:
            raise ConfigError("model.path: required when model.source is 'file'")
        path = Path(cfg.model.path)
        if not path.is_absolute():
            path = (base / path).resolve()
        if not path.exists():
            raise ConfigError(f"model.path: file not found: {path}")
        cfg = cfg.model_copy(update={"model": cfg.model.model_copy(update={"path": str(path)})})
    groups = model_group_names(cfg.model, base)
    for name, cam in cfg.cameras.items():
        if isinstance(cam, OrbitCfg):
            if cam.look_at != "origin" and cam.look_at not in groups:
                raise ConfigError(
                    f"cameras.{name}.look_at: model has no vertex group {cam.look_at!r}"
                )
        else:
            if cam.group not in groups:
                raise ConfigError(f"cameras.{name}.group: model has no vertex group {cam.group!r}")
    if cfg.scorer.kind == "target_image":
        if not cfg.scorer.path:
            raise ConfigError("scorer.path: required for the target_image scorer")
        tpath = Path(cfg.scorer.path)
        if not tpath.is_absolute():
            tpath = (base / tpath).resolve()
        if not tpath.exists():
            raise ConfigError(f"scorer.path: file not found: {tpath}")
        cfg = cfg.model_copy(update={"scorer": cfg.scorer.model_copy(update={"path": str(tpath)})})
    if cfg.scorer.kind == "remote":
        endpoint = cfg.scorer.endpoint or os.environ.get(SCORER_ENDPOINT_ENV)
        if not endpoint:
            raise ConfigError(
                f"scorer.endpoint: required for the remote scorer (or set ${SCORER_ENDPOINT_ENV})"
            )
        cfg = cfg.model_copy(
            update={"scorer": cfg.scorer.model_copy(update={"endpoint": endpoint})}
        )
    if cfg.pose.mode == "keyframe_interp" and (cfg.pose.keyframes is None or len(cfg.pose.keyframes) < 2):
        raise ConfigError("pose.keyframes: keyframe_interp needs at least 2 keyframes")
    return cfg


def parse_config_file(path: str | Path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), base_dir=path.parent)


def serialize_config(cfg: RunConfig) -> str:
    data = cfg.model_dump(mode="python")

    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        return obj

    return yaml.safe_dump(clean(data), sort_keys=True)


# ---------------------------------------------------------------------------
# builders: config -> engine objects
# ---------------------------------------------------------------------------


def build_model(cfg: RunConfig):
    from .humanoid import make_test_humanoid
    from .mmx import load_model

    if cfg.model.source == "humanoid":
        return make_test_humanoid(cfg.model.segments)
    return load_model(cfg.model.path)


def build_camera_dists(cfg: RunConfig):
    from .sampling import OrbitDist, PartGridDist

    table = {}
    for name, cam in cfg.cameras.items():
        if isinstance(cam, OrbitCfg):
            table[name] = OrbitDist(
                azimuth=cam.azimuth, elevation=cam.elevation, radius=cam.radius,
                fov=cam.fov, look_at=cam.look_at,
            )
        else:
            table[name] = PartGridDist(
                group=cam.group, rows=cam.rows, cols=cam.cols,
                spread=cam.spread, zoom_radius=cam.zoom_radius, fov=cam.fov,
            )
    return table


def build_pose_dist(cfg: RunConfig, num_joints: int):
    from .sampling import PoseDist

    pose = cfg.pose
    if pose.mode == "rest":
        return PoseDist(mode="rest")
    if pose.mode == "per_joint_uniform":
        if pose.lo is not None and pose.hi is not None:
            lo = np.asarray(pose.lo, dtype=float)
            hi = np.asarray(pose.hi, dtype=float)
        else:
            lo = np.full((num_joints, 3), -pose.bound)
            hi = np.full((num_joints, 3), pose.bound)
        return PoseDist(mode="per_joint_uniform", lo=lo, hi=hi)
    frames = tuple(np.asarray(k, dtype=float) for k in pose.keyframes)
    return PoseDist(mode="keyframe_interp", keyframes=frames)


def build_scorer(cfg: RunConfig):
    from .scorers import RandomProjectionScorer, RemoteScorer, TargetImageScorer

    sc = cfg.scorer
    if sc.kind == "random_projection":
        return RandomProjectionScorer(embed_dim=sc.embed_dim, seed=sc.seed)
    if sc.kind == "target_image":
        from .export import read_png

        return TargetImageScorer(read_png(sc.path))
    return RemoteScorer(sc.endpoint)


def build_reg_weights(cfg: RunConfig):
    from .regularizers import RegWeights

    r = cfg.regularizers
    return RegWeights(laplacian=r.laplacian, edge=r.edge, normal=r.normal, total=r.total)


def build_raster_config(cfg: RunConfig):
    from .raster import SoftRasterConfig

    r = cfg.render.raster
    return SoftRasterConfig(
        sigma=r.sigma, gamma=r.gamma, faces_per_pixel=r.faces_per_pixel,
        background=tuple(r.background),
    )
