"""Total-loss assembly: per-prompt Monte Carlo semantic loss over sampled
cameras and poses, plus weighted mesh regularization on the deformed rest
mesh, with the full gradient chained scorer -> renderer -> articulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import BodyParams, TemplateModel, blend_shape, forward_kinematics, pose_vjp, skin
from .geometry import MeshTopology, build_topology
from .raster import Light, Material, SoftRasterConfig, render_forward, render_vjp
from .regularizers import RegWeights, combined_regularizer
from .sampling import CameraDist, PoseDist, sample_camera, sample_pose, substream


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class PromptSpec:
    text: str
    cameras: str = "default"       # id into the camera-distribution table
    textured: bool = True
    weight: float = 1.0

    def validate(self, camera_dists: dict[str, CameraDist]) -> None:
        if self.weight < 0:
            raise ObjectiveError(f"prompt {self.text!r} has negative weight")
        if self.cameras not in camera_dists:
            raise ObjectiveError(
                f"prompt {self.text!r} references unknown camera distribution {self.cameras!r}"
            )

    def stream_key(self) -> tuple:
        # weight deliberately excluded: scaling a weight must not reshuffle draws
        return (self.text, self.cameras, self.textured)


@dataclass(frozen=True)
class ScenePoint:
    """Natural-parameter snapshot the loss is evaluated at."""

    beta: np.ndarray
    delta: np.ndarray
    texture: np.ndarray
    light: Light
    material: Material


@dataclass
class SceneGrads:
    beta: np.ndarray
    delta: np.ndarray
    texture: np.ndarray
    light_direction: np.ndarray
    light_ambient: np.ndarray
    light_diffuse: np.ndarray
    light_specular: np.ndarray
    material_ambient: np.ndarray
    material_diffuse: np.ndarray
    material_specular: np.ndarray
    material_shininess: float

    @classmethod
    def zeros(cls, model: TemplateModel, texture_shape) -> "SceneGrads":
        return cls(
            beta=np.zeros(model.num_shapes),
            delta=np.zeros((model.num_vertices, 3)),
            texture=np.zeros(texture_shape),
            light_direction=np.zeros(3),
            light_ambient=np.zeros(3),
            light_diffuse=np.zeros(3),
            light_specular=np.zeros(3),
            material_ambient=np.zeros(3),
            material_diffuse=np.zeros(3),
            material_specular=np.zeros(3),
            material_shininess=0.0,
        )

    def accumulate_render(self, g) -> None:
        self.texture += g.texture
        self.light_direction += g.light_direction
        self.light_ambient += g.light_ambient
        self.light_diffuse += g.light_diffuse
        self.light_specular += g.light_specular
        self.material_ambient += g.material_ambient
        self.material_diffuse += g.material_diffuse
        self.material_specular += g.material_specular
        self.material_shininess += g.material_shininess


@dataclass
class LossBreakdown:
    total: float
    per_prompt: list[float]
    reg: float
    reg_terms: dict[str, float] = field(default_factory=dict)


def total_loss(
    model: TemplateModel,
    point: ScenePoint,
    prompts: list[PromptSpec],
    camera_dists: dict[str, CameraDist],
    pose_dist: PoseDist,
    scorer,
    reg_weights: RegWeights,
    batch: int,
    step: int,
    seed: int,
    resolution: tuple[int, int] = (224, 224),
    raster_cfg: SoftRasterConfig = SoftRasterConfig(),
    pose_pairing: str = "per_step",
    topology: MeshTopology | None = None,
) -> tuple[LossBreakdown, SceneGrads]:
    """Monte Carlo estimate of the training objective and its full gradient.

    Per prompt: draw a pose (one per step, or one per view when pose_pairing
    is "per_view") and `batch` cameras from the prompt's distribution, render,
    and average the scorer loss; prompts are summed with their weights. The
    regularizer acts on the deformed rest mesh (pose excluded). Scorer failure
    propagates and no partial gradient is returned.
    """
    if batch < 1:
        raise ObjectiveError("batch must be >= 1")
    if not prompts:
        raise ObjectiveError("prompt list is empty")
    if pose_pairing not in ("per_step", "per_view"):
        raise ObjectiveError(f"unknown pose pairing {pose_pairing!r}")
    for p in prompts:
        p.validate(camera_dists)

    grads = SceneGrads.zeros(model, point.texture.shape)
    rest_params = BodyParams(
        beta=point.beta, theta=np.zeros((model.num_joints, 3)), delta=point.delta
    )
    rest = blend_shape(model, rest_params)

    # regularization on the deformed rest mesh S(beta, theta=0, delta)
    if topology is None:
        topology = build_topology(model.faces, model.num_vertices)
    reg_value, reg_grad_v, reg_terms = combined_regularizer(
        rest, model.template_vertices, model.faces, reg_weights, topology
    )
    if model.num_shapes:
        grads.beta += np.einsum("kna,na->k", model.shape_basis, reg_grad_v)
    grads.delta += reg_grad_v

    per_prompt: list[float] = []
    total = reg_value
    for prompt in prompts:
        rng = substream(seed, step, *prompt.stream_key())
        dist = camera_dists[prompt.cameras]
        theta = None
        mesh = None
        if pose_pairing == "per_step":
            theta = sample_pose(pose_dist, rng, model.num_joints)
            mesh = skin(model, rest, forward_kinematics(model, rest, theta))

        views = []
        for _ in range(batch):
            if pose_pairing == "per_view":
                theta = sample_pose(pose_dist, rng, model.num_joints)
                mesh = skin(model, rest, forward_kinematics(model, rest, theta))
            cam = sample_camera(dist, model, rest, rng, resolution)
            params = BodyParams(beta=point.beta, theta=theta, delta=point.delta)
            img, saved = render_forward(
                mesh, cam, point.light, point.material, point.texture,
                raster_cfg, textured=prompt.textured,
            )
            views.append((params, saved, img))

        images = np.stack([img for _, _, img in views])
        losses, img_grads = scorer.score(images, prompt.text)
        prompt_loss = float(np.mean(losses))
        per_prompt.append(prompt_loss)
        total += prompt.weight * prompt_loss

        scale = prompt.weight / batch
        for (params, saved, _), img_grad in zip(views, img_grads):
            g = render_vjp(saved, scale * img_grad)
            grads.accumulate_render(g)
            d_beta, _, d_delta = pose_vjp(model, params, g.vertices)
            grads.beta += d_beta
            grads.delta += d_delta

    return LossBreakdown(total=float(total), per_prompt=per_prompt,
                         reg=float(reg_value), reg_terms=reg_terms), grads
