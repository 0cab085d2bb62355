"""Parametric articulated mesh: shape blending, forward kinematics, skinning.

The posing map is V_rest = template + sum_k beta_k * basis_k + delta, followed
by a kinematic chain of axis-angle joint rotations and linear blend skinning in
rest-relative coordinates (identity pose is an exact fixed point). `pose_vjp`
is the exact reverse-mode derivative of the whole composition.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .geometry import vertex_normals
from .rotation import axis_angle_to_matrix, axis_angle_vjp

ROW_SUM_TOL = 1e-6


class ModelValidationError(ValueError):
    """A TemplateModel or BodyParams field violates its invariants."""


@dataclass(frozen=True)
class TemplateModel:
    """Static data of a rigged, shapeable triangle mesh.

    Shapes: vertices (N, 3); faces (F, 3) int; uv (N, 2); shape_basis (K, N, 3);
    parent (J,) with parent[0] == -1; joint_regressor (J, N); skin_weights (N, J).
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    uv_coords: np.ndarray
    shape_basis: np.ndarray
    parent: np.ndarray
    joint_regressor: np.ndarray
    skin_weights: np.ndarray
    vertex_groups: Mapping[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def num_shapes(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def num_joints(self) -> int:
        return self.parent.shape[0]

    def validate(self) -> None:
        n, f = self.num_vertices, self.num_faces
        k, j = self.num_shapes, self.num_joints
        if self.template_vertices.shape != (n, 3):
            raise ModelValidationError("template_vertices must be (N, 3)")
        if not np.all(np.isfinite(self.template_vertices)):
            raise ModelValidationError("template_vertices contains non-finite values")
        if self.faces.shape != (f, 3):
            raise ModelValidationError("faces must be (F, 3)")
        if f and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ModelValidationError("faces reference a vertex index outside [0, N)")
        degen = (
            (self.faces[:, 0] == self.faces[:, 1])
            | (self.faces[:, 1] == self.faces[:, 2])
            | (self.faces[:, 0] == self.faces[:, 2])
        )
        if np.any(degen):
            raise ModelValidationError(
                f"degenerate face at index {int(np.nonzero(degen)[0][0])}"
            )
        if self.uv_coords.shape != (n, 2):
            raise ModelValidationError("uv_coords must be (N, 2)")
        if np.any(self.uv_coords < -1e-9) or np.any(self.uv_coords > 1 + 1e-9):
            raise ModelValidationError("uv_coords must lie in [0, 1]^2")
        if self.shape_basis.shape != (k, n, 3):
            raise ModelValidationError("shape_basis must be (K, N, 3)")
        if self.parent.shape != (j,) or j < 1:
            raise ModelValidationError("parent must be a nonempty (J,) array")
        if self.parent[0] != -1:
            raise ModelValidationError("parent[0] must be the root sentinel -1")
        for jj in range(1, j):
            if not (0 <= self.parent[jj] < jj):
                raise ModelValidationError(
                    f"parent[{jj}] = {int(self.parent[jj])} breaks topological order"
                )
        _check_rows(self.joint_regressor, (j, n), "joint_regressor")
        _check_rows(self.skin_weights, (n, j), "skin_weights")
        for name, idx in self.vertex_groups.items():
            idx = np.asarray(idx)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ModelValidationError(f"vertex_groups[{name!r}] indexes outside [0, N)")

    def astype(self, dtype) -> "TemplateModel":
        """Copy with all float arrays cast to `dtype` (indices untouched)."""
        return replace(
            self,
            template_vertices=self.template_vertices.astype(dtype),
            uv_coords=self.uv_coords.astype(dtype),
            shape_basis=self.shape_basis.astype(dtype),
            joint_regressor=self.joint_regressor.astype(dtype),
            skin_weights=self.skin_weights.astype(dtype),
        )

    def group_indices(self, name: str) -> np.ndarray:
        if name not in self.vertex_groups:
            raise KeyError(f"model has no vertex group {name!r}")
        return np.asarray(self.vertex_groups[name])


def _check_rows(arr: np.ndarray, shape, name: str) -> None:
    if arr.shape != shape:
        raise ModelValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if np.any(arr < -1e-12):
        raise ModelValidationError(f"{name} has negative entries")
    sums = arr.sum(axis=1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        row = int(np.nonzero(bad)[0][0])
        raise ModelValidationError(
            f"{name} row {row} sums to {float(sums[row]):.8f}, expected 1"
        )


@dataclass(frozen=True)
class BodyParams:
    """Optimizable/sampled articulation state: shape, pose, free-form offsets."""

    beta: np.ndarray   # (K,)
    theta: np.ndarray  # (J, 3) axis-angle per joint
    delta: np.ndarray  # (N, 3) per-vertex displacement

    @classmethod
    def zeros(cls, model: TemplateModel, dtype=np.float64) -> "BodyParams":
        return cls(
            beta=np.zeros(model.num_shapes, dtype=dtype),
            theta=np.zeros((model.num_joints, 3), dtype=dtype),
            delta=np.zeros((model.num_vertices, 3), dtype=dtype),
        )

    def validate(self, model: TemplateModel) -> None:
        if self.beta.shape != (model.num_shapes,):
            raise ModelValidationError("beta length mismatch with shape basis")
        if self.theta.shape != (model.num_joints, 3):
            raise ModelValidationError("theta must be (J, 3)")
        if self.delta.shape != (model.num_vertices, 3):
            raise ModelValidationError("delta must be (N, 3)")
        for name, arr in (("beta", self.beta), ("theta", self.theta), ("delta", self.delta)):
            if not np.all(np.isfinite(arr)):
                raise ModelValidationError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class PosedMesh:
    """World-space mesh snapshot with recomputed smooth normals."""

    vertices: np.ndarray
    faces: np.ndarray
    uv_coords: np.ndarray
    vertex_normals: np.ndarray


def blend_shape(model: TemplateModel, params: BodyParams) -> np.ndarray:
    """Rest vertices: template + beta-weighted shape basis + per-vertex delta."""
    params.validate(model)
    if model.num_shapes:
        offsets = np.tensordot(params.beta, model.shape_basis, axes=(0, 0))
    else:
        offsets = 0.0
    return model.template_vertices + offsets + params.delta


def rest_joints(model: TemplateModel, rest_vertices: np.ndarray) -> np.ndarray:
    """Joint rest positions regressed from the rest vertices: (J, 3)."""
    return model.joint_regressor @ rest_vertices


def forward_kinematics(
    model: TemplateModel, rest_vertices: np.ndarray, theta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """World rigid transforms per joint as (rotations (J,3,3), translations (J,3)).

    Joint j's world transform composes its parent's with exp(theta_j) applied
    about joint j's rest position; with theta = 0, each transform is the pure
    translation that places joint j at its rest location.
    """
    joints = rest_joints(model, rest_vertices)
    local_rot = axis_angle_to_matrix(theta)
    j = model.num_joints
    world_rot = np.empty_like(local_rot)
    world_t = np.empty_like(joints)
    world_rot[0] = local_rot[0]
    world_t[0] = joints[0]
    for jj in range(1, j):
        p = model.parent[jj]
        offset = joints[jj] - joints[p]
        world_rot[jj] = world_rot[p] @ local_rot[jj]
        world_t[jj] = world_rot[p] @ offset + world_t[p]
    return world_rot, world_t


def skin(
    model: TemplateModel,
    rest_vertices: np.ndarray,
    joint_transforms: tuple[np.ndarray, np.ndarray],
) -> PosedMesh:
    """Linear blend skinning in rest-relative coordinates.

    v' = v + sum_j w_ij (R_j (v - joint_rest_j) + t_j - v). For normalized
    weight rows this equals the classic blend, but the identity pose is an
    exact fixed point even under float32 weight rounding.
    """
    world_rot, world_t = joint_transforms
    joints = rest_joints(model, rest_vertices)
    w = model.skin_weights
    # blend (R_j - I) and (t_j - J_j): both are exactly zero at the identity
    # pose, so the fixed point survives float32 weight-row rounding
    rot_m = world_rot - np.eye(3, dtype=world_rot.dtype)
    rot_v = np.einsum("nj,jab->nab", w, rot_m)
    t_eff = (world_t - joints) - np.einsum("jab,jb->ja", rot_m, joints)
    posed = (
        rest_vertices
        + np.einsum("nab,nb->na", rot_v, rest_vertices)
        + w @ t_eff
    )
    normals = vertex_normals(posed, model.faces)
    return PosedMesh(
        vertices=posed,
        faces=model.faces,
        uv_coords=model.uv_coords,
        vertex_normals=normals,
    )


def pose_mesh(model: TemplateModel, params: BodyParams) -> PosedMesh:
    """blend_shape -> forward_kinematics -> skin in one call."""
    rest = blend_shape(model, params)
    transforms = forward_kinematics(model, rest, params.theta)
    return skin(model, rest, transforms)


def pose_vjp(
    model: TemplateModel, params: BodyParams, upstream: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact adjoint of `pose_mesh` vertices w.r.t. (beta, theta, delta).

    `upstream` is dL/d(world vertices), shape (N, 3). Normals are not part of
    this map; the renderer owns the normal chain.
    """
    if upstream.shape != (model.num_vertices, 3):
        raise ModelValidationError("upstream must match vertices (N, 3)")
    rest = blend_shape(model, params)
    joints = rest_joints(model, rest)
    local_rot = axis_angle_to_matrix(params.theta)
    j = model.num_joints
    world_rot = np.empty_like(local_rot)
    world_t = np.empty_like(joints)
    world_rot[0] = local_rot[0]
    world_t[0] = joints[0]
    for jj in range(1, j):
        p = model.parent[jj]
        world_rot[jj] = world_rot[p] @ local_rot[jj]
        world_t[jj] = world_rot[p] @ (joints[jj] - joints[p]) + world_t[p]

    w = model.skin_weights

    # ---- skinning backward ----
    # posed_i = sum_j w_ij (R_j (v_i - J_j) + t_j)
    rel = rest[:, None, :] - joints[None, :, :]            # (N, J, 3)
    wu = w[:, :, None] * upstream[:, None, :]              # (N, J, 3)
    d_world_rot = np.einsum("nja,njb->jab", wu, rel)
    d_world_t = wu.sum(axis=0)                              # (J, 3)
    rot_m = world_rot - np.eye(3, dtype=world_rot.dtype)
    rot_v = np.einsum("nj,jab->nab", w, rot_m)
    d_rest = upstream + np.einsum("nab,na->nb", rot_v, upstream)
    d_joints = -np.einsum("nj,jab,na->jb", w, world_rot, upstream)

    # ---- kinematic chain backward (reverse topological order) ----
    d_local_rot = np.zeros_like(world_rot)
    for jj in range(j - 1, 0, -1):
        p = model.parent[jj]
        offset = joints[jj] - joints[p]
        # world_rot[jj] = world_rot[p] @ local_rot[jj]
        d_world_rot[p] += d_world_rot[jj] @ local_rot[jj].T
        d_local_rot[jj] += world_rot[p].T @ d_world_rot[jj]
        # world_t[jj] = world_rot[p] @ offset + world_t[p]
        d_world_rot[p] += np.outer(d_world_t[jj], offset)
        d_offset = world_rot[p].T @ d_world_t[jj]
        d_joints[jj] += d_offset
        d_joints[p] -= d_offset
        d_world_t[p] += d_world_t[jj]
    d_local_rot[0] += d_world_rot[0]
    d_joints[0] += d_world_t[0]

    d_theta = axis_angle_vjp(params.theta, d_local_rot)

    # ---- joint regressor and blend shape backward ----
    d_rest = d_rest + model.joint_regressor.T @ d_joints
    d_delta = d_rest
    if model.num_shapes:
        d_beta = np.einsum("kna,na->k", model.shape_basis, d_rest)
    else:
        d_beta = np.zeros(0, dtype=d_rest.dtype)
    return d_beta, d_theta, d_delta
