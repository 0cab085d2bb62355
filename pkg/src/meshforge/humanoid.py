"""Procedural rigged test models: a capsule-limb biped and a textured quad.

The biped stands on y = 0, faces +z, and is mirror-symmetric in x. Every part
is a closed capsule, so the union is a closed 2-manifold. All construction is
pure arithmetic from the arguments: equal calls are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .body import TemplateModel

# joint index layout (parent must precede child)
_JOINTS = [
    ("pelvis", -1, (0.0, 0.95, 0.0)),
    ("spine", 0, (0.0, 1.15, 0.0)),
    ("chest", 1, (0.0, 1.35, 0.0)),
    ("neck", 2, (0.0, 1.50, 0.0)),
    ("head", 3, (0.0, 1.60, 0.0)),
    ("shoulder_l", 2, (0.22, 1.42, 0.0)),
    ("elbow_l", 5, (0.48, 1.42, 0.0)),
    ("wrist_l", 6, (0.74, 1.42, 0.0)),
    ("shoulder_r", 2, (-0.22, 1.42, 0.0)),
    ("elbow_r", 8, (-0.48, 1.42, 0.0)),
    ("wrist_r", 9, (-0.74, 1.42, 0.0)),
    ("hip_l", 0, (0.10, 0.90, 0.0)),
    ("knee_l", 11, (0.10, 0.50, 0.0)),
    ("ankle_l", 12, (0.10, 0.10, 0.0)),
    ("hip_r", 0, (-0.10, 0.90, 0.0)),
    ("knee_r", 14, (-0.10, 0.50, 0.0)),
    ("ankle_r", 15, (-0.10, 0.10, 0.0)),
]

JOINT_NAMES = [name for name, _, _ in _JOINTS]
HUMANOID_GROUPS = ("head", "torso", "arm_l", "arm_r", "leg_l", "leg_r")


def _orthonormal_frame(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    b1 = np.cross(helper, axis)
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(axis, b1)
    return b1, b2


def _capsule(p0, p1, radius, sectors, axial_rings, cap_rings, uv_rect,
             symmetric_diagonals=False):
    """Closed capsule from p0 to p1; returns (verts, faces, uvs).

    With symmetric_diagonals (sectors must be divisible by 4), quad diagonals
    are chosen in mirror-paired orientation about the x = 0 plane, so an
    on-axis capsule's triangulation is exactly mirror-symmetric.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    ax = axis / length
    b1, b2 = _orthonormal_frame(ax)
    ux0, uv0, uw, uh = uv_rect
    if symmetric_diagonals and sectors % 4 != 0:
        raise ValueError("symmetric_diagonals requires sectors divisible by 4")

    rows = []  # (center, ring_radius, profile_t)
    # profile_t in [0,1] runs bottom pole -> top pole along the surface
    arc = 0.5 * np.pi * radius
    total = 2 * arc + length
    for k in range(1, cap_rings + 1):
        alpha = -0.5 * np.pi + 0.5 * np.pi * k / (cap_rings + 1)
        t = arc * (k / (cap_rings + 1)) / total
        rows.append((p0 + ax * (radius * np.sin(alpha)), radius * np.cos(alpha), t))
    for m in range(axial_rings + 1):
        f = m / axial_rings
        rows.append((p0 + axis * f, radius, (arc + length * f) / total))
    for k in range(1, cap_rings + 1):
        alpha = 0.5 * np.pi * k / (cap_rings + 1)
        t = (arc + length + arc * (k / (cap_rings + 1))) / total
        rows.append((p1 + ax * (radius * np.sin(alpha)), radius * np.cos(alpha), t))

    nrows = len(rows)
    verts = np.empty((nrows * sectors + 2, 3))
    uvs = np.empty((nrows * sectors + 2, 2))
    psi = 2.0 * np.pi * np.arange(sectors) / sectors
    ring_dirs = np.outer(np.cos(psi), b1) + np.outer(np.sin(psi), b2)
    for r, (center, rr, t) in enumerate(rows):
        verts[r * sectors : (r + 1) * sectors] = center + rr * ring_dirs
        uvs[r * sectors : (r + 1) * sectors, 0] = ux0 + uw * (np.arange(sectors) / sectors)
        uvs[r * sectors : (r + 1) * sectors, 1] = uv0 + uh * t
    bottom = nrows * sectors
    top = bottom + 1
    verts[bottom] = p0 - ax * radius
    verts[top] = p1 + ax * radius
    uvs[bottom] = (ux0 + 0.5 * uw, uv0)
    uvs[top] = (ux0 + 0.5 * uw, uv0 + uh)

    def diagonal(s):
        if not symmetric_diagonals:
            return 0
        partner = (sectors // 2 - 1 - s) % sectors
        return 0 if partner > s else 1

    faces = []
    for s in range(sectors):
        sn = (s + 1) % sectors
        faces.append((bottom, sn, s))
        base = (nrows - 1) * sectors
        faces.append((top, base + s, base + sn))
    for r in range(nrows - 1):
        lo, hi = r * sectors, (r + 1) * sectors
        for s in range(sectors):
            sn = (s + 1) % sectors
            if diagonal(s) == 0:
                faces.append((lo + s, hi + sn, hi + s))
                faces.append((lo + s, lo + sn, hi + sn))
            else:
                faces.append((lo + s, lo + sn, hi + s))
                faces.append((lo + sn, hi + sn, hi + s))
    return verts, np.asarray(faces, dtype=np.int64), uvs


def _mirror_part(verts, faces, uvs, rect_from, rect_to):
    """Reflect a part in x; flips winding and re-homes the UV island."""
    mv = verts * np.array([-1.0, 1.0, 1.0])
    mf = faces[:, [0, 2, 1]]
    mu = uvs.copy()
    mu[:, 0] += rect_to[0] - rect_from[0]
    mu[:, 1] += rect_to[1] - rect_from[1]
    return mv, mf, mu


def _segment_distances(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance from each point to each segment: (N, S)."""
    d = seg_b - seg_a                                   # (S, 3)
    rel = points[:, None, :] - seg_a[None, :, :]        # (N, S, 3)
    denom = np.maximum(np.sum(d * d, axis=1), 1e-12)
    t = np.clip(np.einsum("nsk,sk->ns", rel, d) / denom, 0.0, 1.0)
    closest = seg_a[None] + t[..., None] * d[None]
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def make_test_humanoid(segments: int = 1) -> TemplateModel:
    """Procedural biped with `segments` controlling the tessellation density.

    segments=5 lands near 10k vertices / 20k faces. Ships with two shape
    directions (height, girth), six named vertex groups, and a 17-joint tree.
    """
    if segments < 1:
        raise ValueError("segments must be >= 1")
    s = int(segments)
    joint_pos = np.array([p for _, _, p in _JOINTS])
    parent = np.array([p for _, p, _ in _JOINTS], dtype=np.int64)

    margin = 0.015

    def cell(col, row):
        return (col / 3 + margin, row / 2 + margin, 1 / 3 - 2 * margin, 1 / 2 - 2 * margin)

    # on-axis parts get mirror-paired diagonals; limbs are built once on the
    # left and reflected, so the whole mesh is exactly x-mirror-symmetric
    torso = _capsule((0.0, 0.90, 0.0), (0.0, 1.45, 0.0), 0.16, 8 * s, 6 * s, 2 * s,
                     cell(0, 0), symmetric_diagonals=True)
    head = _capsule((0.0, 1.58, 0.0), (0.0, 1.72, 0.0), 0.11, 8 * s, 3 * s, 2 * s,
                    cell(1, 0), symmetric_diagonals=True)
    arm_l = _capsule((0.20, 1.42, 0.0), (0.78, 1.42, 0.0), 0.055, 6 * s, 8 * s, s, cell(2, 0))
    arm_r = _mirror_part(*arm_l, cell(2, 0), cell(0, 1))
    leg_l = _capsule((0.10, 0.08, 0.0), (0.10, 0.92, 0.0), 0.075, 6 * s, 8 * s, s, cell(1, 1))
    leg_r = _mirror_part(*leg_l, cell(1, 1), cell(2, 1))

    parts = [("torso", torso), ("head", head), ("arm_l", arm_l),
             ("arm_r", arm_r), ("leg_l", leg_l), ("leg_r", leg_r)]
    all_verts, all_faces, all_uvs = [], [], []
    groups: dict[str, np.ndarray] = {}
    offset = 0
    for name, (v, f, uv) in parts:
        all_verts.append(v)
        all_faces.append(f + offset)
        all_uvs.append(uv)
        groups[name] = np.arange(offset, offset + len(v), dtype=np.int64)
        offset += len(v)
    verts = np.concatenate(all_verts)
    faces = np.concatenate(all_faces)
    uvs = np.concatenate(all_uvs)

    # shape basis: 0 = height stretch about the pelvis, 1 = radial girth
    pelvis_y = 0.95
    basis = np.zeros((2, len(verts), 3))
    basis[0, :, 1] = 0.12 * (verts[:, 1] - pelvis_y)
    basis[1, :, 0] = 0.10 * verts[:, 0]
    basis[1, :, 2] = 0.10 * verts[:, 2]

    # joint regressor: gaussian kNN over vertices around each joint's location
    regressor = np.zeros((len(_JOINTS), len(verts)))
    k = min(16, len(verts))
    for j, pos in enumerate(joint_pos):
        dist = np.linalg.norm(verts - pos, axis=1)
        nearest = np.argsort(dist, kind="stable")[:k]
        w = np.exp(-((dist[nearest] / 0.06) ** 2))
        regressor[j, nearest] = w / w.sum()

    # skin weights via gaussian falloff to bone segments; each segment is
    # owned by the joint whose rotation drives it (the segment's start joint)
    seg_a, seg_b, owner = [], [], []
    for j in range(len(_JOINTS)):
        children = [c for c in range(len(_JOINTS)) if parent[c] == j]
        for c in children:
            seg_a.append(joint_pos[j])
            seg_b.append(joint_pos[c])
            owner.append(j)
        if not children:  # extend leaves outward so tips bind to the leaf joint
            direction = joint_pos[j] - joint_pos[parent[j]]
            norm = np.linalg.norm(direction)
            tip = joint_pos[j] + direction / norm * 0.18
            seg_a.append(joint_pos[j])
            seg_b.append(tip)
            owner.append(j)
    dists = _segment_distances(verts, np.asarray(seg_a), np.asarray(seg_b))
    seg_w = np.exp(-((dists / 0.045) ** 2))
    seg_w = np.maximum(seg_w, 1e-30)
    skin = np.zeros((len(verts), len(_JOINTS)))
    for sid, j in enumerate(owner):
        skin[:, j] += seg_w[:, sid]
    skin /= skin.sum(axis=1, keepdims=True)

    skin32 = skin.astype(np.float32)
    skin32 /= skin32.sum(axis=1, keepdims=True)
    reg32 = regressor.astype(np.float32)
    reg32 /= reg32.sum(axis=1, keepdims=True)

    model = TemplateModel(
        template_vertices=verts.astype(np.float32),
        faces=faces,
        uv_coords=np.clip(uvs, 0.0, 1.0).astype(np.float32),
        shape_basis=basis.astype(np.float32),
        parent=parent,
        joint_regressor=reg32,
        skin_weights=skin32,
        vertex_groups=groups,
    )
    model.validate()
    return model


def make_quad_model(size: float = 1.0, subdivisions: int = 1) -> TemplateModel:
    """Flat textured square in the xy plane facing +z, single root joint.

    Minimal single-bone model for texture-path tests and recovery experiments.
    """
    n = subdivisions + 1
    lin = np.linspace(-0.5 * size, 0.5 * size, n)
    gx, gy = np.meshgrid(lin, lin, indexing="xy")
    verts = np.stack([gx.ravel(), gy.ravel(), np.zeros(n * n)], axis=1)
    uv = np.stack(
        [(gx.ravel() / size + 0.5), (gy.ravel() / size + 0.5)], axis=1
    )
    faces = []
    for i in range(subdivisions):
        for j in range(subdivisions):
            a = i * n + j
            b = a + 1
            c = a + n
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    nv = len(verts)
    model = TemplateModel(
        template_vertices=verts.astype(np.float32),
        faces=np.asarray(faces, dtype=np.int64),
        uv_coords=uv.astype(np.float32),
        shape_basis=np.zeros((0, nv, 3), dtype=np.float32),
        parent=np.array([-1], dtype=np.int64),
        joint_regressor=np.full((1, nv), 1.0 / nv, dtype=np.float32),
        skin_weights=np.ones((nv, 1), dtype=np.float32),
        vertex_groups={"quad": np.arange(nv, dtype=np.int64)},
    )
    model.validate()
    return model
