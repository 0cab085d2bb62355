"""Mesh regularization terms with exact gradients.

All three terms are nonnegative and vanish on their natural minimizers:
uniform Laplacian energy on meshes whose vertices sit at their one-ring
centroids, edge-length preservation on the rest mesh, normal consistency on
planar sheets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import MeshTopology, build_topology

_AREA_EPS = 1e-12


@dataclass(frozen=True)
class RegWeights:
    laplacian: float = 1.0
    edge: float = 1.0
    normal: float = 0.01
    total: float = 1.0     # the overall multiplier applied to the weighted sum

    def validate(self) -> None:
        for name in ("laplacian", "edge", "normal", "total"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"regularizer weight {name} must be finite and >= 0")


def laplacian_reg(vertices: np.ndarray, topo: MeshTopology) -> tuple[float, np.ndarray]:
    """Mean squared distance of each vertex to its one-ring centroid."""
    n = vertices.shape[0]
    deg = np.diff(topo.neighbor_offsets)
    owners = np.repeat(np.arange(n), deg)
    nbr = topo.neighbor_indices
    nbr_sum = np.zeros_like(vertices)
    for axis in range(3):
        nbr_sum[:, axis] = np.bincount(owners, weights=vertices[nbr, axis], minlength=n)
    active = deg > 0
    n_active = int(active.sum())
    if n_active == 0:
        return 0.0, np.zeros_like(vertices)
    safe_deg = np.maximum(deg, 1)
    e = np.where(active[:, None], vertices - nbr_sum / safe_deg[:, None], 0.0)
    value = float(np.sum(e * e) / n_active)

    grad = 2.0 / n_active * e
    # second term: each e_i pushes back on i's neighbors with -e_i / deg_i
    push = e[owners] / safe_deg[owners][:, None]
    for axis in range(3):
        grad[:, axis] -= 2.0 / n_active * np.bincount(
            nbr, weights=push[:, axis], minlength=n
        )
    return value, grad


def edge_length_reg(
    vertices: np.ndarray, rest_vertices: np.ndarray, topo: MeshTopology
) -> tuple[float, np.ndarray]:
    """Mean squared deviation of edge lengths from their rest lengths."""
    edges = topo.edges
    if len(edges) == 0:
        return 0.0, np.zeros_like(vertices)
    d = vertices[edges[:, 0]] - vertices[edges[:, 1]]
    lengths = np.linalg.norm(d, axis=1)
    rest_d = rest_vertices[edges[:, 0]] - rest_vertices[edges[:, 1]]
    rest_lengths = np.linalg.norm(rest_d, axis=1)
    diff = lengths - rest_lengths
    value = float(np.mean(diff**2))

    safe = np.maximum(lengths, 1e-12)
    coef = (2.0 / len(edges)) * diff / safe
    contrib = coef[:, None] * d
    grad = np.zeros_like(vertices)
    n = vertices.shape[0]
    for axis in range(3):
        grad[:, axis] += np.bincount(edges[:, 0], weights=contrib[:, axis], minlength=n)
        grad[:, axis] -= np.bincount(edges[:, 1], weights=contrib[:, axis], minlength=n)
    return value, grad


def normal_consistency_reg(
    vertices: np.ndarray, faces: np.ndarray, topo: MeshTopology
) -> tuple[float, np.ndarray]:
    """Mean over interior edges of one minus the cosine of the dihedral
    face-normal angle; edges touching zero-area faces are skipped."""
    n = vertices.shape[0]
    pairs = topo.interior_faces
    if len(pairs) == 0:
        return 0.0, np.zeros_like(vertices)
    v0 = vertices[faces[:, 0]]
    e1 = vertices[faces[:, 1]] - v0
    e2 = vertices[faces[:, 2]] - v0
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)

    f1 = pairs[:, 0]
    f2 = pairs[:, 1]
    ok = (norms[f1] > _AREA_EPS) & (norms[f2] > _AREA_EPS)
    f1, f2 = f1[ok], f2[ok]
    count = len(f1)
    if count == 0:
        return 0.0, np.zeros_like(vertices)
    n1 = cross[f1] / norms[f1][:, None]
    n2 = cross[f2] / norms[f2][:, None]
    cos = np.sum(n1 * n2, axis=1)
    value = float(np.mean(1.0 - cos))

    # d(1 - n1.n2): chain through both normalizations, then both crosses
    d_n1 = -n2 / count
    d_n2 = -n1 / count
    d_cross = np.zeros_like(cross)

    def normalize_back(dn, unit, nrm, fsel):
        back = (dn - unit * np.sum(dn * unit, axis=1, keepdims=True)) / nrm[fsel][:, None]
        for axis in range(3):
            np.add.at(d_cross[:, axis], fsel, back[:, axis])

    normalize_back(d_n1, n1, norms, f1)
    normalize_back(d_n2, n2, norms, f2)

    d_e1 = np.cross(e2, d_cross)
    d_e2 = np.cross(d_cross, e1)
    grad = np.zeros_like(vertices)
    for axis in range(3):
        grad[:, axis] += np.bincount(faces[:, 1], weights=d_e1[:, axis], minlength=n)
        grad[:, axis] += np.bincount(faces[:, 2], weights=d_e2[:, axis], minlength=n)
        grad[:, axis] -= np.bincount(
            faces[:, 0], weights=d_e1[:, axis] + d_e2[:, axis], minlength=n
        )
    return value, grad


def combined_regularizer(
    vertices: np.ndarray,
    rest_vertices: np.ndarray,
    faces: np.ndarray,
    weights: RegWeights,
    topo: MeshTopology | None = None,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """total * (w_lap * L_lap + w_edge * L_edge + w_normal * L_norm) and grad."""
    weights.validate()
    if topo is None:
        topo = build_topology(faces, vertices.shape[0])
    lap, g_lap = laplacian_reg(vertices, topo)
    edge, g_edge = edge_length_reg(vertices, rest_vertices, topo)
    norm, g_norm = normal_consistency_reg(vertices, faces, topo)
    value = weights.total * (weights.laplacian * lap + weights.edge * edge + weights.normal * norm)
    grad = weights.total * (
        weights.laplacian * g_lap + weights.edge * g_edge + weights.normal * g_norm
    )
    terms = {"laplacian": lap, "edge": edge, "normal": norm}
    return float(value), grad, terms
