"""Shared mesh geometry kernels: normals (with adjoint) and topology tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fallback normal for vertices whose incident faces all have zero area.
_FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])
_NORM_EPS = 1e-20


def face_cross(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Unnormalized face normals cross(v1-v0, v2-v0); length = 2 * face area."""
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    return np.cross(v1 - v0, v2 - v0)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, unit length, fallback +z for zero sums."""
    acc = accumulate_face_cross(vertices, faces)
    return _normalize_rows(acc)


def accumulate_face_cross(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Sum of unnormalized face normals around each vertex (pre-normalization)."""
    cross = face_cross(vertices, faces)
    n = vertices.shape[0]
    acc = np.zeros((n, 3), dtype=vertices.dtype)
    for c in range(3):
        for axis in range(3):
            acc[:, axis] += np.bincount(faces[:, c], weights=cross[:, axis], minlength=n)
    return acc


def _normalize_rows(acc: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(acc, axis=1)
    bad = norms < _NORM_EPS
    safe = np.where(bad, 1.0, norms)
    out = acc / safe[:, None]
    if np.any(bad):
        out[bad] = _FALLBACK_NORMAL.astype(acc.dtype)
    return out


def vertex_normals_vjp(
    vertices: np.ndarray, faces: np.ndarray, upstream: np.ndarray
) -> np.ndarray:
    """Adjoint of `vertex_normals` w.r.t. the vertex positions.

    Chains upstream through row normalization, the per-vertex scatter of face
    cross products, and the cross products themselves. Zero-sum vertices use
    the constant fallback normal, so they pass no gradient.
    """
    cross = face_cross(vertices, faces)
    n = vertices.shape[0]
    acc = np.zeros((n, 3), dtype=vertices.dtype)
    for c in range(3):
        for axis in range(3):
            acc[:, axis] += np.bincount(faces[:, c], weights=cross[:, axis], minlength=n)
    norms = np.linalg.norm(acc, axis=1)
    bad = norms < _NORM_EPS
    safe = np.where(bad, 1.0, norms)
    unit = acc / safe[:, None]
    # d(normalize)/d(acc) = (I - u u^T) / |acc|
    d_acc = (upstream - unit * np.sum(upstream * unit, axis=1, keepdims=True)) / safe[:, None]
    d_acc[bad] = 0.0
    # gather the accumulated gradient back to each face's cross product
    d_cross = d_acc[faces[:, 0]] + d_acc[faces[:, 1]] + d_acc[faces[:, 2]]
    v0 = vertices[faces[:, 0]]
    v1 = vertices[faces[:, 1]]
    v2 = vertices[faces[:, 2]]
    e1 = v1 - v0
    e2 = v2 - v0
    # cross(e1, e2): d/de1 = -cross(e2, g) ... via g x e2 and e1 x g identities
    d_e1 = np.cross(e2, d_cross)
    d_e2 = np.cross(d_cross, e1)
    grad = np.zeros_like(vertices)
    for axis in range(3):
        grad[:, axis] += np.bincount(faces[:, 1], weights=d_e1[:, axis], minlength=n)
        grad[:, axis] += np.bincount(faces[:, 2], weights=d_e2[:, axis], minlength=n)
        grad[:, axis] += np.bincount(
            faces[:, 0], weights=-(d_e1[:, axis] + d_e2[:, axis]), minlength=n
        )
    return grad


@dataclass(frozen=True)
class MeshTopology:
    """Connectivity tables derived from a face array, all index-deterministic."""

    edges: np.ndarray            # (E, 2) unique undirected edges, lexicographically sorted
    neighbor_offsets: np.ndarray  # (N+1,) CSR offsets into neighbor_indices
    neighbor_indices: np.ndarray  # flattened one-ring vertex neighbors
    interior_edges: np.ndarray   # (Ei, 2) edges shared by exactly two faces
    interior_faces: np.ndarray   # (Ei, 2) the two incident face ids per interior edge


def build_topology(faces: np.ndarray, num_vertices: int) -> MeshTopology:
    faces = np.asarray(faces)
    raw = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=0)
    face_of_edge = np.tile(np.arange(faces.shape[0]), 3)
    und = np.sort(raw, axis=1)
    order = np.lexsort((und[:, 1], und[:, 0]))
    und = und[order]
    face_of_edge = face_of_edge[order]
    new_edge = np.ones(len(und), dtype=bool)
    if len(und) > 1:
        new_edge[1:] = np.any(und[1:] != und[:-1], axis=1)
    edge_id = np.cumsum(new_edge) - 1
    edges = und[new_edge]
    counts = np.bincount(edge_id, minlength=len(edges))

    # one-ring neighbors from unique edges (both directions)
    both = np.concatenate([edges, edges[:, ::-1]], axis=0)
    order2 = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order2]
    deg = np.bincount(both[:, 0], minlength=num_vertices)
    offsets = np.zeros(num_vertices + 1, dtype=np.int64)
    np.cumsum(deg, out=offsets[1:])

    interior_mask = counts == 2
    interior = edges[interior_mask]
    # for each interior edge, the two incident faces in first-seen order
    starts = np.zeros(len(edges), dtype=np.int64)
    starts[1:] = np.cumsum(counts)[:-1]
    ia = face_of_edge[starts[interior_mask]]
    ib = face_of_edge[starts[interior_mask] + 1]
    interior_faces = np.stack([ia, ib], axis=1)

    return MeshTopology(
        edges=edges,
        neighbor_offsets=offsets,
        neighbor_indices=both[:, 1],
        interior_edges=interior,
        interior_faces=interior_faces,
    )


def is_closed_manifold(faces: np.ndarray, num_vertices: int) -> bool:
    """True when every undirected edge is shared by exactly two faces."""
    topo = build_topology(faces, num_vertices)
    return len(topo.interior_edges) == len(topo.edges)
