"""Independent test oracles: brute-force hard z-buffer renderer and scene
builders. Deliberately written with per-pixel full-face loops and none of the
engine's soft-rasterization machinery."""

import numpy as np

from meshforge.body import PosedMesh
from meshforge.camera import Camera
from meshforge.geometry import vertex_normals


def hard_render(mesh, cam, light, material, texture, background, textured=True):
    """Hard rasterizer: pixel centers, point-in-triangle, nearest-depth wins."""
    from meshforge.camera import project

    ndc, depth, clipped = project(cam, mesh.vertices)
    h, w = cam.height, cam.width
    img = np.tile(np.asarray(background, dtype=float), (h, w, 1))
    zbuf = np.full((h, w), np.inf)

    face_ok = ~np.any(clipped[mesh.faces], axis=1)
    xs = -1 + 2 * (np.arange(w) + 0.5) / w
    ys = 1 - 2 * (np.arange(h) + 0.5) / h
    for fi in np.nonzero(face_ok)[0]:
        ia, ib, ic = mesh.faces[fi]
        a, b, c = ndc[ia], ndc[ib], ndc[ic]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(area) < 1e-14:
            continue
        for i in range(h):
            for j in range(w):
                p = (xs[j], ys[i])
                wa = (b[0] - p[0]) * (c[1] - p[1]) - (b[1] - p[1]) * (c[0] - p[0])
                wb = (c[0] - p[0]) * (a[1] - p[1]) - (c[1] - p[1]) * (a[0] - p[0])
                wc = (a[0] - p[0]) * (b[1] - p[1]) - (a[1] - p[1]) * (b[0] - p[0])
                s = np.sign(area)
                if wa * s < 0 or wb * s < 0 or wc * s < 0:
                    continue
                ba = np.array([wa, wb, wc]) / area
                z = ba[0] * depth[ia] + ba[1] * depth[ib] + ba[2] * depth[ic]
                if z < zbuf[i, j]:
                    zbuf[i, j] = z
                    img[i, j] = _phong(
                        mesh, (ia, ib, ic), ba, cam, light, material, texture, textured
                    )
    return np.clip(img, 0.0, 1.0)


def _phong(mesh, idx, ba, cam, light, material, texture, textured):
    n = ba[0] * mesh.vertex_normals[idx[0]] + ba[1] * mesh.vertex_normals[idx[1]] + ba[2] * mesh.vertex_normals[idx[2]]
    n = n / max(np.linalg.norm(n), 1e-12)
    pos = ba[0] * mesh.vertices[idx[0]] + ba[1] * mesh.vertices[idx[1]] + ba[2] * mesh.vertices[idx[2]]
    view = cam.eye - pos
    view = view / max(np.linalg.norm(view), 1e-12)
    ldir = np.asarray(light.direction, dtype=float)
    ndotl = float(n @ ldir)
    diff = max(ndotl, 0.0)
    refl = 2 * ndotl * n - ldir
    rv = max(float(refl @ view), 0.0)
    spec = rv**material.shininess if rv > 0 else 0.0
    if textured:
        uv = ba[0] * mesh.uv_coords[idx[0]] + ba[1] * mesh.uv_coords[idx[1]] + ba[2] * mesh.uv_coords[idx[2]]
        base = _bilinear(texture, uv)
    else:
        base = np.ones(3)
    return (
        np.asarray(light.ambient) * np.asarray(material.ambient) * base
        + np.asarray(light.diffuse) * np.asarray(material.diffuse) * diff * base
        + np.asarray(light.specular) * np.asarray(material.specular) * spec
    )


def _bilinear(tex, uv):
    ht, wt = tex.shape[:2]
    cf = uv[0] * wt - 0.5
    rf = (1 - uv[1]) * ht - 0.5
    c0 = int(np.floor(cf))
    r0 = int(np.floor(rf))
    fx, fy = cf - c0, rf - r0
    cc0, cc1 = np.clip(c0, 0, wt - 1), np.clip(c0 + 1, 0, wt - 1)
    rr0, rr1 = np.clip(r0, 0, ht - 1), np.clip(r0 + 1, 0, ht - 1)
    return (
        (1 - fx) * (1 - fy) * tex[rr0, cc0]
        + fx * (1 - fy) * tex[rr0, cc1]
        + (1 - fx) * fy * tex[rr1, cc0]
        + fx * fy * tex[rr1, cc1]
    )


def make_blob_mesh(rng, radius=0.6, jitter=0.25, center=(0.0, 0.0, 0.0)):
    """Closed octahedron-based blob with random radial jitter; smooth normals."""
    base = np.array(
        [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float
    )
    faces = np.array(
        [
            [0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
            [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5],
        ]
    )
    # one subdivision round -> 32 faces
    verts = list(base)
    edge_mid = {}
    new_faces = []
    for f in faces:
        mids = []
        for e in range(3):
            key = tuple(sorted((f[e], f[(e + 1) % 3])))
            if key not in edge_mid:
                m = verts[key[0]] + verts[key[1]]
                m = m / np.linalg.norm(m)
                edge_mid[key] = len(verts)
                verts.append(m)
            mids.append(edge_mid[key])
        a, b, c = f
        ab, bc, ca = mids
        new_faces += [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
    verts = np.asarray(verts)
    faces = np.asarray(new_faces)
    r = radius * (1 + jitter * (rng.uniform(-1, 1, len(verts))))
    verts = verts * r[:, None] + np.asarray(center)
    uv = np.stack(
        [0.5 + np.arctan2(verts[:, 2] - center[2], verts[:, 0] - center[0]) / (2 * np.pi),
         0.5 + 0.49 * np.tanh(verts[:, 1] - center[1])],
        axis=1,
    )
    return PosedMesh(
        vertices=verts,
        faces=faces,
        uv_coords=np.clip(uv, 0, 1),
        vertex_normals=vertex_normals(verts, faces),
    )


def make_tri_mesh(verts, uv=None):
    verts = np.asarray(verts, dtype=float)
    faces = np.arange(len(verts)).reshape(-1, 3)
    if uv is None:
        uv = np.zeros((len(verts), 2))
    return PosedMesh(
        vertices=verts,
        faces=faces,
        uv_coords=np.asarray(uv, dtype=float),
        vertex_normals=vertex_normals(verts, faces),
    )


def front_camera(height=32, width=32, dist=3.0, fov=0.7):
    return Camera(
        eye=np.array([0.0, 0.0, dist]),
        look_at=np.zeros(3),
        up=np.array([0.0, 1.0, 0.0]),
        fov_y=fov,
        near=0.1,
        far=dist + 10.0,
        height=height,
        width=width,
    )
