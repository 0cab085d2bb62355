"""Differentiable soft rasterizer and Phong shader.

Pipeline: project -> rasterize (soft coverage + top-K fragments per pixel) ->
shade (bilinear texture, Phong, softmax depth compositing with a background
slot). `render_forward` returns the image plus a saved-state record;
`render_vjp` replays it in reverse for exact gradients w.r.t. mesh vertices
(through barycentrics, coverage distances, depth weights, and smooth normals),
texture, light, and material.

Coverage of a pixel by a face is sigmoid(+-d^2 / sigma) with d the NDC
distance from the pixel center to the triangle boundary (sign positive
inside). Fragments are composited by softmax over log(coverage) + zinv/gamma
where zinv = (far - depth)/(far - near) in [0, 1]; the background slot sits at
logit 0. Fragments with coverage below COVERAGE_CUTOFF are never generated,
which bounds candidate counts and makes the sigma->0, gamma->0 limit match a
hard z-buffer away from silhouettes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .body import PosedMesh
from .camera import Camera, project, project_vjp
from .geometry import vertex_normals_vjp

COVERAGE_CUTOFF = 1e-7
_AREA_EPS = 1e-14
_SEG_EPS = 1e-14
_NORM_EPS = 1e-12


class RenderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SoftRasterConfig:
    sigma: float = 1e-5            # NDC^2 distance scale of edge softness
    gamma: float = 1e-4            # depth-aggregation temperature
    faces_per_pixel: int = 8
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def validate(self) -> None:
        if not self.sigma > 0:
            raise RenderConfigError("sigma must be > 0")
        if not self.gamma > 0:
            raise RenderConfigError("gamma must be > 0")
        if not 1 <= self.faces_per_pixel <= 64:
            raise RenderConfigError("faces_per_pixel must be in [1, 64]")


@dataclass(frozen=True)
class Light:
    """Directional light; `direction` is the unit vector toward the source."""

    direction: np.ndarray
    ambient: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray

    def __post_init__(self):
        for name in ("direction", "ambient", "diffuse", "specular"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def validate(self) -> None:
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-6:
            raise RenderConfigError("light direction must be unit length")
        for name in ("ambient", "diffuse", "specular"):
            if np.any(getattr(self, name) < 0):
                raise RenderConfigError(f"light {name} intensity must be >= 0")


@dataclass(frozen=True)
class Material:
    ambient: np.ndarray
    diffuse: np.ndarray
    specular: np.ndarray
    shininess: float = 16.0

    def __post_init__(self):
        for name in ("ambient", "diffuse", "specular"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    def validate(self) -> None:
        for name in ("ambient", "diffuse", "specular"):
            v = getattr(self, name)
            if np.any(v < 0) or np.any(v > 1):
                raise RenderConfigError(f"material {name} must lie in [0, 1]")
        if not (np.isfinite(self.shininess) and self.shininess > 0):
            raise RenderConfigError("shininess must be finite and > 0")


def validate_texture(texture: np.ndarray) -> None:
    if texture.ndim != 3 or texture.shape[2] != 3:
        raise RenderConfigError("texture must be (H, W, 3)")
    if texture.shape[0] < 2 or texture.shape[1] < 2:
        raise RenderConfigError("texture must be at least 2x2")
    if texture.min() < 0 or texture.max() > 1:
        raise RenderConfigError("texture values must lie in [0, 1]")


@dataclass
class FragmentBuffer:
    """Per-pixel fragment lists, flattened and sorted by (pixel, depth, face)."""

    height: int
    width: int
    pixel: np.ndarray       # (M,) flat pixel index, row-major
    face: np.ndarray        # (M,)
    coverage: np.ndarray    # (M,) in (0, 1]
    bary: np.ndarray        # (M, 3) clamped + renormalized
    depth: np.ndarray       # (M,) interpolated view depth
    # saved intermediates for the backward pass
    inside: np.ndarray
    bary_raw: np.ndarray
    area: np.ndarray
    edge_index: np.ndarray
    edge_t_raw: np.ndarray
    edge_den: np.ndarray
    px: np.ndarray          # pixel center NDC x
    py: np.ndarray          # pixel center NDC y


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _cross2(ux, uy, vx, vy):
    return ux * vy - uy * vx


def rasterize(
    ndc: np.ndarray,
    depth: np.ndarray,
    clipped: np.ndarray,
    faces: np.ndarray,
    cfg: SoftRasterConfig,
    height: int,
    width: int,
) -> FragmentBuffer:
    """Soft-rasterize projected triangles into a FragmentBuffer.

    Candidate pixels come from per-face bounding boxes dilated by the coverage
    cutoff radius; per pixel the top faces_per_pixel nearest fragments by depth
    survive, ties broken by face index. Fully deterministic.
    """
    cfg.validate()
    dtype = ndc.dtype
    face_ok = ~np.any(clipped[faces], axis=1)
    fids = np.nonzero(face_ok)[0]
    empty = FragmentBuffer(
        height=height, width=width,
        pixel=np.zeros(0, np.int64), face=np.zeros(0, np.int64),
        coverage=np.zeros(0, dtype), bary=np.zeros((0, 3), dtype),
        depth=np.zeros(0, dtype), inside=np.zeros(0, bool),
        bary_raw=np.zeros((0, 3), dtype), area=np.zeros(0, dtype),
        edge_index=np.zeros(0, np.int64), edge_t_raw=np.zeros(0, dtype),
        edge_den=np.zeros(0, dtype), px=np.zeros(0, dtype), py=np.zeros(0, dtype),
    )
    if fids.size == 0:
        return empty

    tri = ndc[faces[fids]]                      # (Fv, 3, 2)
    dil = np.sqrt(cfg.sigma * np.log((1.0 - COVERAGE_CUTOFF) / COVERAGE_CUTOFF))
    minx = tri[:, :, 0].min(axis=1) - dil
    maxx = tri[:, :, 0].max(axis=1) + dil
    miny = tri[:, :, 1].min(axis=1) - dil
    maxy = tri[:, :, 1].max(axis=1) + dil
    # pixel centers: x_j = -1 + 2(j+0.5)/W, y_i = 1 - 2(i+0.5)/H
    j0 = np.maximum(np.ceil((minx + 1) * width / 2 - 0.5), 0).astype(np.int64)
    j1 = np.minimum(np.floor((maxx + 1) * width / 2 - 0.5), width - 1).astype(np.int64)
    i0 = np.maximum(np.ceil((1 - maxy) * height / 2 - 0.5), 0).astype(np.int64)
    i1 = np.minimum(np.floor((1 - miny) * height / 2 - 0.5), height - 1).astype(np.int64)
    w_box = j1 - j0 + 1
    h_box = i1 - i0 + 1
    nonempty = (w_box > 0) & (h_box > 0)
    fids = fids[nonempty]
    if fids.size == 0:
        return empty
    j0, j1, i0, i1 = j0[nonempty], j1[nonempty], i0[nonempty], i1[nonempty]
    w_box, h_box = w_box[nonempty], h_box[nonempty]

    counts = (w_box * h_box).astype(np.int64)
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    total = int(offsets[-1])
    pair_face_slot = np.repeat(np.arange(len(fids)), counts)
    within = np.arange(total, dtype=np.int64) - offsets[pair_face_slot]
    col = j0[pair_face_slot] + within % w_box[pair_face_slot]
    row = i0[pair_face_slot] + within // w_box[pair_face_slot]
    pface = fids[pair_face_slot]

    px = (-1.0 + 2.0 * (col + 0.5) / width).astype(dtype)
    py = (1.0 - 2.0 * (row + 0.5) / height).astype(dtype)
    va = ndc[faces[pface, 0]]
    vb = ndc[faces[pface, 1]]
    vc = ndc[faces[pface, 2]]

    area = _cross2(vb[:, 0] - va[:, 0], vb[:, 1] - va[:, 1],
                   vc[:, 0] - va[:, 0], vc[:, 1] - va[:, 1])
    wa = _cross2(vb[:, 0] - px, vb[:, 1] - py, vc[:, 0] - px, vc[:, 1] - py)
    wb = _cross2(vc[:, 0] - px, vc[:, 1] - py, va[:, 0] - px, va[:, 1] - py)
    wc = _cross2(va[:, 0] - px, va[:, 1] - py, vb[:, 0] - px, vb[:, 1] - py)
    sgn = np.sign(area)
    inside = (wa * sgn >= 0) & (wb * sgn >= 0) & (wc * sgn >= 0) & (np.abs(area) > _AREA_EPS)

    # squared distance to each edge segment
    d2 = np.full(total, np.inf, dtype=dtype)
    edge_index = np.zeros(total, dtype=np.int64)
    edge_t_raw = np.zeros(total, dtype=dtype)
    edge_den = np.ones(total, dtype=dtype)
    corners = (va, vb, vc)
    for e in range(3):
        p0 = corners[e]
        p1 = corners[(e + 1) % 3]
        vx = p1[:, 0] - p0[:, 0]
        vy = p1[:, 1] - p0[:, 1]
        wx = px - p0[:, 0]
        wy = py - p0[:, 1]
        den = np.maximum(vx * vx + vy * vy, _SEG_EPS)
        t_raw = (wx * vx + wy * vy) / den
        t = np.clip(t_raw, 0.0, 1.0)
        dx = wx - t * vx
        dy = wy - t * vy
        d2_e = dx * dx + dy * dy
        better = d2_e < d2
        d2 = np.where(better, d2_e, d2)
        edge_index = np.where(better, e, edge_index)
        edge_t_raw = np.where(better, t_raw, edge_t_raw)
        edge_den = np.where(better, den, edge_den)

    sig_arg = np.where(inside, d2, -d2) / cfg.sigma
    coverage = _stable_sigmoid(sig_arg)
    keep = coverage >= COVERAGE_CUTOFF
    if not np.any(keep):
        return empty

    def cut(x):
        return x[keep]

    pface, px, py, area = cut(pface), cut(px), cut(py), cut(area)
    wa, wb, wc = cut(wa), cut(wb), cut(wc)
    inside, coverage = cut(inside), cut(coverage)
    edge_index, edge_t_raw, edge_den = cut(edge_index), cut(edge_t_raw), cut(edge_den)
    row, col = cut(row), cut(col)

    area_safe = np.where(np.abs(area) > _AREA_EPS, area, np.where(area >= 0, _AREA_EPS, -_AREA_EPS))
    bary_raw = np.stack([wa, wb, wc], axis=1) / area_safe[:, None]
    bq = np.clip(bary_raw, 0.0, 1.0)
    bsum = np.maximum(bq.sum(axis=1), _SEG_EPS)
    bary = bq / bsum[:, None]
    zvals = depth[faces[pface]]
    fdepth = np.sum(bary * zvals, axis=1)

    pix = row * width + col
    order = np.lexsort((pface, fdepth, pix))
    pix, pface, coverage = pix[order], pface[order], coverage[order]
    bary, bary_raw, fdepth = bary[order], bary_raw[order], fdepth[order]
    inside, area = inside[order], area[order]
    edge_index, edge_t_raw, edge_den = edge_index[order], edge_t_raw[order], edge_den[order]
    px, py = px[order], py[order]

    new_seg = np.ones(len(pix), dtype=bool)
    new_seg[1:] = pix[1:] != pix[:-1]
    seg_start = np.nonzero(new_seg)[0]
    seg_id = np.cumsum(new_seg) - 1
    rank = np.arange(len(pix)) - seg_start[seg_id]
    keep_k = rank < cfg.faces_per_pixel

    def top(x):
        return x[keep_k]

    return FragmentBuffer(
        height=height, width=width,
        pixel=top(pix), face=top(pface), coverage=top(coverage),
        bary=top(bary), depth=top(fdepth), inside=top(inside),
        bary_raw=top(bary_raw), area=top(area), edge_index=top(edge_index),
        edge_t_raw=top(edge_t_raw), edge_den=top(edge_den), px=top(px), py=top(py),
    )


def _bilinear_setup(texture: np.ndarray, uv: np.ndarray):
    """Corner indices and weights for clamp-to-edge bilinear sampling.

    u maps to columns, v runs bottom-up (row 0 is the texture top).
    """
    ht, wt = texture.shape[:2]
    cf = uv[:, 0] * wt - 0.5
    rf = (1.0 - uv[:, 1]) * ht - 0.5
    c0f = np.floor(cf)
    r0f = np.floor(rf)
    fx = cf - c0f
    fy = rf - r0f
    c0 = np.clip(c0f, 0, wt - 1).astype(np.int64)
    c1 = np.clip(c0f + 1, 0, wt - 1).astype(np.int64)
    r0 = np.clip(r0f, 0, ht - 1).astype(np.int64)
    r1 = np.clip(r0f + 1, 0, ht - 1).astype(np.int64)
    return c0, c1, r0, r1, fx, fy


def _bilinear_sample(texture: np.ndarray, uv: np.ndarray) -> np.ndarray:
    c0, c1, r0, r1, fx, fy = _bilinear_setup(texture, uv)
    t00 = texture[r0, c0]
    t10 = texture[r0, c1]
    t01 = texture[r1, c0]
    t11 = texture[r1, c1]
    fx = fx[:, None]
    fy = fy[:, None]
    return (
        (1 - fx) * (1 - fy) * t00 + fx * (1 - fy) * t10 + (1 - fx) * fy * t01 + fx * fy * t11
    )


def _normalize_rows(x: np.ndarray):
    n = np.linalg.norm(x, axis=1)
    safe = np.maximum(n, _NORM_EPS)
    return x / safe[:, None], safe


@dataclass
class SavedRender:
    """Everything the backward pass needs, captured during the forward."""

    camera: Camera
    cfg: SoftRasterConfig
    light: Light
    material: Material
    texture: np.ndarray
    textured: bool
    vertices: np.ndarray
    faces: np.ndarray
    uv_coords: np.ndarray
    vnormals: np.ndarray
    ndc: np.ndarray
    vdepth: np.ndarray
    clipped: np.ndarray
    frag: FragmentBuffer
    # shading intermediates (per fragment)
    n_unit: np.ndarray = field(default=None)
    n_norm: np.ndarray = field(default=None)
    pos: np.ndarray = field(default=None)
    uv: np.ndarray = field(default=None)
    v_unit: np.ndarray = field(default=None)
    v_norm: np.ndarray = field(default=None)
    ndotl: np.ndarray = field(default=None)
    rv: np.ndarray = field(default=None)
    base: np.ndarray = field(default=None)
    color: np.ndarray = field(default=None)
    # compositing intermediates
    zinv_raw: np.ndarray = field(default=None)
    logits: np.ndarray = field(default=None)
    mshift: np.ndarray = field(default=None)
    zden: np.ndarray = field(default=None)
    wfrag: np.ndarray = field(default=None)
    wbg: np.ndarray = field(default=None)
    pre_clamp: np.ndarray = field(default=None)


def shade(
    frag: FragmentBuffer,
    mesh: PosedMesh,
    texture: np.ndarray,
    light: Light,
    material: Material,
    camera: Camera,
    cfg: SoftRasterConfig,
    textured: bool = True,
    _saved: SavedRender | None = None,
) -> np.ndarray:
    """Phong-shade fragments and composite them into an (H, W, 3) image."""
    light.validate()
    material.validate()
    validate_texture(texture)
    hw = frag.height * frag.width
    dtype = mesh.vertices.dtype
    bg = np.asarray(cfg.background, dtype=dtype)

    fv = mesh.faces[frag.face]                       # (M, 3)
    bary = frag.bary
    n_raw = np.einsum("mc,mcd->md", bary, mesh.vertex_normals[fv])
    n_unit, n_norm = _normalize_rows(n_raw)
    pos = np.einsum("mc,mcd->md", bary, mesh.vertices[fv])
    uv = np.einsum("mc,mcd->md", bary, mesh.uv_coords[fv])
    v_raw = camera.eye[None, :] - pos
    v_unit, v_norm = _normalize_rows(v_raw)
    ldir = light.direction.astype(dtype)

    ndotl = n_unit @ ldir
    diff_f = np.maximum(ndotl, 0.0)
    refl = 2.0 * ndotl[:, None] * n_unit - ldir[None, :]
    rv = np.sum(refl * v_unit, axis=1)
    rv_pos = np.maximum(rv, 0.0)
    with np.errstate(divide="ignore"):
        spec_f = np.where(rv_pos > 0, rv_pos**material.shininess, 0.0)

    base = _bilinear_sample(texture, uv) if textured else np.ones((len(bary), 3), dtype=dtype)
    color = (
        light.ambient * material.ambient * base
        + light.diffuse * material.diffuse * diff_f[:, None] * base
        + light.specular * material.specular * spec_f[:, None]
    )

    # softmax compositing over log coverage + normalized inverse depth
    zinv_raw = (camera.far - frag.depth) / (camera.far - camera.near)
    zinv = np.clip(zinv_raw, 0.0, 1.0)
    logits = np.log(frag.coverage) + zinv / cfg.gamma
    mshift = np.zeros(hw, dtype=dtype)               # background logit is 0
    if len(frag.pixel):
        # fragments are sorted by pixel: segment-max via reduceat
        new_seg = np.ones(len(frag.pixel), dtype=bool)
        new_seg[1:] = frag.pixel[1:] != frag.pixel[:-1]
        starts = np.nonzero(new_seg)[0]
        seg_max = np.maximum.reduceat(logits, starts)
        mshift[frag.pixel[starts]] = np.maximum(seg_max, 0.0)
    e = np.exp(logits - mshift[frag.pixel])
    ebg = np.exp(-mshift)
    zden = np.bincount(frag.pixel, weights=e, minlength=hw) + ebg
    wfrag = e / zden[frag.pixel]
    wbg = ebg / zden

    img = np.empty((hw, 3), dtype=dtype)
    for ch in range(3):
        img[:, ch] = np.bincount(frag.pixel, weights=wfrag * color[:, ch], minlength=hw)
    img += wbg[:, None] * bg[None, :]
    pre_clamp = img
    out = np.minimum(pre_clamp, 1.0).reshape(frag.height, frag.width, 3)

    if _saved is not None:
        _saved.n_unit, _saved.n_norm = n_unit, n_norm
        _saved.pos, _saved.uv = pos, uv
        _saved.v_unit, _saved.v_norm = v_unit, v_norm
        _saved.ndotl, _saved.rv = ndotl, rv
        _saved.base, _saved.color = base, color
        _saved.zinv_raw, _saved.logits = zinv_raw, logits
        _saved.mshift, _saved.zden = mshift, zden
        _saved.wfrag, _saved.wbg = wfrag, wbg
        _saved.pre_clamp = pre_clamp
    return out


def render_forward(
    mesh: PosedMesh,
    cam: Camera,
    light: Light,
    material: Material,
    texture: np.ndarray,
    cfg: SoftRasterConfig,
    textured: bool = True,
) -> tuple[np.ndarray, SavedRender]:
    """Full differentiable forward pass; returns (image, saved state)."""
    ndc, vdepth, clipped = project(cam, mesh.vertices)
    frag = rasterize(ndc, vdepth, clipped, mesh.faces, cfg, cam.height, cam.width)
    saved = SavedRender(
        camera=cam, cfg=cfg, light=light, material=material, texture=texture,
        textured=textured, vertices=mesh.vertices, faces=mesh.faces,
        uv_coords=mesh.uv_coords, vnormals=mesh.vertex_normals,
        ndc=ndc, vdepth=vdepth, clipped=clipped, frag=frag,
    )
    img = shade(frag, mesh, texture, light, material, cam, cfg, textured, _saved=saved)
    return img, saved


def render(
    mesh: PosedMesh,
    cam: Camera,
    light: Light,
    material: Material,
    texture: np.ndarray,
    cfg: SoftRasterConfig,
    textured: bool = True,
) -> np.ndarray:
    """Deterministic render; equal inputs give bit-identical images."""
    img, _ = render_forward(mesh, cam, light, material, texture, cfg, textured)
    return img


@dataclass
class RenderGrads:
    vertices: np.ndarray           # (N, 3) world-space
    texture: np.ndarray            # texture-shaped
    light_direction: np.ndarray    # (3,) w.r.t. the unit direction vector
    light_ambient: np.ndarray
    light_diffuse: np.ndarray
    light_specular: np.ndarray
    material_ambient: np.ndarray
    material_diffuse: np.ndarray
    material_specular: np.ndarray
    material_shininess: float


def render_vjp(saved: SavedRender, upstream: np.ndarray) -> RenderGrads:
    """Exact reverse-mode derivative of `render_forward`'s image output."""
    frag = saved.frag
    cam = saved.camera
    cfg = saved.cfg
    light = saved.light
    mat = saved.material
    h, w = frag.height, frag.width
    if upstream.shape != (h, w, 3):
        raise ValueError(f"upstream must be ({h}, {w}, 3)")
    dtype = saved.vertices.dtype
    n_verts = saved.vertices.shape[0]
    grads = RenderGrads(
        vertices=np.zeros((n_verts, 3), dtype=dtype),
        texture=np.zeros_like(saved.texture),
        light_direction=np.zeros(3, dtype=dtype),
        light_ambient=np.zeros(3, dtype=dtype),
        light_diffuse=np.zeros(3, dtype=dtype),
        light_specular=np.zeros(3, dtype=dtype),
        material_ambient=np.zeros(3, dtype=dtype),
        material_diffuse=np.zeros(3, dtype=dtype),
        material_specular=np.zeros(3, dtype=dtype),
        material_shininess=0.0,
    )
    if len(frag.pixel) == 0:
        return grads

    hw = h * w
    bg = np.asarray(cfg.background, dtype=dtype)
    dimg = (upstream.reshape(hw, 3) * (saved.pre_clamp < 1.0)).astype(dtype)

    # ---- compositing backward ----
    # g_k = dL/dw_k per fragment; g_bg per pixel
    g_frag = np.sum(dimg[frag.pixel] * saved.color, axis=1)
    g_bg = dimg @ bg
    gbar = np.bincount(frag.pixel, weights=saved.wfrag * g_frag, minlength=hw)
    gbar += saved.wbg * g_bg
    d_logits = saved.wfrag * (g_frag - gbar[frag.pixel])
    d_color = saved.wfrag[:, None] * dimg[frag.pixel]

    d_coverage = d_logits / frag.coverage
    d_zinv = d_logits / cfg.gamma
    zclip_open = (saved.zinv_raw > 0.0) & (saved.zinv_raw < 1.0)
    d_fdepth = np.where(zclip_open, -d_zinv / (cam.far - cam.near), 0.0)

    # ---- shading backward ----
    fv = saved.faces[frag.face]
    bary = frag.bary
    ldir = light.direction.astype(dtype)
    diff_f = np.maximum(saved.ndotl, 0.0)
    rv_pos = np.maximum(saved.rv, 0.0)
    with np.errstate(divide="ignore"):
        spec_f = np.where(rv_pos > 0, rv_pos**mat.shininess, 0.0)

    amb_term = light.ambient * mat.ambient            # (3,)
    diff_term = light.diffuse * mat.diffuse
    spec_term = light.specular * mat.specular

    d_base = d_color * (amb_term + diff_term * diff_f[:, None])
    d_diff_f = np.sum(d_color * diff_term * saved.base, axis=1)
    d_spec_f = d_color @ spec_term

    grads.light_ambient[:] = np.einsum("mc,mc->c", d_color, saved.base) * mat.ambient
    grads.material_ambient[:] = np.einsum("mc,mc->c", d_color, saved.base) * light.ambient
    db_diff = np.einsum("mc,mc->c", d_color, saved.base * diff_f[:, None])
    grads.light_diffuse[:] = db_diff * mat.diffuse
    grads.material_diffuse[:] = db_diff * light.diffuse
    ds_spec = np.einsum("mc,m->c", d_color, spec_f)
    grads.light_specular[:] = ds_spec * mat.specular
    grads.material_specular[:] = ds_spec * light.specular

    pos_rv = saved.rv > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rv = np.where(pos_rv, np.log(np.where(pos_rv, saved.rv, 1.0)), 0.0)
    grads.material_shininess = float(np.sum(d_spec_f * spec_f * log_rv))
    d_rv = np.where(pos_rv, d_spec_f * mat.shininess * np.where(pos_rv, rv_pos, 1.0) ** (mat.shininess - 1.0), 0.0)

    refl = 2.0 * saved.ndotl[:, None] * saved.n_unit - ldir[None, :]
    d_refl = d_rv[:, None] * saved.v_unit
    d_v_unit = d_rv[:, None] * refl
    d_ndotl = 2.0 * np.sum(d_refl * saved.n_unit, axis=1)
    d_n_unit = 2.0 * saved.ndotl[:, None] * d_refl
    d_ldir = -d_refl.sum(axis=0)
    d_ndotl += d_diff_f * (saved.ndotl > 0)
    d_n_unit += d_ndotl[:, None] * ldir[None, :]
    d_ldir += d_ndotl @ saved.n_unit

    # v_unit = v_raw / |v_raw|, v_raw = eye - pos
    d_v_raw = (d_v_unit - saved.v_unit * np.sum(d_v_unit * saved.v_unit, axis=1, keepdims=True)) / saved.v_norm[:, None]
    d_pos = -d_v_raw

    # n_unit = n_raw / |n_raw|
    d_n_raw = (d_n_unit - saved.n_unit * np.sum(d_n_unit * saved.n_unit, axis=1, keepdims=True)) / saved.n_norm[:, None]

    # texture sampling backward
    d_uv = np.zeros((len(bary), 2), dtype=dtype)
    if saved.textured:
        _texture_backward(saved.texture, saved.uv, d_base, grads.texture, d_uv)

    # interpolation backward: attr = sum_c bary_c * attr_vertex_c
    vn = saved.vnormals[fv]                         # (M, 3, 3)
    vp = saved.vertices[fv]
    vt = saved.uv_coords[fv]
    d_bary = np.einsum("md,mcd->mc", d_n_raw, vn)
    d_bary += np.einsum("md,mcd->mc", d_pos, vp)
    d_bary += np.einsum("md,mcd->mc", d_uv, vt)
    zvals = saved.vdepth[fv]
    d_bary += d_fdepth[:, None] * zvals

    d_vnormals = np.zeros((n_verts, 3), dtype=dtype)
    _scatter_corner(d_vnormals, fv, bary[:, :, None] * d_n_raw[:, None, :])
    _scatter_corner(grads.vertices, fv, bary[:, :, None] * d_pos[:, None, :])
    d_vdepth = np.zeros(n_verts, dtype=dtype)
    dz_corner = bary * d_fdepth[:, None]
    for c in range(3):
        d_vdepth += np.bincount(fv[:, c], weights=dz_corner[:, c], minlength=n_verts)

    # ---- barycentric clamp + renormalize backward ----
    bq = np.clip(frag.bary_raw, 0.0, 1.0)
    bsum = np.maximum(bq.sum(axis=1), _SEG_EPS)
    d_bq = (d_bary - np.sum(d_bary * bary, axis=1, keepdims=True)) / bsum[:, None]
    d_bary_raw = d_bq * ((frag.bary_raw > 0.0) & (frag.bary_raw < 1.0))

    # bary_raw = w_raw / area
    area_safe = np.where(np.abs(frag.area) > _AREA_EPS, frag.area,
                         np.where(frag.area >= 0, _AREA_EPS, -_AREA_EPS))
    degenerate = np.abs(frag.area) <= _AREA_EPS
    d_wraw = d_bary_raw / area_safe[:, None]
    d_area = -np.sum(d_bary_raw * frag.bary_raw, axis=1) / area_safe
    d_wraw[degenerate] = 0.0
    d_area[degenerate] = 0.0

    # ---- coverage backward ----
    d_sig_arg = d_coverage * frag.coverage * (1.0 - frag.coverage)
    d_d2 = np.where(frag.inside, d_sig_arg, -d_sig_arg) / cfg.sigma

    # accumulate gradients on the 2D NDC corners
    d_corner = np.zeros((len(bary), 3, 2), dtype=dtype)
    a2 = saved.ndc[fv[:, 0]]
    b2 = saved.ndc[fv[:, 1]]
    c2 = saved.ndc[fv[:, 2]]
    px, py = frag.px, frag.py

    def add_cross2_grad(gout, ux, uy, vx, vy, du, dv):
        # cross2 = ux*vy - uy*vx
        du[:, 0] += gout * vy
        du[:, 1] += gout * -vx
        dv[:, 0] += gout * -uy
        dv[:, 1] += gout * ux

    # w_a = cross(b - p, c - p); w_b = cross(c - p, a - p); w_c = cross(a - p, b - p)
    tmp = [np.zeros((len(bary), 2), dtype=dtype) for _ in range(3)]
    add_cross2_grad(d_wraw[:, 0], b2[:, 0] - px, b2[:, 1] - py, c2[:, 0] - px, c2[:, 1] - py,
                    tmp[1], tmp[2])
    add_cross2_grad(d_wraw[:, 1], c2[:, 0] - px, c2[:, 1] - py, a2[:, 0] - px, a2[:, 1] - py,
                    tmp[2], tmp[0])
    add_cross2_grad(d_wraw[:, 2], a2[:, 0] - px, a2[:, 1] - py, b2[:, 0] - px, b2[:, 1] - py,
                    tmp[0], tmp[1])
    # area = cross(b - a, c - a): d/db, d/dc direct; d/da = -(both)
    da_extra = np.zeros((len(bary), 2), dtype=dtype)
    db_extra = np.zeros((len(bary), 2), dtype=dtype)
    dc_extra = np.zeros((len(bary), 2), dtype=dtype)
    add_cross2_grad(d_area, b2[:, 0] - a2[:, 0], b2[:, 1] - a2[:, 1],
                    c2[:, 0] - a2[:, 0], c2[:, 1] - a2[:, 1], db_extra, dc_extra)
    da_extra -= db_extra + dc_extra
    tmp[0] += da_extra
    tmp[1] += db_extra
    tmp[2] += dc_extra

    # edge-distance backward (only the argmin edge carries gradient)
    corners2 = (a2, b2, c2)
    for e in range(3):
        sel = frag.edge_index == e
        if not np.any(sel):
            continue
        p0 = corners2[e][sel]
        p1 = corners2[(e + 1) % 3][sel]
        pxs, pys = px[sel], py[sel]
        vx = p1[:, 0] - p0[:, 0]
        vy = p1[:, 1] - p0[:, 1]
        wx = pxs - p0[:, 0]
        wy = pys - p0[:, 1]
        den = frag.edge_den[sel]
        t_raw = frag.edge_t_raw[sel]
        t = np.clip(t_raw, 0.0, 1.0)
        dx = wx - t * vx
        dy = wy - t * vy
        g = d_d2[sel]
        d_dx = 2.0 * g * dx
        d_dy = 2.0 * g * dy
        d_wx = d_dx.copy()
        d_wy = d_dy.copy()
        d_vx = -t * d_dx
        d_vy = -t * d_dy
        d_t = -(d_dx * vx + d_dy * vy)
        open_t = (t_raw > 0.0) & (t_raw < 1.0) & (den > _SEG_EPS)
        d_t = np.where(open_t, d_t, 0.0)
        # t = (w . v) / den, den = v . v
        d_wx += d_t * vx / den
        d_wy += d_t * vy / den
        d_vx += d_t * (wx - 2.0 * t_raw * vx) / den
        d_vy += d_t * (wy - 2.0 * t_raw * vy) / den
        i0 = e
        i1 = (e + 1) % 3
        rows = np.nonzero(sel)[0]
        d_corner[rows, i0, 0] += -d_wx - d_vx
        d_corner[rows, i0, 1] += -d_wy - d_vy
        d_corner[rows, i1, 0] += d_vx
        d_corner[rows, i1, 1] += d_vy

    for c in range(3):
        d_corner[:, c, :] += tmp[c]

    d_ndc = np.zeros((n_verts, 2), dtype=dtype)
    for c in range(3):
        for axis in range(2):
            d_ndc[:, axis] += np.bincount(
                fv[:, c], weights=d_corner[:, c, axis], minlength=n_verts
            )

    # ---- projection + normals backward into world-space vertex gradient ----
    grads.vertices += project_vjp(cam, saved.vertices, d_ndc, d_vdepth)
    grads.vertices += vertex_normals_vjp(saved.vertices, saved.faces, d_vnormals)
    grads.light_direction[:] = d_ldir
    return grads


def _scatter_corner(target: np.ndarray, fv: np.ndarray, contrib: np.ndarray) -> None:
    """Accumulate (M, 3, D) per-corner contributions onto (N, D) rows."""
    n = target.shape[0]
    for c in range(3):
        for axis in range(target.shape[1]):
            target[:, axis] += np.bincount(fv[:, c], weights=contrib[:, c, axis], minlength=n)


def _texture_backward(texture, uv, d_base, d_texture, d_uv) -> None:
    ht, wt = texture.shape[:2]
    c0, c1, r0, r1, fx, fy = _bilinear_setup(texture, uv)
    t00 = texture[r0, c0]
    t10 = texture[r0, c1]
    t01 = texture[r1, c0]
    t11 = texture[r1, c1]
    w00 = (1 - fx) * (1 - fy)
    w10 = fx * (1 - fy)
    w01 = (1 - fx) * fy
    w11 = fx * fy
    flat = d_texture.reshape(-1, 3)
    for widx, rr, cc in ((w00, r0, c0), (w10, r0, c1), (w01, r1, c0), (w11, r1, c1)):
        lin = rr * wt + cc
        for ch in range(3):
            flat[:, ch] += np.bincount(lin, weights=widx * d_base[:, ch], minlength=ht * wt)
    dfx = np.sum(d_base * ((1 - fy)[:, None] * (t10 - t00) + fy[:, None] * (t11 - t01)), axis=1)
    dfy = np.sum(d_base * ((1 - fx)[:, None] * (t01 - t00) + fx[:, None] * (t11 - t10)), axis=1)
    # cf = u * wt - 0.5; rf = (1 - v) * ht - 0.5
    d_uv[:, 0] += dfx * wt
    d_uv[:, 1] += -dfy * ht
