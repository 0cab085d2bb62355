"""Stage-by-stage finite-difference verification of every adjoint.

Each stage draws randomized cases, probes a few coordinates per case with
central differences, and reports the worst relative error
|fd - analytic| / max(|fd|, |analytic|, 1e-6). Used by the `gradcheck` CLI
command and the acceptance suite; the full run stays well under five minutes
on a laptop CPU.
"""

from __future__ import annotations

import numpy as np

from .body import BodyParams, PosedMesh, TemplateModel, pose_mesh, pose_vjp
from .camera import Camera, project, project_vjp
from .geometry import build_topology, vertex_normals
from .humanoid import make_test_humanoid
from .objective import PromptSpec, ScenePoint, total_loss
from .optim import texture_from_logits, texture_logits_vjp
from .raster import Light, Material, SoftRasterConfig, render, render_forward, render_vjp
from .regularizers import (
    RegWeights,
    edge_length_reg,
    laplacian_reg,
    normal_consistency_reg,
)
from .sampling import OrbitDist, PoseDist
from .scorers import RandomProjectionScorer

FLOOR = 1e-6


def _rel(fd: float, an: float) -> float:
    return abs(fd - an) / max(abs(fd), abs(an), FLOOR)


def _probe(f, x, analytic, rng, h, n_dirs, worst):
    """Central differences along random unit tangents.

    Directional probes keep the compared derivative at the gradient's natural
    magnitude; per-coordinate probes of near-zero entries would measure only
    the roundoff noise of f itself. Probes where both sides fall below the
    explicit float64 roundoff bound eps*|f|/(2h) are uninformative (the
    function is locally flat and both sides agree) and are skipped.
    """
    flat = np.asarray(x, dtype=np.float64).reshape(-1)
    an_flat = np.asarray(analytic, dtype=np.float64).reshape(-1)
    f0 = abs(f(flat.reshape(x.shape)))
    noise = 64.0 * np.finfo(np.float64).eps * max(1.0, f0) / (2.0 * h)
    for _ in range(n_dirs):
        d = rng.standard_normal(flat.size)
        d /= np.linalg.norm(d)
        fd = (f((flat + h * d).reshape(x.shape)) - f((flat - h * d).reshape(x.shape))) / (2.0 * h)
        an = float(an_flat @ d)
        if max(abs(fd), abs(an)) < noise:
            continue
        worst = max(worst, _rel(fd, an))
    return worst


def _random_small_model(rng, n=12, j=3, k=2) -> TemplateModel:
    verts = rng.standard_normal((n, 3))
    faces = np.array([[0, i, i + 1] for i in range(1, n - 1)], dtype=np.int64)
    reg = rng.uniform(0.1, 1.0, (j, n))
    reg /= reg.sum(axis=1, keepdims=True)
    sw = rng.uniform(0.01, 1.0, (n, j))
    sw /= sw.sum(axis=1, keepdims=True)
    return TemplateModel(
        template_vertices=verts,
        faces=faces,
        uv_coords=rng.uniform(0, 1, (n, 2)),
        shape_basis=rng.standard_normal((k, n, 3)) * 0.1,
        parent=np.array([-1] + list(range(j - 1)), dtype=np.int64),
        joint_regressor=reg,
        skin_weights=sw,
        vertex_groups={},
    )


def _random_scene(rng, n_faces=6):
    nv = 3 * n_faces
    verts = rng.uniform(-0.9, 0.9, (nv, 3)) * np.array([1.0, 1.0, 0.4])
    faces = np.arange(nv, dtype=np.int64).reshape(-1, 3)
    uv = rng.uniform(0.1, 0.9, (nv, 2))
    mesh = PosedMesh(vertices=verts, faces=faces, uv_coords=uv,
                     vertex_normals=vertex_normals(verts, faces))
    cam = Camera(eye=np.array([0.0, 0.0, 3.0]), look_at=np.zeros(3),
                 up=np.array([0.0, 1.0, 0.0]), fov_y=0.8, near=0.1, far=12.0,
                 height=20, width=20)
    light = Light(direction=np.array([0.0, 0.6, 0.8]) / np.linalg.norm([0.0, 0.6, 0.8]),
                  ambient=rng.uniform(0.05, 0.2, 3), diffuse=rng.uniform(0.4, 0.8, 3),
                  specular=rng.uniform(0.1, 0.3, 3))
    material = Material(ambient=rng.uniform(0.5, 0.9, 3), diffuse=rng.uniform(0.5, 0.9, 3),
                        specular=rng.uniform(0.2, 0.6, 3), shininess=rng.uniform(4, 24))
    texture = _smooth_texture(rng, 6)
    cfg = SoftRasterConfig(sigma=2e-4, gamma=2e-4, faces_per_pixel=32,
                           background=(0.15, 0.25, 0.35))
    return mesh, cam, light, material, texture, cfg


def _smooth_texture(rng, size):
    corners = rng.uniform(0.2, 0.8, (2, 2, 3))
    g = np.linspace(0, 1, size)
    gx, gy = np.meshgrid(g, g, indexing="ij")
    return ((1 - gx)[:, :, None] * (1 - gy)[:, :, None] * corners[0, 0]
            + gx[:, :, None] * (1 - gy)[:, :, None] * corners[1, 0]
            + (1 - gx)[:, :, None] * gy[:, :, None] * corners[0, 1]
            + gx[:, :, None] * gy[:, :, None] * corners[1, 1])


def _remesh(verts, mesh):
    return PosedMesh(vertices=verts, faces=mesh.faces, uv_coords=mesh.uv_coords,
                     vertex_normals=vertex_normals(verts, mesh.faces))


def check_pose_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        model = _random_small_model(rng)
        params = BodyParams(beta=rng.standard_normal(2),
                            theta=rng.standard_normal((3, 3)) * 0.5,
                            delta=rng.standard_normal((model.num_vertices, 3)) * 0.05)
        u = rng.standard_normal((model.num_vertices, 3))
        db, dth, dd = pose_vjp(model, params, u)
        for arr, grad, name in ((params.beta, db, "beta"), (params.theta, dth, "theta"),
                                (params.delta, dd, "delta")):
            def f(x, name=name):
                fields = {"beta": params.beta, "theta": params.theta, "delta": params.delta}
                fields[name] = x
                return float(np.sum(pose_mesh(model, BodyParams(**fields)).vertices * u))

            worst = _probe(f, arr, grad, rng, 1e-5, 2, worst)
    return worst


def check_projection_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        cam = Camera(eye=rng.standard_normal(3) * 2.0,
                     look_at=rng.standard_normal(3) * 0.3,
                     up=np.array([0.0, 1.0, 0.0]),
                     fov_y=rng.uniform(0.4, 1.4), near=0.05, far=50.0,
                     height=24, width=32)
        try:
            cam.validate()
            cam.basis()
        except Exception:
            continue
        fwd = cam.look_at - cam.eye
        pts = (cam.eye + fwd * rng.uniform(1.2, 3.0)
               + rng.standard_normal(3) * 0.4).reshape(1, 3)
        du = rng.standard_normal((1, 2))
        dz = rng.standard_normal(1)
        an = project_vjp(cam, pts, du, dz)

        def f(x):
            ndc, depth, _ = project(cam, x)
            return float(np.sum(ndc * du) + np.sum(depth * dz))

        worst = _probe(f, pts, an, rng, 1e-6, 3, worst)
    return worst


def check_rasterization_stage(rng, cases):
    # flat lighting isolates coverage, barycentric, and depth-weight paths;
    # gamma is large so the depth softmax stays soft and coverage gradients
    # actually flow (at tiny gamma the compositing is a hard fg/bg selection
    # and the path is correctly, but uninformatively, zero)
    worst = 0.0
    for _ in range(cases):
        mesh, cam, _, _, _, base_cfg = _random_scene(rng, n_faces=4)
        cfg = SoftRasterConfig(sigma=1e-3, gamma=0.5, faces_per_pixel=32,
                               background=(0.15, 0.25, 0.35))
        light = Light(direction=np.array([0.0, 0.0, 1.0]), ambient=np.ones(3),
                      diffuse=np.zeros(3), specular=np.zeros(3))
        material = Material(ambient=rng.uniform(0.4, 0.9, 3), diffuse=np.zeros(3),
                            specular=np.zeros(3), shininess=8.0)
        texture = np.full((4, 4, 3), 1.0)
        u = rng.standard_normal((cam.height, cam.width, 3))
        _, saved = render_forward(mesh, cam, light, material, texture, cfg, textured=False)
        g = render_vjp(saved, u)

        def f(v):
            return float(np.sum(render(_remesh(v, mesh), cam, light, material, texture,
                                       cfg, textured=False) * u))

        worst = _probe(f, mesh.vertices, g.vertices, rng, 2e-6, 3, worst)
    return worst


def check_shading_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        mesh, cam, light, material, texture, cfg = _random_scene(rng)
        u = rng.standard_normal((cam.height, cam.width, 3))
        _, saved = render_forward(mesh, cam, light, material, texture, cfg)
        g = render_vjp(saved, u)

        def loss(light2=light, material2=material):
            return float(np.sum(render(mesh, cam, light2, material2, texture, cfg) * u))

        h = 1e-6
        for field_, grad in (("ambient", g.light_ambient), ("diffuse", g.light_diffuse),
                             ("specular", g.light_specular)):
            c = int(rng.integers(3))
            base = np.asarray(getattr(light, field_), dtype=float)
            lp = Light(**{**light.__dict__, field_: _bump(base, c, h)})
            lm = Light(**{**light.__dict__, field_: _bump(base, c, -h)})
            fd = (loss(light2=lp) - loss(light2=lm)) / (2 * h)
            worst = max(worst, _rel(fd, float(grad[c])))
        for field_, grad in (("ambient", g.material_ambient), ("diffuse", g.material_diffuse),
                             ("specular", g.material_specular)):
            c = int(rng.integers(3))
            base = np.asarray(getattr(material, field_), dtype=float)
            mp = Material(**{**material.__dict__, field_: _bump(base, c, h)})
            mm = Material(**{**material.__dict__, field_: _bump(base, c, -h)})
            fd = (loss(material2=mp) - loss(material2=mm)) / (2 * h)
            worst = max(worst, _rel(fd, float(grad[c])))
        mp = Material(**{**material.__dict__, "shininess": material.shininess + h})
        mm = Material(**{**material.__dict__, "shininess": material.shininess - h})
        fd = (loss(material2=mp) - loss(material2=mm)) / (2 * h)
        worst = max(worst, _rel(fd, g.material_shininess))
    return worst


def _bump(arr, idx, h):
    out = arr.copy()
    out[idx] += h
    return out


def check_texture_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        mesh, cam, light, material, texture, cfg = _random_scene(rng, n_faces=3)
        u = rng.standard_normal((cam.height, cam.width, 3))
        _, saved = render_forward(mesh, cam, light, material, texture, cfg)
        g = render_vjp(saved, u)

        def f(t):
            return float(np.sum(render(mesh, cam, light, material, t, cfg) * u))

        worst = _probe(f, texture, g.texture, rng, 1e-4, 3, worst)
    return worst


def _reg_case(rng):
    nv = 10
    verts = rng.standard_normal((nv, 3))
    faces = np.array([[0, i, i + 1] for i in range(1, nv - 1)], dtype=np.int64)
    return verts, faces, build_topology(faces, nv)


def check_laplacian_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        verts, faces, topo = _reg_case(rng)
        _, grad = laplacian_reg(verts, topo)
        worst = _probe(lambda v: laplacian_reg(v, topo)[0], verts, grad, rng, 1e-6, 3, worst)
    return worst


def check_edge_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        verts, faces, topo = _reg_case(rng)
        rest = verts + rng.standard_normal(verts.shape) * 0.2
        _, grad = edge_length_reg(verts, rest, topo)
        worst = _probe(lambda v: edge_length_reg(v, rest, topo)[0], verts, grad, rng,
                       1e-6, 3, worst)
    return worst


def check_normal_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        verts, faces, topo = _reg_case(rng)
        _, grad = normal_consistency_reg(verts, faces, topo)
        worst = _probe(lambda v: normal_consistency_reg(v, faces, topo)[0], verts, grad,
                       rng, 1e-6, 3, worst)
    return worst


def check_logistic_stage(rng, cases):
    worst = 0.0
    for _ in range(cases):
        logits = rng.standard_normal((3, 3, 3)) * 2.0
        upstream = rng.standard_normal((3, 3, 3))
        an = texture_logits_vjp(logits, upstream)

        def f(x):
            return float(np.sum(texture_from_logits(x) * upstream))

        worst = _probe(f, logits, an, rng, 1e-6, 4, worst)
    return worst


def check_end_to_end_stage(rng, cases, segments=1, resolution=(16, 16)):
    model = make_test_humanoid(segments).astype(np.float64)
    dists = {"cam": OrbitDist(azimuth=(0.5, 0.5), elevation=(0.35, 0.35),
                              radius=(3.0, 3.0), fov=(1.0, 1.0), look_at="origin")}
    pose = PoseDist(mode="rest")
    scorer = RandomProjectionScorer(embed_dim=16, seed=11)
    reg = RegWeights(laplacian=1.0, edge=1.0, normal=0.01, total=1.0)
    cfg = SoftRasterConfig(sigma=2e-4, gamma=2e-4, faces_per_pixel=8,
                           background=(0.2, 0.3, 0.4))
    prompts = [PromptSpec(text="check", cameras="cam")]
    worst = 0.0
    for case in range(cases):
        point = ScenePoint(
            beta=rng.uniform(-0.3, 0.3, model.num_shapes),
            delta=rng.standard_normal((model.num_vertices, 3)) * 0.002,
            texture=_smooth_texture(rng, 6),
            light=Light(direction=np.array([0.0, 0.6, 0.8]) / np.linalg.norm([0.0, 0.6, 0.8]),
                        ambient=np.full(3, 0.2), diffuse=np.full(3, 0.7),
                        specular=np.full(3, 0.2)),
            material=Material(ambient=np.full(3, 0.8), diffuse=np.full(3, 0.75),
                              specular=np.full(3, 0.4), shininess=8.0),
        )
        _, grads = total_loss(model, point, prompts, dists, pose, scorer, reg,
                              batch=1, step=case, seed=5, resolution=resolution,
                              raster_cfg=cfg)

        def loss(**over):
            fields = dict(beta=point.beta, delta=point.delta, texture=point.texture,
                          light=point.light, material=point.material)
            fields.update(over)
            b, _ = total_loss(model, ScenePoint(**fields), prompts, dists, pose, scorer,
                              reg, batch=1, step=case, seed=5, resolution=resolution,
                              raster_cfg=cfg)
            return b.total

        worst = _probe(lambda a: loss(beta=a), point.beta, grads.beta, rng, 1e-6, 1, worst)
        worst = _probe(lambda a: loss(delta=a), point.delta, grads.delta, rng, 1e-6, 1, worst)
        worst = _probe(lambda a: loss(texture=a), point.texture, grads.texture, rng,
                       1e-5, 1, worst)
    return worst


STAGES = [
    ("blend_fk_skin", check_pose_stage),
    ("projection", check_projection_stage),
    ("rasterization", check_rasterization_stage),
    ("shading", check_shading_stage),
    ("texture_sampling", check_texture_stage),
    ("laplacian_reg", check_laplacian_stage),
    ("edge_length_reg", check_edge_stage),
    ("normal_consistency_reg", check_normal_stage),
    ("logistic_texture_map", check_logistic_stage),
    ("end_to_end", check_end_to_end_stage),
]

# stages whose maps are linear in the probed argument get a tighter bound
LINEAR_STAGES = {"texture_sampling", "logistic_texture_map"}


def run_gradient_checks(scene: str = "tiny", cases: int = 100, seed: int = 0):
    """Run every stage; returns [(stage_name, worst_rel_err)] in order."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn in STAGES:
        if name == "end_to_end" and scene == "humanoid":
            err = fn(rng, max(8, cases // 10), segments=2, resolution=(24, 24))
        else:
            err = fn(rng, cases)
        results.append((name, float(err)))
    return results
