import numpy as np
import pytest

from meshforge import body
from meshforge.body import BodyParams, ModelValidationError, TemplateModel
from meshforge.gradcheck import rel_error
from meshforge.humanoid import make_test_humanoid


def random_small_model(rng, n=20, j=3, k=2) -> TemplateModel:
    """Random chain-skeleton model with exactly normalized float64 weights."""
    verts = rng.standard_normal((n, 3))
    # fan triangulation: valid indices, no degenerate faces
    faces = np.array([[0, i, i + 1] for i in range(1, n - 1)], dtype=np.int64)
    uv = rng.uniform(0, 1, (n, 2))
    basis = rng.standard_normal((k, n, 3)) * 0.1
    parent = np.array([-1] + list(range(j - 1)), dtype=np.int64)
    reg = rng.uniform(0.1, 1.0, (j, n))
    reg /= reg.sum(axis=1, keepdims=True)
    sw = rng.uniform(0.01, 1.0, (n, j))
    sw /= sw.sum(axis=1, keepdims=True)
    m = TemplateModel(
        template_vertices=verts,
        faces=faces,
        uv_coords=uv,
        shape_basis=basis,
        parent=parent,
        joint_regressor=reg,
        skin_weights=sw,
        vertex_groups={"all": np.arange(n)},
    )
    m.validate()
    return m


def random_params(rng, model, theta_scale=0.5) -> BodyParams:
    return BodyParams(
        beta=rng.standard_normal(model.num_shapes),
        theta=rng.standard_normal((model.num_joints, 3)) * theta_scale,
        delta=rng.standard_normal((model.num_vertices, 3)) * 0.05,
    )


class TestBlendShape:
    def test_identity(self):
        rng = np.random.default_rng(0)
        m = random_small_model(rng)
        p = BodyParams.zeros(m)
        np.testing.assert_array_equal(body.blend_shape(m, p), m.template_vertices)

    def test_uniform_shift(self):
        rng = np.random.default_rng(1)
        m = random_small_model(rng, k=1)
        basis = np.zeros_like(m.shape_basis)
        basis[0, :, 0] = 0.1
        m = TemplateModel(**{**m.__dict__, "shape_basis": basis})
        p = BodyParams(
            beta=np.array([2.0]),
            theta=np.zeros((m.num_joints, 3)),
            delta=np.zeros((m.num_vertices, 3)),
        )
        out = body.blend_shape(m, p)
        np.testing.assert_allclose(out[:, 0] - m.template_vertices[:, 0], 0.2, atol=1e-12)
        np.testing.assert_array_equal(out[:, 1:], m.template_vertices[:, 1:])

    def test_delta_cancels_beta(self):
        rng = np.random.default_rng(2)
        m = random_small_model(rng)
        beta = rng.standard_normal(m.num_shapes)
        offsets = np.tensordot(beta, m.shape_basis, axes=(0, 0))
        p = BodyParams(beta=beta, theta=np.zeros((m.num_joints, 3)), delta=-offsets)
        np.testing.assert_allclose(body.blend_shape(m, p), m.template_vertices, atol=1e-12)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        m = random_small_model(rng)
        b1 = rng.standard_normal(m.num_shapes)
        b2 = rng.standard_normal(m.num_shapes)
        a, c = 0.7, -1.3
        zeros = BodyParams.zeros(m)

        def offs(beta):
            p = BodyParams(beta=beta, theta=zeros.theta, delta=zeros.delta)
            return body.blend_shape(m, p) - m.template_vertices

        np.testing.assert_allclose(
            offs(a * b1 + c * b2), a * offs(b1) + c * offs(b2), atol=1e-10
        )

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(4)
        m = random_small_model(rng)
        bad = BodyParams(
            beta=np.zeros(m.num_shapes + 1),
            theta=np.zeros((m.num_joints, 3)),
            delta=np.zeros((m.num_vertices, 3)),
        )
        with pytest.raises(ModelValidationError, match="beta"):
            body.blend_shape(m, bad)


class TestForwardKinematics:
    def test_rest_pose_translations(self):
        rng = np.random.default_rng(5)
        m = random_small_model(rng, j=4)
        rest = m.template_vertices
        rot, t = body.forward_kinematics(m, rest, np.zeros((4, 3)))
        joints = body.rest_joints(m, rest)
        np.testing.assert_allclose(rot, np.broadcast_to(np.eye(3), rot.shape), atol=1e-15)
        np.testing.assert_allclose(t, joints, atol=1e-15)

    def test_two_link_quarter_turn(self):
        # root rotated pi/2 about z; child rest offset (1,0,0) -> lands at parent+(0,1,0)
        n = 4
        verts = np.array([[0, 0, 0], [0, 0, 1], [1, 0, 0], [1, 0, 1.0]])
        faces = np.array([[0, 1, 2], [1, 3, 2]])
        reg = np.array([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]])
        m = TemplateModel(
            template_vertices=verts,
            faces=faces,
            uv_coords=np.zeros((n, 2)),
            shape_basis=np.zeros((0, n, 3)),
            parent=np.array([-1, 0]),
            joint_regressor=reg,
            skin_weights=np.eye(2)[[0, 0, 1, 1]].astype(float),
            vertex_groups={},
        )
        m.validate()
        theta = np.zeros((2, 3))
        theta[0, 2] = np.pi / 2
        rot, t = body.forward_kinematics(m, verts, theta)
        parent_pos = t[0]
        np.testing.assert_allclose(t[1], parent_pos + [0, 1, 0], atol=1e-12)

    def test_matches_matrix_chain_oracle(self):
        # independent oracle: accumulate 4x4 homogeneous products per joint
        rng = np.random.default_rng(6)
        m = random_small_model(rng, j=3)
        rest = m.template_vertices
        theta = rng.standard_normal((3, 3))
        rot, t = body.forward_kinematics(m, rest, theta)

        from meshforge.rotation import axis_angle_to_matrix

        joints = body.rest_joints(m, rest)
        world = []
        for j in range(3):
            R = axis_angle_to_matrix(theta[j])
            off = joints[j] - (joints[m.parent[j]] if j else 0.0)
            local = np.eye(4)
            local[:3, :3] = R
            local[:3, 3] = off if j else joints[0]
            world.append(world[m.parent[j]] @ local if j else local)
        for j in range(3):
            np.testing.assert_allclose(rot[j], world[j][:3, :3], atol=1e-10)
            np.testing.assert_allclose(t[j], world[j][:3, 3], atol=1e-10)


class TestSkin:
    def test_identity_fixed_point(self):
        rng = np.random.default_rng(7)
        m = random_small_model(rng)
        p = random_params(rng, m, theta_scale=0.0)
        rest = body.blend_shape(m, p)
        mesh = body.skin(m, rest, body.forward_kinematics(m, rest, p.theta))
        np.testing.assert_allclose(mesh.vertices, rest, atol=1e-12)

    def test_identity_fixed_point_float32_model(self):
        m = make_test_humanoid(1).astype(np.float64)
        rng = np.random.default_rng(8)
        p = BodyParams(
            beta=rng.standard_normal(2),
            theta=np.zeros((m.num_joints, 3)),
            delta=rng.standard_normal((m.num_vertices, 3)) * 0.01,
        )
        rest = body.blend_shape(m, p)
        mesh = body.skin(m, rest, body.forward_kinematics(m, rest, p.theta))
        np.testing.assert_allclose(mesh.vertices, rest, atol=1e-12)

    def test_single_weight_vertex(self):
        rng = np.random.default_rng(9)
        m = random_small_model(rng, j=3)
        sw = np.zeros_like(m.skin_weights)
        sw[:, 1] = 1.0
        m = TemplateModel(**{**m.__dict__, "skin_weights": sw})
        theta = rng.standard_normal((3, 3)) * 0.4
        rest = m.template_vertices
        rot, t = body.forward_kinematics(m, rest, theta)
        mesh = body.skin(m, rest, (rot, t))
        joints = body.rest_joints(m, rest)
        expect = (rest - joints[1]) @ rot[1].T + t[1]
        np.testing.assert_allclose(mesh.vertices, expect, atol=1e-12)

    def test_translation_blend(self):
        rng = np.random.default_rng(10)
        m = random_small_model(rng, j=2)
        sw = np.full_like(m.skin_weights, 0.5)
        m = TemplateModel(**{**m.__dict__, "skin_weights": sw})
        rest = m.template_vertices
        rot = np.broadcast_to(np.eye(3), (2, 3, 3)).copy()
        joints = body.rest_joints(m, rest)
        t1, t2 = np.array([0.3, 0.0, -0.1]), np.array([-0.2, 0.5, 0.0])
        t = joints + np.stack([t1, t2])
        mesh = body.skin(m, rest, (rot, t))
        np.testing.assert_allclose(mesh.vertices, rest + 0.5 * (t1 + t2), atol=1e-12)

    def test_rigid_equivariance(self):
        from meshforge.rotation import axis_angle_to_matrix

        rng = np.random.default_rng(11)
        m = random_small_model(rng)
        p = random_params(rng, m)
        rest = body.blend_shape(m, p)
        rot, t = body.forward_kinematics(m, rest, p.theta)
        base = body.skin(m, rest, (rot, t)).vertices
        T_r = axis_angle_to_matrix(rng.standard_normal(3))
        T_t = rng.standard_normal(3)
        rot2 = np.einsum("ab,jbc->jac", T_r, rot)
        t2 = t @ T_r.T + T_t
        moved = body.skin(m, rest, (rot2, t2)).vertices
        np.testing.assert_allclose(moved, base @ T_r.T + T_t, atol=1e-10)


class TestPoseVjp:
    def test_zero_upstream(self):
        rng = np.random.default_rng(12)
        m = random_small_model(rng)
        p = random_params(rng, m)
        db, dt, dd = body.pose_vjp(m, p, np.zeros((m.num_vertices, 3)))
        assert not db.any() and not dt.any() and not dd.any()

    def test_identity_pose_delta_gradient_is_upstream(self):
        rng = np.random.default_rng(13)
        m = random_small_model(rng)
        p = BodyParams.zeros(m)
        u = rng.standard_normal((m.num_vertices, 3))
        _, _, dd = body.pose_vjp(m, p, u)
        np.testing.assert_allclose(dd, u, atol=1e-12)

    def test_finite_differences_many_draws(self):
        # spec invariant: >= 100 random (model, params, upstream) draws, rel err <= 1e-4
        rng = np.random.default_rng(14)
        worst = 0.0
        for trial in range(100):
            m = random_small_model(rng, n=12, j=3, k=2)
            p = random_params(rng, m)
            u = rng.standard_normal((m.num_vertices, 3))
            db, dth, dd = body.pose_vjp(m, p, u)

            def loss(beta, theta, delta):
                mesh = body.pose_mesh(m, BodyParams(beta=beta, theta=theta, delta=delta))
                return float(np.sum(mesh.vertices * u))

            h = 1e-5
            # probe a few coordinates of each group per trial
            for arr, grad, name in ((p.beta, db, "beta"), (p.theta, dth, "theta"), (p.delta, dd, "delta")):
                flat = arr.reshape(-1)
                picks = rng.choice(flat.size, size=min(3, flat.size), replace=False)
                for c in picks:
                    xp = flat.copy()
                    xp[c] += h
                    xm = flat.copy()
                    xm[c] -= h
                    args_p = {name: xp.reshape(arr.shape)}
                    args_m = {name: xm.reshape(arr.shape)}
                    base = {"beta": p.beta, "theta": p.theta, "delta": p.delta}
                    fd = (loss(**{**base, **args_p}) - loss(**{**base, **args_m})) / (2 * h)
                    worst = max(worst, rel_error(fd, float(grad.reshape(-1)[c]), 1e-6))
        assert worst <= 1e-4, f"worst rel err {worst:.3e}"


class TestPosedMeshNormals:
    def test_unit_length(self):
        m = make_test_humanoid(1).astype(np.float64)
        p = BodyParams.zeros(m)
        mesh = body.pose_mesh(m, p)
        norms = np.linalg.norm(mesh.vertex_normals, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)
