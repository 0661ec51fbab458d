import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from uvavatar.core import (
    N_CHANNELS,
    Camera,
    CorrectiveGrid,
    Gaussian,
    Pose,
    Skeleton,
    SplatSet,
    ValidationError,
    apply_corrective,
    apply_correctives,
    axis_angle_to_quat,
    matrix_to_quat,
    pose_dim,
    quat_multiply,
    quat_to_matrix,
    validate_splatset,
)

finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)
unit_quats = arrays(np.float64, 4, elements=finite).filter(lambda q: np.linalg.norm(q) > 0.1).map(
    lambda q: q / np.linalg.norm(q))


def _gaussian(rot=(1, 0, 0, 0), scale=(1, 1, 1), mu=(0, 0, 0), delta=0.5):
    return Gaussian.create(mu, np.asarray(rot, dtype=float), scale, delta)


def _wxyz_to_scipy(q):
    return Rotation.from_quat(np.roll(q, -1))


class TestQuaternions:
    @given(unit_quats)
    def test_matrix_matches_scipy(self, q):
        np.testing.assert_allclose(quat_to_matrix(q), _wxyz_to_scipy(q).as_matrix(), atol=1e-12)

    @given(unit_quats, unit_quats)
    def test_product_matches_scipy_composition(self, a, b):
        expect = (_wxyz_to_scipy(a) * _wxyz_to_scipy(b)).as_matrix()
        np.testing.assert_allclose(quat_to_matrix(quat_multiply(a, b)), expect, atol=1e-12)

    @given(unit_quats)
    def test_matrix_roundtrip(self, q):
        back = matrix_to_quat(quat_to_matrix(q))
        assert back[0] >= 0
        # q and -q are the same rotation
        assert min(np.abs(back - q).max(), np.abs(back + q).max()) < 1e-9

    @given(arrays(np.float64, 3, elements=finite))
    def test_axis_angle_matches_scipy(self, v):
        np.testing.assert_allclose(quat_to_matrix(axis_angle_to_quat(v)), Rotation.from_rotvec(v).as_matrix(),
                                   atol=1e-12)


class TestApplyCorrective:
    def test_zero_is_identity(self):
        g = _gaussian(rot=[0.5, 0.5, 0.5, 0.5], scale=[0.3, 0.2, 0.1], mu=[1, 2, 3])
        out = apply_corrective(g, np.zeros(N_CHANNELS))
        for f in ("mu", "rot", "log_scale", "sh"):
            assert np.array_equal(getattr(out, f), getattr(g, f))
        assert out.delta == g.delta

    def test_translation(self):
        corr = np.zeros(N_CHANNELS)
        corr[31:34] = [1, 2, 3]
        assert np.array_equal(apply_corrective(_gaussian(), corr).mu, [1.0, 2.0, 3.0])

    def test_log_scale_doubles_sigma(self):
        corr = np.zeros(N_CHANNELS)
        corr[34] = np.log(2.0)
        np.testing.assert_allclose(apply_corrective(_gaussian(), corr).scale, [2.0, 1.0, 1.0], rtol=1e-15)

    def test_rotation_delta_is_additive_then_normalized(self):
        corr = np.zeros(N_CHANNELS)
        corr[27:31] = [0.0, 1.0, 0.0, 0.0]
        np.testing.assert_allclose(apply_corrective(_gaussian(), corr).rot, [2**-0.5, 2**-0.5, 0, 0])

    def test_sh_added(self):
        corr = np.zeros(N_CHANNELS)
        corr[:27] = np.arange(27)
        assert np.array_equal(apply_corrective(_gaussian(), corr).sh, np.arange(27.0))

    def test_rejects_non_finite(self):
        corr = np.zeros(N_CHANNELS)
        corr[5] = np.nan
        with pytest.raises(ValidationError):
            apply_corrective(_gaussian(), corr)

    def test_rejects_cancelling_rotation(self):
        corr = np.zeros(N_CHANNELS)
        corr[27] = -1.0
        with pytest.raises(ValidationError):
            apply_corrective(_gaussian(), corr)

    @given(unit_quats, arrays(np.float64, N_CHANNELS, elements=finite))
    def test_keeps_invariants(self, q, corr):
        g = _gaussian(rot=q, scale=[0.1, 0.2, 0.3])
        try:
            out = apply_corrective(g, corr)
        except ValidationError:
            assert np.linalg.norm(q + corr[27:31]) < 1e-12
            return
        assert abs(np.linalg.norm(out.rot) - 1.0) <= 1e-6
        assert np.all(out.scale > 0)
        assert out.delta == g.delta

    def test_batched_matches_scalar(self):
        rng = np.random.default_rng(3)
        mask = np.ones((2, 3), dtype=bool)
        gs = [_gaussian(rot=axis_angle_to_quat(rng.normal(size=3)), scale=rng.uniform(0.1, 1, 3),
                        mu=rng.normal(size=3)) for _ in range(6)]
        s = SplatSet.from_gaussians(mask, gs)
        corr = rng.normal(0, 0.1, (6, N_CHANNELS))
        corr[2, 27:31] = 0.0
        out = apply_correctives(s, corr)
        for i, g in enumerate(gs):
            ref = apply_corrective(g, corr[i])
            np.testing.assert_allclose(out.rot[i], ref.rot, rtol=0, atol=1e-15)
            np.testing.assert_array_equal(out.mu[i], ref.mu)
        assert np.array_equal(out.rot[2], s.rot[2])


class TestSplatSet:
    def test_valid_set_has_empty_report(self, small_avatar):
        assert validate_splatset(small_avatar.splats) == []

    def test_zero_quaternion_named(self, small_avatar):
        s = small_avatar.splats
        rot = s.rot.copy()
        rot[7] = 0.0
        report = validate_splatset(s.replace(rot=rot))
        assert any(r.startswith("gaussian 7:") for r in report)

    def test_popcount_mismatch(self, small_avatar):
        s = small_avatar.splats
        mask = s.mask.copy()
        mask[np.unravel_index(np.flatnonzero(~mask.ravel())[0], mask.shape)] = True
        report = validate_splatset(s.replace(mask=mask))
        assert any("popcount" in r for r in report)

    def test_uv_index_order_checked(self):
        mask = np.ones((1, 2), dtype=bool)
        s = SplatSet.from_gaussians(mask, [_gaussian(), _gaussian()])
        bad = s.replace(uv_index=s.uv_index[::-1].copy())
        assert any("row-major" in r for r in validate_splatset(bad))

    def test_opacity_out_of_range(self):
        s = SplatSet.from_gaussians(np.ones((1, 1), dtype=bool), [_gaussian(delta=1.5)])
        assert validate_splatset(s) == ["gaussian 0: opacity 1.5 outside [0, 1]"]


class TestPoseAndSkeleton:
    def test_pose_dim(self):
        assert pose_dim(24) == 24 * 4 + 3 + 32
        # 70 joints reproduce a 280d LBS vector plus root and aux
        assert pose_dim(70) - 3 - 32 == 280

    def test_vector_roundtrip(self):
        rng = np.random.default_rng(0)
        p = Pose(axis_angle_to_quat(rng.normal(size=(5, 3))), rng.normal(size=3), rng.normal(size=32))
        q = Pose.from_vector(p.vector(), 5)
        assert np.array_equal(q.vector(), p.vector())

    def test_from_vector_wrong_size(self):
        with pytest.raises(ValidationError):
            Pose.from_vector(np.zeros(10), 5)

    def test_pose_validate(self):
        p = Pose.identity(3)
        assert p.validate() == []
        joints = p.joints.copy()
        joints[1] *= 2
        assert Pose(joints).validate() == ["joint 1: quaternion norm 2"]

    def test_cycle_rejected(self):
        with pytest.raises(ValidationError):
            Skeleton(np.array([-1, 2, 1]), np.zeros((3, 3)), np.zeros((1, 1), int), np.ones((1, 1)))

    def test_two_roots_rejected(self):
        with pytest.raises(ValidationError):
            Skeleton(np.array([-1, -1]), np.zeros((2, 3)), np.zeros((1, 1), int), np.ones((1, 1)))

    def test_weight_sum_reported(self):
        sk = Skeleton(np.array([-1, 0]), np.zeros((2, 3)), np.array([[0, 1]]), np.array([[0.5, 0.6]]))
        assert sk.validate() == ["gaussian 0: skin weights sum to 1.1"]

    def test_order_parents_first(self):
        sk = Skeleton(np.array([2, 0, -1, 1]), np.zeros((4, 3)), np.zeros((1, 1), int), np.ones((1, 1)))
        order = sk.order()
        for j in range(4):
            if sk.parent[j] != -1:
                assert order.index(int(sk.parent[j])) < order.index(j)


class TestCameraAndGrid:
    def test_rejects_bad_rotation(self):
        with pytest.raises(ValidationError):
            Camera(1, 1, 0, 0, np.diag([1, 1, 2.0]), np.zeros(3), 4, 4)

    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValidationError):
            Camera(0, 1, 0, 0, np.eye(3), np.zeros(3), 4, 4)

    def test_from_spec_looks_down_minus_z(self):
        cam = Camera.from_spec(10, 10, 5, 5, 0, 0, 0, 0, 3, 10, 10)
        # world origin is 3 units in front, world +y maps to image up (camera -y)
        np.testing.assert_allclose(cam.to_camera([0, 0, 0]), [0, 0, 3])
        np.testing.assert_allclose(cam.to_camera([0, 1, 0]) - cam.to_camera([0, 0, 0]), [0, -1, 0])
        np.testing.assert_allclose(cam.center, [0, 0, 3])

    def test_corrective_grid_shape(self):
        assert CorrectiveGrid(np.zeros((4, 4, 37))).channels == 37
        with pytest.raises(ValidationError):
            CorrectiveGrid(np.zeros((4, 4, 36)))
