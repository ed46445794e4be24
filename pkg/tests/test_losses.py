import numpy as np
import pytest

from spglift import diffcore as dc
from spglift.camera import CameraIntrinsics, project_sequence, sample_camera
from spglift.errors import ConfigError, ContractError, DomainError
from spglift.losses import (LossWeights, kinematic_constraint, mpjpe,
                            reprojection_mpjpe, total_loss, weighted_mpjpe_depth)
from spglift.skeleton import Skeleton, default_skeleton

from oracles import (finite_difference_grad, grad_scale_error,
                     kinematic_reference, mpjpe_reference)


@pytest.fixture(scope="module")
def skel():
    return default_skeleton()


def interior_sequence(rng, frames=3, m=17):
    z = rng.uniform(2.0, 6.0, size=(frames, m, 1))
    xy = rng.uniform(-0.8, 0.8, size=(frames, m, 2)) * z
    return np.concatenate([xy, z], axis=-1)


class TestMpjpe:
    def test_identical_is_zero(self):
        x = np.random.default_rng(0).normal(size=(2, 17, 3))
        assert mpjpe(x, x).item() == 0.0

    def test_uniform_offset_345(self):
        rng = np.random.default_rng(1)
        gt = rng.normal(size=(4, 17, 3))
        pred = gt + np.array([0.003, 0.004, 0.0])
        assert mpjpe(pred, gt).item() == pytest.approx(0.005, rel=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(3, 17, 3))
        b = rng.normal(size=(3, 17, 3))
        assert mpjpe(a, b).item() == pytest.approx(mpjpe_reference(a, b), rel=1e-12)

    def test_translation_covariant(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(2, 17, 2))
        b = rng.normal(size=(2, 17, 2))
        t = np.array([0.7, -1.3])
        assert mpjpe(a + t, b + t).item() == pytest.approx(mpjpe(a, b).item(), rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            mpjpe(np.zeros((2, 17, 3)), np.zeros((2, 16, 3)))


class TestWeightedDepth:
    def test_identical_is_zero(self):
        z = np.full((2, 17), 3.0)
        assert weighted_mpjpe_depth(z, z).item() == 0.0

    def test_hand_value(self):
        assert weighted_mpjpe_depth(np.array([[2.2]]),
                                    np.array([[2.0]])).item() == pytest.approx(0.1, rel=1e-12)

    def test_scale_cancellation(self):
        rng = np.random.default_rng(4)
        gt = rng.uniform(2.0, 6.0, size=(3, 17))
        pred = gt + rng.normal(size=(3, 17)) * 0.2
        a = weighted_mpjpe_depth(pred, gt).item()
        b = weighted_mpjpe_depth(2 * pred, 2 * gt).item()
        assert a == pytest.approx(b, rel=1e-12)

    def test_nonpositive_gt_rejected(self):
        with pytest.raises(DomainError):
            weighted_mpjpe_depth(np.ones((1, 2)), np.array([[1.0, 0.0]]))


class TestKinematicConstraint:
    def test_identical_is_zero(self, skel):
        pose = np.random.default_rng(5).normal(size=(17, 3))
        assert kinematic_constraint(pose, pose, skel).item() == 0.0

    def test_rigid_rotation_is_zero(self, skel):
        rng = np.random.default_rng(6)
        pose = rng.normal(size=(17, 3))
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.diag(r))
        rotated = pose @ q.T + rng.normal(size=3)
        assert kinematic_constraint(pose, rotated, skel).item() < 1e-12

    def test_two_joint_chain_hand_value(self):
        two = Skeleton(("root", "child"), [-1, 0], [0, 1], [1.0])
        prev = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        curr = np.array([[0.0, 0.0, 0.0], [1.1, 0.0, 0.0]])
        # (0.1 + 0.1) / (2 * 2)
        assert kinematic_constraint(prev, curr, two).item() == pytest.approx(0.05, rel=1e-12)

    def test_matches_bruteforce_neighbors(self, skel):
        rng = np.random.default_rng(7)
        prev = rng.normal(size=(17, 3))
        curr = rng.normal(size=(17, 3))
        expected = kinematic_reference(prev, curr, skel.parent)
        assert kinematic_constraint(prev, curr, skel).item() == pytest.approx(expected, rel=1e-10)

    def test_invariant_under_independent_rigid_motions(self, skel):
        rng = np.random.default_rng(8)
        prev = rng.normal(size=(17, 3))
        curr = rng.normal(size=(17, 3))
        base = kinematic_constraint(prev, curr, skel).item()
        q, r = np.linalg.qr(rng.normal(size=(3, 3)))
        q *= np.sign(np.diag(r))
        moved = kinematic_constraint(prev @ q.T + 5.0, curr - 2.0, skel).item()
        assert moved == pytest.approx(base, rel=1e-9)


class TestReprojection:
    def test_exact_lift_is_zero(self, skel):
        rng = np.random.default_rng(9)
        cam = sample_camera(11, "random")
        pred3d = interior_sequence(rng)
        input2d = project_sequence(pred3d, cam)
        assert reprojection_mpjpe(pred3d, cam, input2d).item() == 0.0

    def test_depth_perturbation_changes_loss(self, skel):
        rng = np.random.default_rng(10)
        cam = sample_camera(12, "random")
        pred3d = interior_sequence(rng, frames=1)
        input2d = project_sequence(pred3d, cam)
        bumped = pred3d.copy()
        bumped[0, 5, 2] += 1e-3
        assert reprojection_mpjpe(bumped, cam, input2d).item() > 0.0

    def test_uniform_5px_displacement(self):
        cam = CameraIntrinsics((1000.0, 1000.0), (500.0, 500.0),
                               (0.0, 0.0, 0.0), (0.0, 0.0), (1000, 1000))
        rng = np.random.default_rng(11)
        pred3d = interior_sequence(rng, frames=1, m=4)
        base2d = project_sequence(pred3d, cam)
        # inverse pinhole: shift each joint so pixels move by (3, 4)
        target2d = base2d + np.array([3.0, 4.0])
        shifted = pred3d.copy()
        shifted[..., :2] = (target2d - 500.0) / 1000.0 * pred3d[..., 2:]
        assert reprojection_mpjpe(shifted, cam, base2d).item() == pytest.approx(5.0, rel=1e-9)


class TestLossWeights:
    def test_negative_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(pose3d=-1.0)

    def test_all_zero_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(0.0, 0.0, 0.0, 0.0)

    def test_json_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights.from_json({"pose3d": 1.0, "bones": 2.0})

    def test_json_round_trip(self):
        w = LossWeights(1.0, 0.5, 0.02, 0.001)
        assert LossWeights.from_json(w.to_json()) == w


class TestTotalLoss:
    def make_consistent_batch(self, seed=12, frames=4):
        """Rigid-motion sequence: constant bone lengths, valid depths."""
        rng = np.random.default_rng(seed)
        cam = sample_camera(seed, "random")
        body = rng.uniform(-0.6, 0.6, size=(17, 3))
        body -= body.mean(axis=0)
        gt3d = np.zeros((frames, 17, 3))
        for t in range(frames):
            q, r = np.linalg.qr(rng.normal(size=(3, 3)))
            q *= np.sign(np.diag(r))
            center = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                               rng.uniform(3.5, 4.5)])
            gt3d[t] = body @ q.T + center
        input2d = project_sequence(gt3d, cam)
        return cam, gt3d, input2d

    def test_perfect_prediction_all_zero(self, skel):
        cam, gt3d, input2d = self.make_consistent_batch()
        bd = total_loss(gt3d, gt3d, cam, input2d, skel, LossWeights())
        assert bd.pose3d_mpjpe == 0.0
        assert bd.depth_wmpjpe == 0.0
        # bone lengths across rigidly moved frames agree to float precision
        assert bd.kinematic < 1e-12
        assert bd.reproj_mpjpe == 0.0
        assert bd.total < 1e-12

    def test_single_weight_projects(self, skel):
        cam, gt3d, input2d = self.make_consistent_batch(13)
        pred = gt3d + 0.01
        w = LossWeights(1.0, 0.0, 0.0, 0.0)
        bd = total_loss(pred, gt3d, cam, input2d, skel, w)
        assert bd.total == pytest.approx(bd.pose3d_mpjpe, rel=1e-12)
        assert bd.total == pytest.approx(mpjpe(pred[..., :2], gt3d[..., :2]).item(), rel=1e-12)

    def test_total_is_weighted_sum(self, skel):
        cam, gt3d, input2d = self.make_consistent_batch(14)
        rng = np.random.default_rng(15)
        pred = gt3d + rng.normal(size=gt3d.shape) * 0.02
        w = LossWeights(1.0, 0.7, 0.05, 0.002)
        bd = total_loss(pred, gt3d, cam, input2d, skel, w)
        expected = (w.pose3d * bd.pose3d_mpjpe + w.depth * bd.depth_wmpjpe
                    + w.kinematic * bd.kinematic + w.reproj * bd.reproj_mpjpe)
        assert bd.total == pytest.approx(expected, rel=1e-12)
        assert all(v >= 0 for v in (bd.pose3d_mpjpe, bd.depth_wmpjpe,
                                    bd.kinematic, bd.reproj_mpjpe))

    def test_uses_t_minus_1_kinematic_pairs(self, skel):
        # constant-bone sequence except one frame -> exactly 2 affected pairs
        cam, gt3d, input2d = self.make_consistent_batch(16, frames=5)
        pred = np.repeat(gt3d[:1], 5, axis=0)
        pred[2] *= 1.05
        w = LossWeights(0.0, 0.0, 1.0, 0.0)
        bd = total_loss(pred, gt3d, cam, input2d, skel, w)
        pair = kinematic_constraint(pred[1], pred[2], skel).item()
        # mean over 4 pairs, of which 2 are nonzero and equal
        assert bd.kinematic == pytest.approx(2 * pair / 4, rel=1e-9)

    def test_gradients_match_finite_differences(self, skel):
        cam, gt3d, input2d = self.make_consistent_batch(17, frames=3)
        rng = np.random.default_rng(18)
        pred = gt3d + rng.normal(size=gt3d.shape) * 0.05
        pred[..., 2] = np.abs(pred[..., 2]) + 1.0
        w = LossWeights(1.0, 1.0, 0.05, 0.01)

        def loss(flat):
            return total_loss(flat.reshape(gt3d.shape), gt3d, cam, input2d,
                              skel, w).total

        t = dc.parameter(pred)
        total_loss(t, gt3d, cam, input2d, skel, w).total_tensor.backward()
        numeric = finite_difference_grad(loss, pred.copy(), h=1e-6)
        assert grad_scale_error(t.grad, numeric) < 1e-6
