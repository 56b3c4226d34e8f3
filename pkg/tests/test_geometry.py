import numpy as np
import numpy.testing as npt
import pytest

from nudgeloc.geometry import (
    AngleNearPiError,
    EmptySetError,
    Pose,
    PoseGaussian,
    Twist,
    ZeroWeightError,
    compose,
    euler_rpy,
    exp_map,
    log_map,
    rotation_angle,
    rotation_rpy,
    sample_gaussian_pose,
    skew,
    weighted_mean,
    weighted_variance,
)


def exp_series_oracle(xi: Twist, terms: int = 20) -> np.ndarray:
    """Independent reference: truncated matrix power series of the 4x4 hat form."""
    w = np.array([xi.phi[2], xi.phi[1], xi.phi[0]])
    hat = np.zeros((4, 4))
    hat[:3, :3] = skew(w)
    hat[:3, 3] = xi.u
    out = np.eye(4)
    term = np.eye(4)
    for n in range(1, terms + 1):
        term = term @ hat / n
        out = out + term
    return out


def random_twist(rng, max_angle=np.pi - 1e-3) -> Twist:
    u = rng.uniform(-2, 2, 3)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    return Twist(u, axis * angle)


def random_pose(rng) -> Pose:
    return exp_map(random_twist(rng))


class TestCompose:
    def test_identity(self):
        I = Pose.identity()
        out = compose(I, I)
        npt.assert_allclose(out.R, np.eye(3))
        npt.assert_allclose(out.t, np.zeros(3))

    def test_inverse_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = random_pose(rng)
            out = compose(p, p.inverse())
            npt.assert_allclose(out.R, np.eye(3), atol=1e-9)
            npt.assert_allclose(out.t, np.zeros(3), atol=1e-9)

    def test_hand_multiplied_example(self):
        # Rz(90 deg) at t=(1,0,0) composed with a pure +x translation of 1 m:
        # R_a u = (0,1,0), plus t_a gives t = (1,1,0).
        a = Pose(rotation_rpy(np.pi / 2), [1.0, 0.0, 0.0])
        b = Pose(np.eye(3), [1.0, 0.0, 0.0])
        out = compose(a, b)
        npt.assert_allclose(out.t, [1.0, 1.0, 0.0], atol=1e-12)
        npt.assert_allclose(out.R, a.R, atol=1e-12)
        # cross-check against plain 4x4 multiplication
        npt.assert_allclose(out.matrix(), a.matrix() @ b.matrix(), atol=1e-12)

    def test_associative(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            npt.assert_allclose(lhs.matrix(), rhs.matrix(), atol=1e-9)


class TestExpMap:
    def test_zero_twist(self):
        p = exp_map(Twist.zero())
        npt.assert_allclose(p.matrix(), np.eye(4))

    def test_pure_translation(self):
        p = exp_map(Twist([1.0, 2.0, 0.0], np.zeros(3)))
        npt.assert_allclose(p.R, np.eye(3))
        npt.assert_allclose(p.t, [1.0, 2.0, 0.0])

    def test_yaw_quarter_turn_matches_series(self):
        xi = Twist(np.zeros(3), [np.pi / 2, 0.0, 0.0])
        p = exp_map(xi)
        npt.assert_allclose(p.matrix(), exp_series_oracle(xi), atol=1e-9)
        npt.assert_allclose(p.R, rotation_rpy(np.pi / 2), atol=1e-12)
        npt.assert_allclose(p.t, np.zeros(3), atol=1e-12)

    def test_random_twists_match_series(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            xi = random_twist(rng, max_angle=2.5)
            npt.assert_allclose(exp_map(xi).matrix(), exp_series_oracle(xi, 30), atol=1e-9)

    def test_output_orthogonality_drift(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(200):
            R = exp_map(random_twist(rng)).R
            worst = max(worst, np.abs(R @ R.T - np.eye(3)).max())
            assert np.linalg.det(R) > 0
        assert worst < 1e-12


class TestLogMap:
    def test_identity(self):
        xi = log_map(Pose.identity())
        npt.assert_allclose(xi.u, np.zeros(3))
        npt.assert_allclose(xi.phi, np.zeros(3))

    def test_roundtrip_moderate_angle(self):
        rng = np.random.default_rng(4)
        xi = random_twist(rng)
        xi = Twist(xi.u, xi.phi / np.linalg.norm(xi.phi) * 0.3)
        back = log_map(exp_map(xi))
        npt.assert_allclose(back.u, xi.u, atol=1e-10)
        npt.assert_allclose(back.phi, xi.phi, atol=1e-10)

    def test_yaw_quarter_turn(self):
        xi = log_map(Pose(rotation_rpy(np.pi / 2), np.zeros(3)))
        npt.assert_allclose(xi.u, np.zeros(3), atol=1e-12)
        npt.assert_allclose(xi.phi, [np.pi / 2, 0.0, 0.0], atol=1e-12)

    def test_roundtrip_sweep(self):
        # acceptance-style sweep over the full principal-branch domain
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            xi = random_twist(rng)
            p = exp_map(xi)
            back = exp_map(log_map(p))
            worst = max(worst, np.abs(back.matrix() - p.matrix()).max())
        assert worst < 1e-8

    def test_near_pi_raises(self):
        with pytest.raises(AngleNearPiError):
            log_map(Pose(rotation_rpy(np.pi - 1e-9), np.zeros(3)))


class TestTwistValidation:
    def test_rejects_angle_at_pi(self):
        with pytest.raises(ValueError):
            Twist(np.zeros(3), [np.pi, 0.0, 0.0])

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            Twist([np.nan, 0, 0], np.zeros(3))


class TestWeightedMean:
    def test_single_particle(self):
        rng = np.random.default_rng(6)
        p = random_pose(rng)
        out = weighted_mean([(1.0, p)])
        npt.assert_allclose(out.matrix(), p.matrix(), atol=1e-12)

    def test_translation_midpoint(self):
        a = Pose(np.eye(3), [0.0, 0.0, 0.0])
        b = Pose(np.eye(3), [2.0, 0.0, 0.0])
        out = weighted_mean([(0.5, a), (0.5, b)])
        npt.assert_allclose(out.t, [1.0, 0.0, 0.0])
        npt.assert_allclose(out.R, np.eye(3))

    def test_symmetric_yaws_cancel(self):
        a = Pose(rotation_rpy(np.deg2rad(10)), np.zeros(3))
        b = Pose(rotation_rpy(np.deg2rad(-10)), np.zeros(3))
        out = weighted_mean([(0.5, a), (0.5, b)])
        yaw, pitch, roll = euler_rpy(out.R)
        assert abs(yaw) < 1e-9 and abs(pitch) < 1e-9 and abs(roll) < 1e-9

    def test_weight_scale_invariance(self):
        rng = np.random.default_rng(7)
        poses = [random_pose(rng) for _ in range(5)]
        w = rng.uniform(0.1, 1.0, 5)
        m1 = weighted_mean(list(zip(w, poses)))
        m2 = weighted_mean(list(zip(17.3 * w, poses)))
        npt.assert_allclose(m1.matrix(), m2.matrix(), atol=1e-12)

    def test_errors(self):
        with pytest.raises(EmptySetError):
            weighted_mean([])
        with pytest.raises(ZeroWeightError):
            weighted_mean([(0.0, Pose.identity())])


class TestWeightedVariance:
    def test_identical_particles_zero(self):
        rng = np.random.default_rng(8)
        p = random_pose(rng)
        pairs = [(0.25, p)] * 4
        g = weighted_variance(pairs, weighted_mean(pairs))
        assert g.dispersion() < 1e-12

    def test_plus_minus_one_translation(self):
        # hand variance of {-1, +1}: unit variance on x only
        a = Pose(np.eye(3), [-1.0, 0.0, 0.0])
        b = Pose(np.eye(3), [1.0, 0.0, 0.0])
        pairs = [(0.5, a), (0.5, b)]
        g = weighted_variance(pairs, weighted_mean(pairs))
        npt.assert_allclose(g.cov_t, np.diag([1.0, 0.0, 0.0]), atol=1e-12)
        npt.assert_allclose(g.cov_r, np.zeros((3, 3)), atol=1e-12)
        assert abs(g.dispersion() - 1.0) < 1e-12

    def test_degenerate_weight_ignores_second_pose(self):
        rng = np.random.default_rng(9)
        pairs = [(1.0, random_pose(rng)), (0.0, random_pose(rng))]
        g = weighted_variance(pairs, weighted_mean(pairs))
        assert g.dispersion() < 1e-12

    def test_zero_iff_single_support(self):
        rng = np.random.default_rng(10)
        p, q = random_pose(rng), random_pose(rng)
        pairs = [(0.5, p), (0.5, q)]
        g = weighted_variance(pairs, weighted_mean(pairs))
        assert g.dispersion() > 1e-6


class TestSampleGaussianPose:
    def test_zero_covariance_returns_mean(self):
        rng = np.random.default_rng(11)
        mean = random_pose(rng)
        g = PoseGaussian(mean, np.zeros((3, 3)), np.zeros((3, 3)))
        out = sample_gaussian_pose(g, rng)
        npt.assert_allclose(out.matrix(), mean.matrix())

    def test_translation_covariance_monte_carlo(self):
        rng = np.random.default_rng(12)
        cov_t = np.diag([0.04, 0.04, 0.01])
        g = PoseGaussian(Pose.identity(), cov_t, np.zeros((3, 3)))
        ts = np.stack([sample_gaussian_pose(g, rng).t for _ in range(100_000)])
        sample_cov = np.cov(ts.T)
        npt.assert_allclose(np.diag(sample_cov), np.diag(cov_t), rtol=0.05)

    def test_seed_determinism(self):
        mean = Pose.identity()
        g = PoseGaussian(mean, 0.01 * np.eye(3), 0.001 * np.eye(3))
        a = [sample_gaussian_pose(g, np.random.default_rng(13)).flat() for _ in range(1)]
        b = [sample_gaussian_pose(g, np.random.default_rng(13)).flat() for _ in range(1)]
        npt.assert_array_equal(a, b)


def test_pose_flat_roundtrip():
    rng = np.random.default_rng(14)
    p = random_pose(rng)
    q = Pose.from_flat(p.flat())
    npt.assert_array_equal(p.matrix(), q.matrix())


def test_euler_roundtrip():
    rng = np.random.default_rng(15)
    for _ in range(50):
        yaw = rng.uniform(-np.pi, np.pi)
        pitch = rng.uniform(-1.4, 1.4)
        roll = rng.uniform(-np.pi, np.pi)
        y, p, r = euler_rpy(rotation_rpy(yaw, pitch, roll))
        npt.assert_allclose([y, p, r], [yaw, pitch, roll], atol=1e-9)


def test_rotation_angle():
    assert rotation_angle(np.eye(3)) == 0.0
    assert abs(rotation_angle(rotation_rpy(0.7)) - 0.7) < 1e-12
