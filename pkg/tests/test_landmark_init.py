import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covaug.errors import SingularPrior, UnderObserved
from covaug.infoaug import GaussianPrior, LinearObservation, assemble_information, joint_covariance
from covaug.landmark_init import (
    LinearizedLandmarkSystem,
    assemble_landmark_blocks,
    augment_multiple,
    augment_one_step,
    augment_sequential,
    augment_two_step,
    landmark_marginal_covariance_closed_form,
    nullspace_project,
)
from covaug.matblocks import pivoted_ldlt
from covaug.oracles import dense_joint_covariance, random_landmark_arrays, random_spd, rel_error


def _system(rng, m, k, sigma=None):
    P, H_x, H_f, residual, sigma = random_landmark_arrays(rng, m, k, sigma)
    return P, LinearizedLandmarkSystem(residual, H_x, H_f, sigma)


def _dense(P, system):
    return dense_joint_covariance(P, system.H_x, system.H_f, system.noise_cov)


class TestSystem:
    def test_validation(self):
        with pytest.raises(ValueError):
            LinearizedLandmarkSystem(np.zeros(4), np.zeros((4, 2)), np.zeros((4, 2)), 1.0)
        with pytest.raises(ValueError):
            LinearizedLandmarkSystem(np.zeros(4), np.zeros((4, 2)), np.zeros((4, 3)), 0.0)

    def test_short_system_flagged(self):
        sys = LinearizedLandmarkSystem(np.zeros(2), np.zeros((2, 1)), np.ones((2, 3)), 1.0)
        assert sys.under_observed


class TestNullspaceProject:
    def test_square_has_no_nullspace(self, rng):
        _, sys = _system(rng, 4, 3)
        split = nullspace_project(sys)
        assert split.rank == 3 and split.z_o.size == 0 and split.H_o.shape == (0, 4)

    def test_tall(self, rng):
        _, sys = _system(rng, 5, 6)
        split = nullspace_project(sys)
        assert split.rank == 3 and split.z_c.size == 3 and split.z_o.size == 3
        assert np.linalg.norm(split.Q_o.T @ sys.H_f) < 1e-12
        np.testing.assert_allclose(split.H_cf, split.Q_c.T @ sys.H_f, atol=1e-13)
        assert np.allclose(np.tril(split.H_cf, -1), 0.0)

    def test_projection_reconstructs_system(self, rng):
        _, sys = _system(rng, 5, 8)
        s = nullspace_project(sys)
        Q = np.hstack([s.Q_c, s.Q_o])
        np.testing.assert_allclose(Q @ np.concatenate([s.z_c, s.z_o]), sys.residual, atol=1e-13)
        np.testing.assert_allclose(Q @ np.vstack([s.H_cx, s.H_o]), sys.H_x, atol=1e-12)
        np.testing.assert_allclose(s.sigma_c, sys.noise_sigma**2 * np.eye(3))
        np.testing.assert_allclose(s.sigma_o, sys.noise_sigma**2 * np.eye(5))

    def test_degenerate_rank_two(self, rng):
        _, sys = _system(rng, 4, 4)
        H_f = sys.H_f.copy()
        H_f[1] = H_f[0]
        H_f[3] = H_f[2]  # two repeated observation rows: rank 2
        sys = LinearizedLandmarkSystem(sys.residual, sys.H_x, H_f, sys.noise_sigma)
        split = nullspace_project(sys)
        assert split.rank == 2 and split.under_observed
        assert np.linalg.matrix_rank(H_f) == 2
        assert np.abs(split.Q_o.T @ H_f).max() < 1e-12
        with pytest.raises(UnderObserved):
            landmark_marginal_covariance_closed_form(split, np.eye(4))
        with pytest.raises(UnderObserved):
            augment_one_step(split, GaussianPrior.zero_mean(np.eye(4)))


class TestLandmarkBlocks:
    def test_state_decoupled(self, rng):
        P, sys = _system(rng, 4, 7)
        split = nullspace_project(LinearizedLandmarkSystem(sys.residual, sys.H_x, sys.H_f, sys.noise_sigma))
        split = type(split)(split.z_c, split.z_o, np.zeros_like(split.H_cx), split.H_cf, split.H_o,
                            split.noise_sigma, split.rank, split.Q_c, split.Q_o)
        info = assemble_landmark_blocks(split, P)
        expected_A = np.linalg.inv(P) + split.H_o.T @ split.H_o / split.noise_sigma**2
        np.testing.assert_allclose(info.A, expected_A, rtol=1e-10)
        np.testing.assert_array_equal(info.B, 0.0)

    def test_projection_preserves_information(self, rng):
        P, sys = _system(rng, 6, 9)
        projected = assemble_landmark_blocks(nullspace_project(sys), P).assemble()
        raw = assemble_information(
            GaussianPrior.zero_mean(P), LinearObservation(sys.residual, sys.H_x, sys.H_f, sys.noise_cov)
        ).assemble()
        assert rel_error(projected, raw) < 1e-10

    def test_noise_scaling_law(self, rng):
        P, sys = _system(rng, 5, 8)
        c = 3.0
        scaled = LinearizedLandmarkSystem(sys.residual, sys.H_x, sys.H_f, c * sys.noise_sigma)
        base = assemble_landmark_blocks(nullspace_project(sys), P)
        out = assemble_landmark_blocks(nullspace_project(scaled), P)
        P_inv = np.linalg.inv(P)
        assert rel_error(out.A - P_inv, (base.A - P_inv) / c**2) < 1e-9
        assert rel_error(out.B, base.B / c**2) < 1e-12
        assert rel_error(out.D, base.D / c**2) < 1e-12

    def test_singular_prior(self, rng):
        _, sys = _system(rng, 3, 5)
        with pytest.raises(SingularPrior):
            assemble_landmark_blocks(nullspace_project(sys), np.diag([1.0, 1.0, 0.0]))


class TestClosedForm:
    def test_pure_triangulation_uncertainty(self, rng):
        P, sys = _system(rng, 4, 6)
        sys = LinearizedLandmarkSystem(sys.residual, np.zeros_like(sys.H_x), sys.H_f, sys.noise_sigma)
        split = nullspace_project(sys)
        Hinv = np.linalg.inv(split.H_cf)
        expected = sys.noise_sigma**2 * Hinv @ Hinv.T
        assert rel_error(landmark_marginal_covariance_closed_form(split, P), expected) < 1e-12
        # ... which is also the least-squares covariance of H_f alone
        assert rel_error(expected, sys.noise_sigma**2 * np.linalg.inv(sys.H_f.T @ sys.H_f)) < 1e-10

    def test_matches_block_inversion_m1_k4(self, rng):
        P, sys = _system(rng, 1, 4)
        split = nullspace_project(sys)
        via_blocks = joint_covariance(assemble_landmark_blocks(split, P)).D
        assert rel_error(landmark_marginal_covariance_closed_form(split, P), via_blocks) < 1e-10

    def test_matches_dense_m9_k8(self, rng):
        P, sys = _system(rng, 9, 8)
        closed = landmark_marginal_covariance_closed_form(nullspace_project(sys), P)
        assert rel_error(closed, _dense(P, sys)[-3:, -3:]) < 1e-9

    def test_psd(self, rng):
        P, sys = _system(rng, 9, 8)
        closed = landmark_marginal_covariance_closed_form(nullspace_project(sys), P)
        assert np.all(pivoted_ldlt(closed, rank_tol=0.0, psd_tol=np.inf).d >= -1e-9)


class TestAugmentation:
    def test_uninformative_about_state(self, rng):
        P, sys = _system(rng, 5, 3)
        sys = LinearizedLandmarkSystem(sys.residual, np.zeros_like(sys.H_x), sys.H_f, sys.noise_sigma)
        aug = augment_one_step(nullspace_project(sys), GaussianPrior.zero_mean(P))
        assert rel_error(aug.state_cov, P) < 1e-12
        assert np.abs(aug.cross_cov).max() < 1e-12 * np.abs(P).max()

    def test_one_step_identity_product(self, rng):
        P, sys = _system(rng, 7, 10)
        split = nullspace_project(sys)
        aug = augment_one_step(split, GaussianPrior.zero_mean(P)).assemble()
        lam = assemble_landmark_blocks(split, P).assemble()
        assert rel_error(aug @ lam, np.eye(10)) < 1e-9

    def test_one_step_cross_cov_matches_dense(self, rng):
        P, sys = _system(rng, 7, 10)
        aug = augment_one_step(nullspace_project(sys), GaussianPrior.zero_mean(P))
        assert rel_error(aug.cross_cov, _dense(P, sys)[:7, 7:]) < 1e-9

    def test_one_step_landmark_block_is_closed_form(self, rng):
        P, sys = _system(rng, 6, 9)
        split = nullspace_project(sys)
        aug = augment_one_step(split, GaussianPrior.zero_mean(P))
        assert rel_error(aug.landmark_cov, landmark_marginal_covariance_closed_form(split, P)) < 1e-10

    def test_two_step_without_nullspace_rows(self, rng):
        P, sys = _system(rng, 5, 3)
        split = nullspace_project(sys)
        two = augment_two_step(split, GaussianPrior.zero_mean(P))
        one = augment_one_step(split, GaussianPrior.zero_mean(P))
        # with k = 3 the state covariance is untouched
        np.testing.assert_array_equal(two.state_cov, P)
        assert rel_error(two.assemble(), one.assemble()) < 1e-10

    def test_two_step_zero_gain(self, rng):
        P, sys = _system(rng, 5, 8)
        split = nullspace_project(sys)
        split = type(split)(split.z_c, split.z_o, split.H_cx, split.H_cf, np.zeros_like(split.H_o),
                            split.noise_sigma, split.rank, split.Q_c, split.Q_o)
        two = augment_two_step(split, GaussianPrior.zero_mean(P))
        np.testing.assert_allclose(two.state_cov, P, rtol=1e-14)

    def test_two_step_matches_one_step_m6_k10(self, rng):
        P, sys = _system(rng, 6, 10)
        split = nullspace_project(sys)
        prior = GaussianPrior.zero_mean(P)
        assert rel_error(augment_two_step(split, prior).assemble(), augment_one_step(split, prior).assemble()) < 1e-9

    def test_noise_scaling_is_exact(self, rng):
        P, sys = _system(rng, 6, 9)
        c = 4.0
        scaled = LinearizedLandmarkSystem(sys.residual, sys.H_x, sys.H_f, c * sys.noise_sigma)
        base = augment_one_step(nullspace_project(sys), GaussianPrior.zero_mean(P)).assemble()
        out = augment_one_step(nullspace_project(scaled), GaussianPrior.zero_mean(c**2 * P)).assemble()
        assert rel_error(out, c**2 * base) < 1e-12


class TestMultiple:
    def _splits(self, rng, m, count):
        splits = []
        for _ in range(count):
            _, sys = _system(rng, m, int(rng.integers(3, 10)))
            splits.append(nullspace_project(sys))
        return splits

    def test_single_landmark(self, rng):
        P = random_spd(rng, 5)
        splits = self._splits(rng, 5, 1)
        prior = GaussianPrior.zero_mean(P)
        assert rel_error(augment_multiple(splits, prior).assemble(), augment_one_step(splits[0], prior).assemble()) < 1e-12

    def test_two_landmarks_match_sequential(self, rng):
        P = random_spd(rng, 6)
        splits = self._splits(rng, 6, 2)
        prior = GaussianPrior.zero_mean(P)
        assert rel_error(augment_multiple(splits, prior).assemble(), augment_sequential(splits, prior).assemble()) < 1e-9

    def test_three_landmarks_match_dense(self, rng):
        m = 6
        P = random_spd(rng, m)
        systems = [_system(rng, m, k)[1] for k in (4, 7, 5)]
        splits = [nullspace_project(s) for s in systems]
        batch = augment_multiple(splits, GaussianPrior.zero_mean(P)).assemble()
        H_m = np.vstack([s.H_x for s in systems])
        H_n = np.zeros((H_m.shape[0], 9))
        R = np.zeros((H_m.shape[0],) * 2)
        row = 0
        for i, s in enumerate(systems):
            H_n[row : row + s.k, 3 * i : 3 * i + 3] = s.H_f
            R[row : row + s.k, row : row + s.k] = s.noise_cov
            row += s.k
        assert rel_error(batch, dense_joint_covariance(P, H_m, H_n, R)) < 1e-9

    def test_reports_failing_index(self, rng):
        P = random_spd(rng, 4)
        splits = self._splits(rng, 4, 3)
        _, bad = _system(rng, 4, 2)
        splits[1] = nullspace_project(bad)
        with pytest.raises(UnderObserved) as err:
            augment_multiple(splits, GaussianPrior.zero_mean(P))
        assert err.value.index == 1

    def test_empty(self, rng):
        P = random_spd(rng, 3)
        out = augment_multiple([], GaussianPrior.zero_mean(P))
        np.testing.assert_array_equal(out.assemble(), P)

    def test_deterministic(self, rng):
        P = random_spd(rng, 5)
        splits = self._splits(rng, 5, 4)
        prior = GaussianPrior.zero_mean(P)
        assert augment_multiple(splits, prior).assemble().tobytes() == augment_multiple(splits, prior).assemble().tobytes()


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(3, 15), k=st.integers(3, 20))
def test_one_step_equals_two_step(seed, m, k):
    P, sys = _system(np.random.default_rng(seed), m, k)
    split = nullspace_project(sys)
    prior = GaussianPrior.zero_mean(P)
    assert rel_error(augment_two_step(split, prior).assemble(), augment_one_step(split, prior).assemble()) < 1e-9


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(3, 15), k=st.integers(3, 20))
def test_closed_form_equals_dense(seed, m, k):
    P, sys = _system(np.random.default_rng(seed), m, k)
    closed = landmark_marginal_covariance_closed_form(nullspace_project(sys), P)
    assert rel_error(closed, _dense(P, sys)[-3:, -3:]) < 1e-9
