import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from covaug.errors import SingularPrior
from covaug.infoaug import (
    GaussianPrior,
    LinearObservation,
    assemble_information,
    joint_covariance,
    marginal_covariance_new,
    marginal_information_new,
)
from covaug.matblocks import pivoted_ldlt
from covaug.oracles import dense_joint_covariance, dense_stacked_information, random_spd, rel_error


def _scalar_case():
    prior = GaussianPrior([0.0], [[1.0]])
    obs = LinearObservation([0.0], [[1.0]], [[1.0]], [[1.0]])
    return prior, obs


def _random_case(rng, m=4, n=2, k=6):
    prior = GaussianPrior(rng.standard_normal(m), random_spd(rng, m))
    obs = LinearObservation(
        rng.standard_normal(k),
        rng.standard_normal((k, m)),
        rng.standard_normal((k, n)),
        np.diag(rng.uniform(0.1, 2.0, k)),
    )
    return prior, obs


class TestTypes:
    def test_prior_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianPrior([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])

    def test_prior_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GaussianPrior([0.0], np.eye(2))

    def test_observation_requires_diagonal_noise(self):
        with pytest.raises(ValueError, match="diagonal"):
            LinearObservation([0.0, 0.0], np.ones((2, 1)), np.ones((2, 1)), [[1.0, 0.1], [0.1, 1.0]])

    def test_observation_requires_positive_noise(self):
        with pytest.raises(ValueError, match="positive"):
            LinearObservation([0.0], [[1.0]], [[1.0]], [[0.0]])

    def test_observation_row_mismatch(self):
        with pytest.raises(ValueError):
            LinearObservation([0.0, 1.0], np.ones((1, 1)), np.ones((2, 1)), np.eye(2))


class TestAssembleInformation:
    def test_scalar(self):
        info = assemble_information(*_scalar_case())
        np.testing.assert_allclose(info.assemble(), [[2.0, 1.0], [1.0, 1.0]], rtol=1e-15)

    def test_decoupled_observation(self, rng):
        prior, obs = _random_case(rng)
        obs = LinearObservation(obs.residual, np.zeros_like(obs.H_m), obs.H_n, obs.noise_cov)
        info = assemble_information(prior, obs)
        np.testing.assert_allclose(info.A, np.linalg.inv(prior.covariance), rtol=1e-12)
        np.testing.assert_array_equal(info.B, 0.0)
        expected_D = obs.H_n.T @ np.linalg.inv(obs.noise_cov) @ obs.H_n
        np.testing.assert_allclose(info.D, expected_D, rtol=1e-13)

    def test_matches_dense_stacked_system(self, rng):
        prior, obs = _random_case(rng, m=4, n=2, k=6)
        info = assemble_information(prior, obs)
        dense = dense_stacked_information(prior.covariance, obs.H_m, obs.H_n, obs.noise_cov)
        assert rel_error(info.assemble(), dense) < 1e-10

    def test_C_is_B_transpose(self, rng):
        info = assemble_information(*_random_case(rng))
        np.testing.assert_array_equal(info.C, info.B.T)

    def test_singular_prior(self):
        prior = GaussianPrior([0.0, 0.0], np.diag([1.0, 0.0]))
        obs = LinearObservation([0.0], [[1.0, 1.0]], [[1.0]], [[1.0]])
        with pytest.raises(SingularPrior):
            assemble_information(prior, obs)

    def test_ill_conditioned_prior(self):
        prior = GaussianPrior([0.0, 0.0], np.diag([1.0, 1e-15]))
        obs = LinearObservation([0.0], [[1.0, 1.0]], [[1.0]], [[1.0]])
        with pytest.raises(SingularPrior):
            assemble_information(prior, obs)

    def test_dimension_check(self, rng):
        prior, obs = _random_case(rng, m=4)
        with pytest.raises(ValueError):
            assemble_information(GaussianPrior.zero_mean(np.eye(3)), obs)


class TestCovariances:
    def test_scalar_joint(self):
        cov = joint_covariance(assemble_information(*_scalar_case()))
        np.testing.assert_allclose(cov.assemble(), [[1.0, -1.0], [-1.0, 2.0]], rtol=1e-14)

    def test_scalar_marginals(self):
        info = assemble_information(*_scalar_case())
        assert marginal_covariance_new(info)[0, 0] == pytest.approx(2.0, rel=1e-14)
        lam = marginal_information_new(info)
        assert lam[0, 0] == pytest.approx(0.5, rel=1e-14)
        assert 1.0 / lam[0, 0] == pytest.approx(marginal_covariance_new(info)[0, 0], rel=1e-14)

    def test_block_diagonal_case(self, rng):
        prior, obs = _random_case(rng)
        obs = LinearObservation(obs.residual, np.zeros_like(obs.H_m), obs.H_n, obs.noise_cov)
        info = assemble_information(prior, obs)
        cov = joint_covariance(info)
        np.testing.assert_allclose(cov.A, np.linalg.inv(info.A), rtol=1e-12)
        np.testing.assert_allclose(cov.D, np.linalg.inv(info.D), rtol=1e-12)
        np.testing.assert_array_equal(cov.B, 0.0)
        np.testing.assert_array_equal(marginal_information_new(info), info.D)

    def test_random_identity_product(self, rng):
        info = assemble_information(*_random_case(rng))
        product = joint_covariance(info).assemble() @ info.assemble()
        assert rel_error(product, np.eye(product.shape[0])) < 1e-9

    def test_marginal_matches_dense_inverse(self, rng):
        prior, obs = _random_case(rng, m=5, n=3, k=7)
        info = assemble_information(prior, obs)
        dense = np.linalg.inv(dense_stacked_information(prior.covariance, obs.H_m, obs.H_n, obs.noise_cov))
        assert rel_error(marginal_covariance_new(info), dense[5:, 5:]) < 1e-9

    def test_rank_deficient_marginal_information(self, rng):
        n = 3
        prior, obs = _random_case(rng, m=4, n=n, k=8)
        H_n = obs.H_n.copy()
        H_n[:, 2] = H_n[:, 0]  # x_n[0] and x_n[2] only observed through their sum
        obs = LinearObservation(obs.residual, obs.H_m, H_n, obs.noise_cov)
        lam = marginal_information_new(assemble_information(prior, obs))
        eig = np.linalg.eigvalsh(lam)
        assert abs(eig[0]) < 1e-12 * eig[-1] and eig[1] > 1e-6 * eig[-1]
        assert pivoted_ldlt(lam, rank_tol=1e-10).rank == n - 1

    def test_outputs_exactly_symmetric(self, rng):
        info = assemble_information(*_random_case(rng, m=7, n=3, k=9))
        for M in (joint_covariance(info).assemble(), marginal_covariance_new(info), marginal_information_new(info)):
            assert np.abs(M - M.T).max() <= 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 8), n=st.integers(1, 4), extra=st.integers(0, 6))
def test_information_and_covariance_are_consistent(seed, m, n, extra):
    prior, obs = _random_case(np.random.default_rng(seed), m=m, n=n, k=n + extra)
    info = assemble_information(prior, obs)
    assert rel_error(np.linalg.inv(marginal_information_new(info)), marginal_covariance_new(info)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_prior_dominates_under_huge_noise(seed):
    prior, obs = _random_case(np.random.default_rng(seed))
    loud = LinearObservation(obs.residual, obs.H_m, obs.H_n, 1e12 * np.eye(obs.k))
    cov = joint_covariance(assemble_information(prior, loud))
    assert rel_error(cov.A, prior.covariance) < 1e-3


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_second_observation_never_inflates_state_variance(seed):
    rng = np.random.default_rng(seed)
    prior, obs = _random_case(rng)
    _, extra = _random_case(rng)
    both = LinearObservation(
        np.concatenate([obs.residual, extra.residual]),
        np.vstack([obs.H_m, extra.H_m]),
        np.vstack([obs.H_n, extra.H_n]),
        np.diag(np.concatenate([np.diag(obs.noise_cov), np.diag(extra.noise_cov)])),
    )
    before = np.diag(joint_covariance(assemble_information(prior, obs)).A)
    after = np.diag(joint_covariance(assemble_information(prior, both)).A)
    assert np.all(after <= before * (1 + 1e-12))


def test_dense_oracles_agree_when_well_conditioned(rng):
    P = random_spd(rng, 4, jitter=1.0)
    H_m = rng.standard_normal((6, 4))
    H_n = rng.standard_normal((6, 2))
    R = np.diag(rng.uniform(0.5, 2.0, 6))
    explicit = np.linalg.inv(dense_stacked_information(P, H_m, H_n, R))
    assert rel_error(dense_joint_covariance(P, H_m, H_n, R), explicit) < 1e-12
