"""Randomized invariant suites run by ``covaug verify``.

Each suite draws ``instances`` random problems from its own generator
(seeded from the run seed and the suite name, so suites are independent
of each other and of execution order) and returns a single error figure:
the worst case over all instances. Approximate suites pass when that
figure is strictly below the tolerance; exact suites count violations and
pass at zero.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from covaug import geom_sim, infoaug, landmark_init, matblocks, relpose
from covaug.errors import CovaugError, DivergedTriangulation
from covaug.oracles import (
    dense_joint_covariance,
    dense_stacked_information,
    finite_difference_jacobians,
    random_landmark_arrays,
    random_pose,
    random_psd_of_rank,
    random_relpose_arrays,
    random_spd,
    random_visible_landmark,
    rel_error,
)


@dataclass(frozen=True)
class Suite:
    name: str
    tolerance: float | None  # None: exact check, passes iff no violations
    run: Callable[[np.random.Generator, int], float]


def suite_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def _random_split_spd(rng, max_block=12):
    m = int(rng.integers(1, max_block + 1))
    n = int(rng.integers(1, max_block + 1))
    S = random_spd(rng, m + n)
    return S, m


def _landmark_instance(rng, m_range=(3, 15), k_range=(3, 20)):
    m = int(rng.integers(m_range[0], m_range[1] + 1))
    k = int(rng.integers(k_range[0], k_range[1] + 1))
    P, H_x, H_f, residual, sigma = random_landmark_arrays(rng, m, k)
    system = landmark_init.LinearizedLandmarkSystem(residual, H_x, H_f, sigma)
    return P, system


# -- matblocks ---------------------------------------------------------------

def block_inverse_identity(rng, instances):
    worst = 0.0
    for _ in range(instances):
        S, m = _random_split_spd(rng)
        inv = matblocks.block_inverse(matblocks.BlockMatrix2x2.from_dense(S, m)).assemble()
        worst = max(worst, rel_error(S @ inv, np.eye(S.shape[0])))
    return worst


def qr_orthonormal(rng, instances):
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 21))
        c = int(rng.integers(1, k + 1))
        Q_c, Q_o, _ = matblocks.qr_column_null_split(rng.standard_normal((k, c)))
        Q = np.hstack([Q_c, Q_o])
        worst = max(worst, np.abs(Q.T @ Q - np.eye(k)).max())
    return worst


def qr_nullspace(rng, instances):
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 21))
        c = int(rng.integers(1, k + 1))
        M = rng.standard_normal((k, c))
        Q_c, Q_o, T_c = matblocks.qr_column_null_split(M)
        scale = np.linalg.norm(M)
        worst = max(worst, np.abs(Q_o.T @ M).max(initial=0.0) / scale, rel_error(Q_c @ T_c, M))
    return worst


def ldlt_square_root(rng, instances):
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(1, 13))
        r = int(rng.integers(1, n + 1))
        S = random_psd_of_rank(rng, n, r)
        R = matblocks.square_root_from_ldlt(matblocks.pivoted_ldlt(S))
        worst = max(worst, rel_error(R.T @ R, S))
    return worst


def schur_vs_block_inverse(rng, instances):
    worst = 0.0
    for _ in range(instances):
        S, m = _random_split_spd(rng)
        blocks = matblocks.BlockMatrix2x2.from_dense(S, m)
        bottom_right = matblocks.block_inverse(blocks).D
        schur = matblocks.schur_complement_of_A(blocks)
        worst = max(worst, rel_error(np.linalg.inv(schur), bottom_right))
    return worst


# -- infoaug -----------------------------------------------------------------

def _info_instance(rng, m=None, n=None, k=None):
    m = m or int(rng.integers(1, 9))
    n = n or int(rng.integers(1, 5))
    k = k or int(rng.integers(n, n + 8))
    prior = infoaug.GaussianPrior(rng.standard_normal(m), random_spd(rng, m))
    obs = infoaug.LinearObservation(
        rng.standard_normal(k),
        rng.standard_normal((k, m)),
        rng.standard_normal((k, n)),
        np.diag(10.0 ** rng.uniform(-2, 0, k)),
    )
    return prior, obs


def info_cov_consistency(rng, instances):
    worst = 0.0
    for _ in range(instances):
        prior, obs = _info_instance(rng)
        info = infoaug.assemble_information(prior, obs)
        cov = infoaug.marginal_covariance_new(info)
        lam = infoaug.marginal_information_new(info)
        worst = max(worst, rel_error(np.linalg.inv(lam), cov))
    return worst


def prior_dominance(rng, instances):
    worst = 0.0
    for _ in range(instances):
        prior, obs = _info_instance(rng)
        loud = infoaug.LinearObservation(obs.residual, obs.H_m, obs.H_n, 1e12 * np.eye(obs.k))
        cov = infoaug.joint_covariance(infoaug.assemble_information(prior, loud))
        worst = max(worst, rel_error(cov.A, prior.covariance))
    return worst


def observation_monotonicity(rng, instances):
    worst = 0.0
    for _ in range(instances):
        prior, obs = _info_instance(rng)
        _, extra = _info_instance(rng, m=prior.dim, n=obs.n)
        before = np.diag(infoaug.joint_covariance(infoaug.assemble_information(prior, obs)).A)
        both = infoaug.LinearObservation(
            np.concatenate([obs.residual, extra.residual]),
            np.vstack([obs.H_m, extra.H_m]),
            np.vstack([obs.H_n, extra.H_n]),
            np.diag(np.concatenate([np.diag(obs.noise_cov), np.diag(extra.noise_cov)])),
        )
        after = np.diag(infoaug.joint_covariance(infoaug.assemble_information(prior, both)).A)
        worst = max(worst, float(np.max((after - before) / before)))
    return max(worst, 0.0)


def covariance_symmetry(rng, instances):
    worst = 0.0
    for _ in range(instances):
        prior, obs = _info_instance(rng)
        info = infoaug.assemble_information(prior, obs)
        for M in (
            info.assemble(),
            infoaug.joint_covariance(info).assemble(),
            infoaug.marginal_covariance_new(info),
            infoaug.marginal_information_new(info),
        ):
            worst = max(worst, np.abs(M - M.T).max())
    return worst


# -- landmark_init -----------------------------------------------------------

def information_preservation(rng, instances):
    worst = 0.0
    for _ in range(instances):
        P, system = _landmark_instance(rng)
        split = landmark_init.nullspace_project(system)
        projected = landmark_init.assemble_landmark_blocks(split, P).assemble()
        raw = infoaug.assemble_information(
            infoaug.GaussianPrior.zero_mean(P),
            infoaug.LinearObservation(system.residual, system.H_x, system.H_f, system.noise_cov),
        ).assemble()
        worst = max(worst, rel_error(projected, raw))
    return worst


def one_step_two_step(rng, instances):
    worst = 0.0
    for _ in range(instances):
        P, system = _landmark_instance(rng)
        split = landmark_init.nullspace_project(system)
        prior = infoaug.GaussianPrior.zero_mean(P)
        one = landmark_init.augment_one_step(split, prior).assemble()
        two = landmark_init.augment_two_step(split, prior).assemble()
        worst = max(worst, rel_error(two, one))
    return worst


def closed_form_vs_dense(rng, instances):
    worst = 0.0
    for _ in range(instances):
        P, system = _landmark_instance(rng, m_range=(6, 30), k_range=(4, 20))
        split = landmark_init.nullspace_project(system)
        closed = landmark_init.landmark_marginal_covariance_closed_form(split, P)
        dense = dense_joint_covariance(P, system.H_x, system.H_f, system.noise_cov)
        worst = max(worst, rel_error(closed, dense[-3:, -3:]))
    return worst


def smw_identity(rng, instances):
    worst = 0.0
    for _ in range(instances):
        m = int(rng.integers(1, 16))
        j = int(rng.integers(1, 18))
        P = random_spd(rng, m)
        H = rng.standard_normal((j, m))
        N = float(10.0 ** rng.uniform(-2, 0)) ** 2 * np.eye(j)
        direct = np.linalg.inv(np.linalg.inv(P) + H.T @ np.linalg.inv(N) @ H)
        worst = max(worst, rel_error(matblocks.smw_inverse(P, H, N), direct))
    return worst


def augmented_psd(rng, instances):
    worst = 0.0
    for _ in range(instances):
        P, system = _landmark_instance(rng)
        split = landmark_init.nullspace_project(system)
        aug = landmark_init.augment_one_step(split, infoaug.GaussianPrior.zero_mean(P))
        for M in (aug.landmark_cov, aug.assemble()):
            f = matblocks.pivoted_ldlt(M, rank_tol=0.0, psd_tol=np.inf)
            worst = max(worst, -f.d.min() / f.d.max(), 0.0)
    return worst


def noise_scaling(rng, instances):
    worst = 0.0
    for _ in range(instances):
        P, system = _landmark_instance(rng)
        # powers of two keep the scaling exact in floating point
        c = float(2.0 ** rng.integers(-4, 5))
        scaled = landmark_init.LinearizedLandmarkSystem(
            system.residual, system.H_x, system.H_f, c * system.noise_sigma
        )
        base = landmark_init.augment_one_step(
            landmark_init.nullspace_project(system), infoaug.GaussianPrior.zero_mean(P)
        ).assemble()
        out = landmark_init.augment_one_step(
            landmark_init.nullspace_project(scaled), infoaug.GaussianPrior.zero_mean(c**2 * P)
        ).assemble()
        worst = max(worst, rel_error(out, c**2 * base))
    return worst


def batch_vs_sequential(rng, instances):
    worst = 0.0
    for _ in range(instances):
        m = int(rng.integers(3, 13))
        L = int(rng.integers(2, 6))
        P = random_spd(rng, m)
        splits = []
        for _ in range(L):
            k = int(rng.integers(3, 13))
            _, H_x, H_f, residual, sigma = random_landmark_arrays(rng, m, k)
            splits.append(landmark_init.nullspace_project(
                landmark_init.LinearizedLandmarkSystem(residual, H_x, H_f, sigma)))
        prior = infoaug.GaussianPrior.zero_mean(P)
        batch = landmark_init.augment_multiple(splits, prior).assemble()
        seq = landmark_init.augment_sequential(splits, prior).assemble()
        worst = max(worst, rel_error(batch, seq))
    return worst


# -- relpose -----------------------------------------------------------------

def _relpose_instance(rng):
    l = int(rng.integers(5, 11))
    residual, H_f, H_T, R, P = random_relpose_arrays(rng, l)
    return relpose.RelPoseSystem(residual, H_f, H_T, R, P)


def relpose_schur_consistency(rng, instances):
    worst = 0.0
    for _ in range(instances):
        sys = _relpose_instance(rng)
        lam = relpose.relpose_information(sys)
        dense = dense_joint_covariance(sys.landmark_prior_cov, sys.H_f, sys.H_T, sys.noise_cov)
        worst = max(worst, rel_error(np.linalg.inv(lam), dense[-6:, -6:]))
    return worst


def prior_shrink_monotonicity(rng, instances):
    worst = 0.0
    probes = rng.standard_normal((100, 6))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    for _ in range(instances):
        sys = _relpose_instance(rng)
        c = float(rng.uniform(0.01, 0.99))
        shrunk = relpose.RelPoseSystem(sys.residual, sys.H_f, sys.H_T, sys.noise_cov, c * sys.landmark_prior_cov)
        before = relpose.relpose_information(sys)
        after = relpose.relpose_information(shrunk)
        q_before = np.einsum("pi,ij,pj->p", probes, before, probes)
        q_after = np.einsum("pi,ij,pj->p", probes, after, probes)
        scale = np.abs(before).max()
        worst = max(worst, float(np.max(q_before - q_after)) / scale, 0.0)
    return worst


def whitening_contract(rng, instances):
    worst = 0.0
    for i in range(instances):
        sys = _relpose_instance(rng)
        lam = relpose.relpose_information(sys)
        if i % 2:
            # rank-deficient: keep only a few rows
            keep = int(rng.integers(1, 6))
            lam = relpose.relpose_information(relpose.RelPoseSystem(
                sys.residual[:keep], sys.H_f[:keep], sys.H_T[:keep],
                sys.noise_cov[:keep, :keep], sys.landmark_prior_cov))
        sri = relpose.square_root_information(lam)
        e = rng.standard_normal(6)
        worst = max(worst, relpose.whitening_error(sri, e), rel_error(sri.R.T @ sri.R, lam))
    return worst


def degeneracy_detection(rng, instances):
    missed = 0
    for i in range(instances):
        seed = int(rng.integers(2**31))
        if i % 2:
            scene = geom_sim.generate_scene(3, int(rng.integers(2, 12)), seed=seed, preset="collinear")
        else:
            scene = geom_sim.generate_scene(3, int(rng.integers(1, 3)), seed=seed)
        lam = relpose.relpose_information(geom_sim.build_relpose_system(scene))
        if relpose.square_root_information(lam).rank >= 6:
            missed += 1
    return missed


# -- geom_sim ----------------------------------------------------------------

def jacobians_fd(rng, instances):
    worst = 0.0
    for _ in range(instances):
        pose = random_pose(rng)
        lm = random_visible_landmark(rng, pose)
        H_pose, H_lm = geom_sim.jacobians(pose, lm)
        fd_pose, fd_lm = finite_difference_jacobians(pose, lm)
        worst = max(worst, np.abs(H_pose - fd_pose).max(), np.abs(H_lm - fd_lm).max())
    return worst


def boxplus_orthonormality(rng, instances):
    pose = random_pose(rng)
    deltas = 0.1 * rng.standard_normal((10_000, 6))
    for delta in deltas:
        pose = geom_sim.boxplus_pose(pose, delta)
    R = pose.rotation
    return max(np.abs(R.T @ R - np.eye(3)).max(), abs(np.linalg.det(R) - 1.0))


def scene_determinism(rng, instances):
    mismatches = 0
    for _ in range(max(1, instances // 10)):
        seed = int(rng.integers(2**31))
        a = geom_sim.generate_scene(4, 6, seed=seed)
        b = geom_sim.generate_scene(4, 6, seed=seed)
        oa, ob = a.observations(), b.observations()
        same = oa.keys() == ob.keys() and all(oa[key].tobytes() == ob[key].tobytes() for key in oa)
        same = same and a.state_prior_cov().tobytes() == b.state_prior_cov().tobytes()
        mismatches += not same
    return mismatches


def noise_free_residuals(rng, instances):
    worst = 0.0
    for _ in range(max(1, instances // 10)):
        scene = geom_sim.generate_scene(4, 5, seed=int(rng.integers(2**31)), noise_free=True)
        obs = scene.observations()
        for j in range(len(scene.landmarks)):
            try:
                system = geom_sim.build_landmark_system(scene, j, obs)
            except (CovaugError, DivergedTriangulation):
                return np.inf
            worst = max(worst, float(np.linalg.norm(system.residual)))
    return worst


def views_trace_monotone(rng, instances):
    violations = 0
    for _ in range(max(1, instances // 20)):
        scene = geom_sim.generate_scene(6, 1, seed=int(rng.integers(2**31)), noise_free=True)
        obs = scene.observations()
        P = scene.state_prior_cov()
        previous = np.inf
        for views in range(2, 7):
            mask = np.zeros((6, 1), dtype=bool)
            mask[:views] = True
            sub = geom_sim.Scene(
                scene.poses, scene.landmarks, scene.noise_sigma, scene.rng_seed,
                noise_free=True, visibility=mask,
            )
            system = geom_sim.build_landmark_system(sub, 0, obs)
            split = landmark_init.nullspace_project(system)
            trace = float(np.trace(landmark_init.landmark_marginal_covariance_closed_form(split, P)))
            violations += trace > previous * (1 + 1e-12)
            previous = trace
    return violations


SUITES: tuple[Suite, ...] = (
    Suite("matblocks.block_inverse_identity", 1e-9, block_inverse_identity),
    Suite("matblocks.qr_orthonormal", 1e-12, qr_orthonormal),
    Suite("matblocks.qr_nullspace", 1e-12, qr_nullspace),
    Suite("matblocks.ldlt_square_root", 1e-9, ldlt_square_root),
    Suite("matblocks.schur_vs_block_inverse", 1e-9, schur_vs_block_inverse),
    Suite("infoaug.info_cov_consistency", 1e-9, info_cov_consistency),
    Suite("infoaug.prior_dominance", 1e-3, prior_dominance),
    Suite("infoaug.observation_monotonicity", 1e-12, observation_monotonicity),
    Suite("infoaug.covariance_symmetry", 1e-12, covariance_symmetry),
    Suite("landmark_init.information_preservation", 1e-10, information_preservation),
    Suite("landmark_init.one_step_two_step", 1e-9, one_step_two_step),
    Suite("landmark_init.closed_form_vs_dense", 1e-9, closed_form_vs_dense),
    Suite("landmark_init.smw_identity", 1e-9, smw_identity),
    Suite("landmark_init.augmented_psd", 1e-9, augmented_psd),
    Suite("landmark_init.noise_scaling", 1e-12, noise_scaling),
    Suite("landmark_init.batch_vs_sequential", 1e-9, batch_vs_sequential),
    Suite("relpose.schur_consistency", 1e-9, relpose_schur_consistency),
    Suite("relpose.prior_shrink_monotonicity", 1e-10, prior_shrink_monotonicity),
    Suite("relpose.whitening_contract", 1e-10, whitening_contract),
    Suite("relpose.degeneracy_detection", None, degeneracy_detection),
    Suite("geom_sim.jacobians_fd", 1e-6, jacobians_fd),
    Suite("geom_sim.boxplus_orthonormality", 1e-12, boxplus_orthonormality),
    Suite("geom_sim.scene_determinism", None, scene_determinism),
    Suite("geom_sim.noise_free_residuals", 1e-8, noise_free_residuals),
    Suite("geom_sim.views_trace_monotone", None, views_trace_monotone),
)

SUITE_NAMES = tuple(s.name for s in SUITES)
