"""Brute-force reference computations and random instance generators.

The oracles here deliberately take the long way round: they materialize
the stacked least-squares system (prior coefficient ``F = [I 0]``
included) and invert it densely with ``numpy.linalg.inv``. Nothing in
this module calls the block, Schur, QR or LDL^T kernels it is used to
check.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from covaug.geom_sim import Landmark, Pose, project, so3_exp


def rel_error(value, reference) -> float:
    """Frobenius-norm relative error; absolute when the reference is zero."""
    value = np.asarray(value, dtype=float)
    reference = np.asarray(reference, dtype=float)
    diff = np.linalg.norm(value - reference)
    ref = np.linalg.norm(reference)
    return float(diff / ref) if ref > 0 else float(diff)


def dense_stacked_information(P, H_m, H_n, noise_cov) -> np.ndarray:
    """``[F; H]^T blkdiag(P, R)^-1 [F; H]`` with every matrix formed explicitly."""
    P = np.asarray(P, dtype=float)
    H = np.hstack([np.asarray(H_m, dtype=float), np.asarray(H_n, dtype=float)])
    m = P.shape[0]
    n = H.shape[1] - m
    F = np.hstack([np.eye(m), np.zeros((m, n))])
    J = np.vstack([F, H])
    k = H.shape[0]
    W = np.zeros((m + k, m + k))
    W[:m, :m] = P
    W[m:, m:] = noise_cov
    return J.T @ np.linalg.inv(W) @ J


def dense_whitened_jacobian(P, H_m, H_n, noise_cov) -> np.ndarray:
    """``blkdiag(P, R)^-1/2 [F; H]`` with the prior whitened by its Cholesky factor."""
    P = np.asarray(P, dtype=float)
    H = np.hstack([np.asarray(H_m, dtype=float), np.asarray(H_n, dtype=float)])
    m = P.shape[0]
    L_inv = np.linalg.inv(np.linalg.cholesky(P))
    prior_rows = np.hstack([L_inv, np.zeros((m, H.shape[1] - m))])
    w = 1.0 / np.sqrt(np.diag(np.asarray(noise_cov, dtype=float)))
    return np.vstack([prior_rows, w[:, None] * H])


def dense_joint_covariance(P, H_m, H_n, noise_cov) -> np.ndarray:
    """Inverse of the stacked Hessian ``J^T J`` as ``R^-1 R^-T`` from ``J = QR``.

    Same matrix as ``inv(dense_stacked_information(...))`` but without
    squaring the condition number of ``J``.
    """
    J = dense_whitened_jacobian(P, H_m, H_n, noise_cov)
    R_inv = np.linalg.inv(np.linalg.qr(J, mode="r"))
    return R_inv @ R_inv.T


def random_spd(rng: np.random.Generator, n: int, jitter: float = 0.1) -> np.ndarray:
    G = rng.standard_normal((n, n))
    return G @ G.T / n + jitter * np.eye(n)


def random_psd_of_rank(rng: np.random.Generator, n: int, rank: int) -> np.ndarray:
    G = rng.standard_normal((rank, n))
    return G.T @ G


def random_landmark_arrays(rng: np.random.Generator, m: int, k: int, sigma: float | None = None):
    """Random ``(P, H_x, H_f, residual, sigma)`` for a landmark system."""
    if sigma is None:
        sigma = float(10.0 ** rng.uniform(-2, 0))
    P = random_spd(rng, m)
    H_x = rng.standard_normal((k, m))
    H_f = rng.standard_normal((k, 3))
    residual = sigma * rng.standard_normal(k)
    return P, H_x, H_f, residual, sigma


def random_relpose_arrays(rng: np.random.Generator, num_landmarks: int, k: int | None = None):
    """Random ``(residual, H_f, H_T, R, P)``; each row observes one landmark."""
    l = num_landmarks
    if k is None:
        k = 2 * l
    owner = np.arange(k) % l
    H_f = np.zeros((k, 3 * l))
    for row, j in enumerate(owner):
        H_f[row, 3 * j : 3 * j + 3] = rng.standard_normal(3)
    H_T = rng.standard_normal((k, 6))
    R = np.diag(10.0 ** rng.uniform(-2, 0, k))
    P = random_spd(rng, 3 * l)
    residual = rng.standard_normal(k) * np.sqrt(np.diag(R))
    return residual, H_f, H_T, R, P


def random_pose(rng: np.random.Generator, rotation_scale: float = np.pi) -> Pose:
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, rotation_scale)
    return Pose(so3_exp(angle * axis), rng.uniform(-5, 5, 3))


def random_visible_landmark(rng: np.random.Generator, pose: Pose, depth=(0.5, 20.0)) -> Landmark:
    """A landmark at a random depth inside a 90 degree cone of ``pose``."""
    d = rng.uniform(*depth)
    xy = rng.uniform(-1.0, 1.0, 2) * d
    pc = np.array([xy[0], xy[1], d])
    return Landmark(pose.rotation @ pc + pose.translation)


def projection_by_transform(pose: Pose, lm: Landmark) -> np.ndarray:
    """Second projection path: homogeneous inverse transform, then divide."""
    T = np.eye(4)
    T[:3, :3] = pose.rotation
    T[:3, 3] = pose.translation
    ph = np.linalg.inv(T) @ np.append(lm.position, 1.0)
    return ph[:2] / ph[2]


def finite_difference_jacobians(pose: Pose, lm: Landmark, step: float = 1e-6):
    """Central differences of ``project`` under the boxplus / additive conventions.

    The pose perturbation is applied as ``R Exp(dtheta)``, ``t + R dt``
    directly here (no re-orthonormalization) so this path does not call
    ``boxplus_pose``.
    """
    H_pose = np.empty((2, 6))
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        plus = Pose(pose.rotation @ so3_exp(e[:3]), pose.translation + pose.rotation @ e[3:])
        minus = Pose(pose.rotation @ so3_exp(-e[:3]), pose.translation - pose.rotation @ e[3:])
        H_pose[:, i] = (project(plus, lm) - project(minus, lm)) / (2 * step)
    H_lm = np.empty((2, 3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        H_lm[:, i] = (project(pose, Landmark(lm.position + e)) - project(pose, Landmark(lm.position - e))) / (2 * step)
    return H_pose, H_lm


def column_pivoted_qr_rank(M, rel_tol: float = 1e-9) -> int:
    """Rank from |diag(R)| of a column-pivoted QR, relative threshold."""
    M = np.asarray(M, dtype=float)
    _, R, _ = sla.qr(M, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return 0
    return int(np.count_nonzero(d > rel_tol * d[0]))
