"""Relative-pose information from landmark observations with uncertain landmarks.

The landmarks play the role of the existing parameters (prior ``P``) and
the 6-dof pose error ``dT = (dtheta, dt)`` is the new parameter. The pose
information is the Schur complement of the landmark block, and its
square root comes from a pivoted LDL^T so rank-deficient information
(degenerate geometry) still yields a usable whitening factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from covaug.errors import SingularPrior
from covaug.infoaug import prior_information
from covaug.matblocks import LdltFactor, as_matrix, pivoted_ldlt, square_root_from_ldlt, symmetrize

POSE_DIM = 6

# Relative allowance for negative LDL^T pivots of the pose information.
PSD_TOL = 1e-9

# Pivots at or below this fraction of the largest pivot are treated as zero.
RANK_TOL = 1e-12


@dataclass(frozen=True)
class RelPoseSystem:
    residual: np.ndarray
    H_f: np.ndarray
    H_T: np.ndarray
    noise_cov: np.ndarray
    landmark_prior_cov: np.ndarray

    def __post_init__(self):
        residual = np.array(self.residual, dtype=float).reshape(-1)
        H_f = as_matrix(self.H_f, "H_f")
        H_T = as_matrix(self.H_T, "H_T")
        R = as_matrix(self.noise_cov, "noise_cov")
        P = as_matrix(self.landmark_prior_cov, "landmark_prior_cov")
        k = residual.size
        if H_f.shape[0] != k or H_T.shape != (k, POSE_DIM):
            raise ValueError("H_f must be k x 3l and H_T k x 6")
        if H_f.shape[1] < 3 or H_f.shape[1] % 3:
            raise ValueError(f"H_f must have 3l columns with l >= 1, got {H_f.shape[1]}")
        if R.shape != (k, k) or np.count_nonzero(R - np.diag(np.diag(R))):
            raise ValueError("noise_cov must be a k x k diagonal matrix")
        if np.any(np.diag(R) <= 0):
            raise ValueError("noise_cov diagonal must be strictly positive")
        if P.shape != (H_f.shape[1],) * 2:
            raise ValueError(f"landmark_prior_cov must be {H_f.shape[1]} square, got {P.shape}")
        for name, value in (
            ("residual", residual), ("H_f", H_f), ("H_T", H_T),
            ("noise_cov", R), ("landmark_prior_cov", symmetrize(P)),
        ):
            object.__setattr__(self, name, value)

    @property
    def num_landmarks(self) -> int:
        return self.H_f.shape[1] // 3

    @property
    def k(self) -> int:
        return self.residual.size


@dataclass(frozen=True)
class SquareRootInfo:
    R: np.ndarray
    rank: int
    info: np.ndarray
    factor: LdltFactor


def _block_diagonal_blocks(A: np.ndarray, size: int) -> list[np.ndarray] | None:
    n = A.shape[0]
    mask = np.ones_like(A, dtype=bool)
    for i in range(0, n, size):
        mask[i : i + size, i : i + size] = False
    if np.any(A[mask]):
        return None
    return [A[i : i + size, i : i + size] for i in range(0, n, size)]


def _spd_solve(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve, blockwise when A is 3x3 block diagonal."""
    blocks = _block_diagonal_blocks(A, 3)
    try:
        if blocks is None:
            return sla.cho_solve(sla.cho_factor(A, check_finite=False), rhs)
        out = np.empty_like(rhs)
        for i, block in enumerate(blocks):
            rows = slice(3 * i, 3 * i + 3)
            out[rows] = sla.cho_solve(sla.cho_factor(block, check_finite=False), rhs[rows])
        return out
    except np.linalg.LinAlgError as exc:
        raise SingularPrior(detail=f"landmark information block: {exc}") from None


def relpose_information(sys: RelPoseSystem) -> np.ndarray:
    """``Lambda_T = D - C A^-1 B`` with the landmarks as the existing parameters."""
    noise_info = 1.0 / np.diag(sys.noise_cov)
    W_f = noise_info[:, None] * sys.H_f
    A = symmetrize(prior_information(sys.landmark_prior_cov) + sys.H_f.T @ W_f)
    B = W_f.T @ sys.H_T
    D = sys.H_T.T @ (noise_info[:, None] * sys.H_T)
    return symmetrize(D - B.T @ _spd_solve(A, B))


def square_root_information(
    info, rank_tol: float = RANK_TOL, psd_tol: float = PSD_TOL
) -> SquareRootInfo:
    """Whitening factor ``R`` (rank x 6) with ``R^T R = info``.

    Small negative pivots produced by roundoff are clamped to zero; pivots
    below ``-psd_tol`` times the largest raise IndefiniteMatrix.
    """
    info = symmetrize(as_matrix(info, "info"))
    factor = pivoted_ldlt(info, rank_tol=rank_tol, psd_tol=psd_tol)
    return SquareRootInfo(square_root_from_ldlt(factor), factor.rank, info, factor)


def whiten(sri: SquareRootInfo, residual) -> np.ndarray:
    residual = np.asarray(residual, dtype=float).reshape(-1)
    return sri.R @ residual


def whitening_error(sri: SquareRootInfo, residual) -> float:
    """``| |R e|^2 - e^T info e |`` relative to ``|info|_2 |e|^2``.

    The scale-relative form stays meaningful when ``e`` lies (nearly) in
    the nullspace of a rank-deficient ``info``.
    """
    e = np.asarray(residual, dtype=float).reshape(-1)
    white = whiten(sri, e)
    scale = np.linalg.norm(sri.info, 2) * (e @ e)
    diff = abs(float(white @ white) - float(e @ sri.info @ e))
    return diff / scale if scale > 0 else diff
