"""Joint information from a Gaussian prior plus new linear observations.

The existing parameters ``x_m`` carry a prior ``N(mean, P)``, treated as a
pseudo-observation ``y = x_m + v`` (coefficient ``F = [I_m 0]``, never
formed). New observations ``z = H_m x_m + H_n x_n + w`` with diagonal noise
``R`` introduce the parameters ``x_n``. The least-squares Hessian is::

    Lambda = [[P^-1 + H_m^T R^-1 H_m,  H_m^T R^-1 H_n],
              [H_n^T R^-1 H_m,         H_n^T R^-1 H_n]]
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from covaug.errors import SingularPrior
from covaug.matblocks import (
    RCOND_THRESHOLD,
    BlockMatrix2x2,
    as_matrix,
    block_inverse,
    schur_complement_of_A,
    symmetrize,
)


def _as_vector(x, name: str) -> np.ndarray:
    x = np.array(x, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: non-finite entries")
    return x


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = _as_vector(self.mean, "mean")
        cov = as_matrix(self.covariance, "covariance")
        m = mean.size
        if m < 1:
            raise ValueError("prior must have at least one parameter")
        if cov.shape != (m, m):
            raise ValueError(f"covariance must be {m}x{m}, got {cov.shape}")
        scale = max(1.0, np.abs(cov).max())
        if np.abs(cov - cov.T).max() > 1e-9 * scale:
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", symmetrize(cov))

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def zero_mean(cls, covariance) -> "GaussianPrior":
        covariance = np.asarray(covariance, dtype=float)
        return cls(np.zeros(covariance.shape[0]), covariance)


@dataclass(frozen=True)
class LinearObservation:
    """``residual = H_m dx_m + H_n dx_n + w`` with ``w ~ N(0, noise_cov)``."""

    residual: np.ndarray
    H_m: np.ndarray
    H_n: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        residual = _as_vector(self.residual, "residual")
        H_m = as_matrix(self.H_m, "H_m")
        H_n = as_matrix(self.H_n, "H_n")
        R = as_matrix(self.noise_cov, "noise_cov")
        k = residual.size
        if k < 1:
            raise ValueError("observation must have at least one row")
        if H_m.shape[0] != k or H_n.shape[0] != k:
            raise ValueError("H_m and H_n must have one row per residual entry")
        if H_n.shape[1] < 1:
            raise ValueError("observation must involve at least one new parameter")
        if R.shape != (k, k):
            raise ValueError(f"noise_cov must be {k}x{k}, got {R.shape}")
        if np.count_nonzero(R - np.diag(np.diag(R))):
            raise ValueError("noise_cov must be diagonal")
        if np.any(np.diag(R) <= 0):
            raise ValueError("noise_cov diagonal must be strictly positive")
        for name, value in (("residual", residual), ("H_m", H_m), ("H_n", H_n), ("noise_cov", R)):
            object.__setattr__(self, name, value)

    @property
    def k(self) -> int:
        return self.residual.size

    @property
    def m(self) -> int:
        return self.H_m.shape[1]

    @property
    def n(self) -> int:
        return self.H_n.shape[1]

    @property
    def noise_information(self) -> np.ndarray:
        """Diagonal of ``R^-1``."""
        return 1.0 / np.diag(self.noise_cov)


@dataclass(frozen=True)
class InformationBlocks:
    blocks: BlockMatrix2x2

    @property
    def A(self) -> np.ndarray:
        return self.blocks.A

    @property
    def B(self) -> np.ndarray:
        return self.blocks.B

    @property
    def C(self) -> np.ndarray:
        return self.blocks.C

    @property
    def D(self) -> np.ndarray:
        return self.blocks.D

    def assemble(self) -> np.ndarray:
        return self.blocks.assemble()


def prior_information(P) -> np.ndarray:
    """``P^-1`` by Cholesky; raises SingularPrior if P is not positive definite."""
    P = as_matrix(P, "prior covariance")
    try:
        c, lower = sla.cho_factor(P, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularPrior(detail=str(exc)) from None
    anorm = np.abs(P).sum(axis=0).max()
    rc, info = lapack.dpocon(c, anorm, uplo="L" if lower else "U")
    if rc < RCOND_THRESHOLD:
        raise SingularPrior(float(rc))
    return symmetrize(sla.cho_solve((c, lower), np.eye(P.shape[0])))


def information_from_parts(P_inv, H_m, H_n, noise_info) -> InformationBlocks:
    """Blocks from ``P^-1``, Jacobians and the diagonal of ``R^-1``."""
    WH_m = noise_info[:, None] * H_m
    B = WH_m.T @ H_n
    A = symmetrize(P_inv + H_m.T @ WH_m)
    D = symmetrize(H_n.T @ (noise_info[:, None] * H_n))
    return InformationBlocks(BlockMatrix2x2(A, B, B.T.copy(), D))


def assemble_information(prior: GaussianPrior, obs: LinearObservation) -> InformationBlocks:
    """Joint Hessian of the prior pseudo-observation and the new observations."""
    if obs.m != prior.dim:
        raise ValueError(f"H_m has {obs.m} columns, prior has dimension {prior.dim}")
    return information_from_parts(
        prior_information(prior.covariance), obs.H_m, obs.H_n, obs.noise_information
    )


def _symmetrized(inv: BlockMatrix2x2) -> BlockMatrix2x2:
    cross = 0.5 * (inv.B + inv.C.T)
    return BlockMatrix2x2(symmetrize(inv.A), cross, cross.T.copy(), symmetrize(inv.D))


def joint_covariance(info: InformationBlocks) -> BlockMatrix2x2:
    """Covariance of ``[x_m; x_n]`` as blocks of ``Lambda^-1``."""
    return _symmetrized(block_inverse(info.blocks))


def marginal_covariance_new(info: InformationBlocks) -> np.ndarray:
    return joint_covariance(info).D


def marginal_information_new(info: InformationBlocks) -> np.ndarray:
    """Schur complement ``D - C A^-1 B``; may be singular."""
    return symmetrize(schur_complement_of_A(info.blocks))
