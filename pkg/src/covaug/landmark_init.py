"""Landmark covariance initialization through a nullspace split.

A linearized landmark system ``dz = H_x dx + H_f df + w`` with isotropic
noise ``w ~ N(0, sigma^2 I)`` is rotated by the QR basis of ``H_f``::

    [z_c]   [H_cx  H_cf] [dx]   [w_c]
    [z_o] = [H_o   0   ] [df] + [w_o]

The orthogonal rotation keeps the noise isotropic, so both projected
noise covariances are ``sigma^2 I``. The ``z_c`` rows fix the landmark;
the ``z_o`` rows only constrain the existing state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from covaug.errors import UnderObserved
from covaug.infoaug import (
    GaussianPrior,
    InformationBlocks,
    information_from_parts,
    prior_information,
)
from covaug.matblocks import as_matrix, qr_column_null_split, smw_inverse, symmetrize

LANDMARK_DIM = 3


@dataclass(frozen=True)
class LinearizedLandmarkSystem:
    residual: np.ndarray
    H_x: np.ndarray
    H_f: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        residual = np.array(self.residual, dtype=float).reshape(-1)
        H_x = as_matrix(self.H_x, "H_x")
        H_f = as_matrix(self.H_f, "H_f")
        k = residual.size
        if k < 1:
            raise ValueError("system must have at least one observation row")
        if H_x.shape[0] != k:
            raise ValueError(f"H_x must have {k} rows, got {H_x.shape[0]}")
        if H_f.shape != (k, LANDMARK_DIM):
            raise ValueError(f"H_f must be {k}x3, got {H_f.shape}")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma > 0):
            raise ValueError("noise_sigma must be positive")
        object.__setattr__(self, "residual", residual)
        object.__setattr__(self, "H_x", H_x)
        object.__setattr__(self, "H_f", H_f)
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @property
    def k(self) -> int:
        return self.residual.size

    @property
    def m(self) -> int:
        return self.H_x.shape[1]

    @property
    def under_observed(self) -> bool:
        return self.k < LANDMARK_DIM

    @property
    def noise_cov(self) -> np.ndarray:
        return self.noise_sigma**2 * np.eye(self.k)


@dataclass(frozen=True)
class NullspaceSplit:
    z_c: np.ndarray
    z_o: np.ndarray
    H_cx: np.ndarray
    H_cf: np.ndarray
    H_o: np.ndarray
    noise_sigma: float
    rank: int
    Q_c: np.ndarray = field(repr=False)
    Q_o: np.ndarray = field(repr=False)

    @property
    def m(self) -> int:
        return self.H_cx.shape[1]

    @property
    def sigma_c(self) -> np.ndarray:
        return self.noise_sigma**2 * np.eye(self.rank)

    @property
    def sigma_o(self) -> np.ndarray:
        return self.noise_sigma**2 * np.eye(self.z_o.size)

    @property
    def under_observed(self) -> bool:
        return self.rank < LANDMARK_DIM

    def padded(self, extra: int) -> "NullspaceSplit":
        """The same split with ``extra`` zero state columns appended."""
        pad = lambda H: np.hstack([H, np.zeros((H.shape[0], extra))])  # noqa: E731
        return NullspaceSplit(
            self.z_c, self.z_o, pad(self.H_cx), self.H_cf, pad(self.H_o),
            self.noise_sigma, self.rank, self.Q_c, self.Q_o,
        )


@dataclass(frozen=True)
class AugmentedCovariance:
    state_cov: np.ndarray
    cross_cov: np.ndarray
    landmark_cov: np.ndarray

    def assemble(self) -> np.ndarray:
        return np.block([[self.state_cov, self.cross_cov], [self.cross_cov.T, self.landmark_cov]])

    @classmethod
    def from_dense(cls, cov: np.ndarray, m: int) -> "AugmentedCovariance":
        return cls(cov[:m, :m], cov[:m, m:], cov[m:, m:])


def nullspace_project(sys: LinearizedLandmarkSystem) -> NullspaceSplit:
    Q_c, Q_o, T_c = qr_column_null_split(sys.H_f)
    return NullspaceSplit(
        z_c=Q_c.T @ sys.residual,
        z_o=Q_o.T @ sys.residual,
        H_cx=Q_c.T @ sys.H_x,
        H_cf=T_c,
        H_o=Q_o.T @ sys.H_x,
        noise_sigma=sys.noise_sigma,
        rank=Q_c.shape[1],
        Q_c=Q_c,
        Q_o=Q_o,
    )


def _require_observed(split: NullspaceSplit, index: int | None = None) -> None:
    if split.under_observed:
        raise UnderObserved(split.rank, index)


def _check_prior(split: NullspaceSplit, P: np.ndarray) -> None:
    if P.shape != (split.m, split.m):
        raise ValueError(f"prior covariance must be {split.m}x{split.m}, got {P.shape}")


def assemble_landmark_blocks(split: NullspaceSplit, prior_cov) -> InformationBlocks:
    """Information blocks of the projected system; equal to the unprojected ones."""
    _require_observed(split)
    P = as_matrix(prior_cov, "prior_cov")
    _check_prior(split, P)
    H_m = np.vstack([split.H_cx, split.H_o])
    H_n = np.vstack([split.H_cf, np.zeros((split.z_o.size, LANDMARK_DIM))])
    noise_info = np.full(H_m.shape[0], split.noise_sigma**-2)
    return information_from_parts(prior_information(P), H_m, H_n, noise_info)


def _hcf_inverse_times(split: NullspaceSplit, M: np.ndarray) -> np.ndarray:
    return sla.solve_triangular(split.H_cf, M, lower=False, check_finite=False)


def landmark_marginal_covariance_closed_form(split: NullspaceSplit, prior_cov) -> np.ndarray:
    """``H_cf^-1 S_c H_cf^-T + H_cf^-1 H_cx W H_cx^T H_cf^-T``.

    ``W = (P^-1 + H_o^T S_o^-1 H_o)^-1`` is evaluated in Woodbury form so
    that ``P`` is never inverted.
    """
    _require_observed(split)
    P = as_matrix(prior_cov, "prior_cov")
    _check_prior(split, P)
    W = smw_inverse(P, split.H_o, split.sigma_o)
    G = _hcf_inverse_times(split, split.H_cx)
    Hcf_inv = _hcf_inverse_times(split, np.eye(LANDMARK_DIM))
    cov = split.noise_sigma**2 * Hcf_inv @ Hcf_inv.T + G @ W @ G.T
    return symmetrize(cov)


def augment_one_step(split: NullspaceSplit, prior: GaussianPrior) -> AugmentedCovariance:
    """Joint covariance of ``(dx, df)`` by block inversion of the full Hessian.

    The inversion pivots on the landmark block ``D``. Its Schur complement
    ``A - B D^-1 C`` reduces exactly to ``P^-1 + H_o^T S_o^-1 H_o``, so it is
    inverted in Woodbury form as ``W`` rather than formed by subtraction,
    which cancels badly when ``sigma`` is small. With ``B D^-1 = H_cx^T H_cf^-T``
    the blocks are ``W``, ``-W G^T`` and ``H_cf^-1 S_c H_cf^-T + G W G^T``
    where ``G = H_cf^-1 H_cx``.
    """
    _require_observed(split)
    P = prior.covariance
    _check_prior(split, P)
    prior_information(P)  # rejects singular priors
    W = smw_inverse(P, split.H_o, split.sigma_o)
    G = _hcf_inverse_times(split, split.H_cx)
    Hcf_inv = _hcf_inverse_times(split, np.eye(LANDMARK_DIM))
    cross = -W @ G.T
    lmk = symmetrize(split.noise_sigma**2 * Hcf_inv @ Hcf_inv.T + G @ W @ G.T)
    return AugmentedCovariance(W, cross, lmk)


def augment_with_landmark_rows(split: NullspaceSplit, P: np.ndarray) -> np.ndarray:
    """Append the landmark using only the ``z_c`` rows; returns the (m+3) covariance.

    With ``H_cf`` invertible the landmark is ``df = H_cf^-1 (z_c - H_cx dx - w_c)``,
    giving ``cov(dx, df) = -P H_cx^T H_cf^-T`` and
    ``cov(df) = H_cf^-1 (H_cx P H_cx^T + S_c) H_cf^-T``.
    """
    G = _hcf_inverse_times(split, split.H_cx)
    Hcf_inv = _hcf_inverse_times(split, np.eye(LANDMARK_DIM))
    cross = -P @ G.T
    lmk = G @ P @ G.T + split.noise_sigma**2 * Hcf_inv @ Hcf_inv.T
    return symmetrize(np.block([[P, cross], [cross.T, lmk]]))


def ekf_covariance_update(P: np.ndarray, H: np.ndarray, noise_cov: np.ndarray) -> np.ndarray:
    """Joseph-form covariance update; no-op for an empty measurement."""
    if H.shape[0] == 0:
        return P.copy()
    PHt = P @ H.T
    S = symmetrize(H @ PHt + noise_cov)
    K = sla.cho_solve(sla.cho_factor(S, check_finite=False), PHt.T).T
    I_KH = np.eye(P.shape[0]) - K @ H
    return symmetrize(I_KH @ P @ I_KH.T + K @ noise_cov @ K.T)


def augment_two_step(split: NullspaceSplit, prior: GaussianPrior) -> AugmentedCovariance:
    """Augment with the ``z_c`` rows, then EKF-update with the ``z_o`` rows."""
    _require_observed(split)
    P = prior.covariance
    _check_prior(split, P)
    augmented = augment_with_landmark_rows(split, P)
    H = np.hstack([split.H_o, np.zeros((split.z_o.size, LANDMARK_DIM))])
    updated = ekf_covariance_update(augmented, H, split.sigma_o)
    return AugmentedCovariance.from_dense(updated, split.m)


def augment_multiple(splits: Sequence[NullspaceSplit], prior: GaussianPrior) -> AugmentedCovariance:
    """Augment several landmarks at once.

    Each split's state Jacobians refer to the prior's ``m`` parameters only;
    landmark noises are mutually independent. The result covers
    ``m + 3 * len(splits)`` parameters, landmarks in input order.
    """
    m = prior.dim
    if not splits:
        return AugmentedCovariance(prior.covariance.copy(), np.zeros((m, 0)), np.zeros((0, 0)))
    for i, split in enumerate(splits):
        _require_observed(split, i)
        _check_prior(split, prior.covariance)

    prior_information(prior.covariance)  # rejects singular priors
    # The stacked landmark block is block diagonal, so the state Schur
    # complement is P^-1 plus every split's nullspace information.
    H_o = np.vstack([split.H_o for split in splits])
    noise_o = np.concatenate([np.full(split.z_o.size, split.noise_sigma**2) for split in splits])
    W = smw_inverse(prior.covariance, H_o, np.diag(noise_o))
    G = np.vstack([_hcf_inverse_times(split, split.H_cx) for split in splits])
    lmk = G @ W @ G.T
    for i, split in enumerate(splits):
        rows = slice(LANDMARK_DIM * i, LANDMARK_DIM * (i + 1))
        Hcf_inv = _hcf_inverse_times(split, np.eye(LANDMARK_DIM))
        lmk[rows, rows] += split.noise_sigma**2 * Hcf_inv @ Hcf_inv.T
    return AugmentedCovariance(W, -W @ G.T, symmetrize(lmk))


def augment_sequential(splits: Sequence[NullspaceSplit], prior: GaussianPrior) -> AugmentedCovariance:
    """One landmark at a time, each augmented result becoming the next prior."""
    m = prior.dim
    P = prior.covariance
    for i, split in enumerate(splits):
        _require_observed(split, i)
        step = augment_one_step(split.padded(P.shape[0] - m), GaussianPrior.zero_mean(P))
        P = step.assemble()
    return AugmentedCovariance.from_dense(P, m)
