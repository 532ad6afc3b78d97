"""Dense small-matrix kernels.

2x2 block inversion, Schur complements, QR with column-space/nullspace
separation, and a rank-revealing diagonally pivoted LDL^T.

Every routine is pure: inputs are never modified and results are fresh
arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from covaug.errors import IndefiniteMatrix, NotSymmetric, SingularBlock, SingularSchur

EPS = np.finfo(float).eps

# Reciprocal condition estimates below this value count as singular.
RCOND_THRESHOLD = 1e-12

# Default relative allowance for negative pivots / dropped entries in LDL^T.
PSD_TOL = 1e-9

# Relative asymmetry accepted by ``pivoted_ldlt``.
SYMMETRY_TOL = 1e-9


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array (copying)."""
    M = np.array(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name}: non-finite entries")
    return M


def symmetrize(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


def rcond(M: np.ndarray) -> float:
    """LAPACK 1-norm reciprocal condition estimate of a square matrix.

    Empty matrices are perfectly conditioned; the zero matrix has rcond 0.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n == 0:
        return 1.0
    anorm = np.abs(M).sum(axis=0).max()
    if anorm == 0.0:
        return 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv, info = lapack.dgetrf(M)
    if info > 0:
        return 0.0
    rc, info = lapack.dgecon(lu, anorm, norm="1")
    return float(rc)


def _checked_solve(M: np.ndarray, rhs: np.ndarray, on_singular) -> np.ndarray:
    rc = rcond(M)
    if rc < RCOND_THRESHOLD:
        raise on_singular(rc)
    if M.shape[0] == 0:
        return np.zeros((0, rhs.shape[1]))
    return sla.solve(M, rhs, check_finite=False)


@dataclass(frozen=True)
class BlockMatrix2x2:
    """``[[A, B], [C, D]]`` with A m x m, B m x n, C n x m, D n x n."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, as_matrix(getattr(self, name), name))
        m, n = self.m, self.n
        if self.A.shape != (m, m):
            raise ValueError(f"A must be square, got {self.A.shape}")
        if self.D.shape != (n, n):
            raise ValueError(f"D must be square, got {self.D.shape}")
        if self.B.shape != (m, n):
            raise ValueError(f"B must be {m}x{n}, got {self.B.shape}")
        if self.C.shape != (n, m):
            raise ValueError(f"C must be {n}x{m}, got {self.C.shape}")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.D.shape[0]

    def assemble(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.C, self.D]])

    @classmethod
    def from_dense(cls, M, m: int) -> "BlockMatrix2x2":
        """Split square ``M`` after its first ``m`` rows/columns."""
        M = as_matrix(M)
        return cls(M[:m, :m], M[:m, m:], M[m:, :m], M[m:, m:])

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, np.abs(self.assemble()).max(initial=0.0))
        return bool(
            np.abs(self.C - self.B.T).max(initial=0.0) <= tol * scale
            and np.abs(self.A - self.A.T).max(initial=0.0) <= tol * scale
            and np.abs(self.D - self.D.T).max(initial=0.0) <= tol * scale
        )


def block_inverse(blocks: BlockMatrix2x2) -> BlockMatrix2x2:
    """Invert a 2x2 block matrix through the Schur complement of D.

    With ``S = A - B D^-1 C`` the inverse is::

        [[ S^-1,             -S^-1 B D^-1                 ],
         [ -D^-1 C S^-1,      D^-1 + D^-1 C S^-1 B D^-1   ]]

    Raises
    ------
    SingularBlock
        ``D`` fails the reciprocal-condition test.
    SingularSchur
        ``A - B D^-1 C`` fails the reciprocal-condition test.
    """
    A, B, C, D = blocks.A, blocks.B, blocks.C, blocks.D
    m, n = blocks.m, blocks.n
    # D^-1 [C | I]
    DinvC_Dinv = _checked_solve(
        D, np.hstack([C, np.eye(n)]), lambda rc: SingularBlock("D", rc)
    )
    DinvC, Dinv = DinvC_Dinv[:, :m], DinvC_Dinv[:, m:]
    BDinv = B @ Dinv
    S = A - B @ DinvC
    Sinv = _checked_solve(S, np.eye(m), SingularSchur)
    top_right = -Sinv @ BDinv
    bottom_left = -DinvC @ Sinv
    bottom_right = Dinv + DinvC @ Sinv @ BDinv
    return BlockMatrix2x2(Sinv, top_right, bottom_left, bottom_right)


def schur_complement_of_A(blocks: BlockMatrix2x2) -> np.ndarray:
    """Return ``D - C A^-1 B``; raises SingularBlock if A is singular."""
    AinvB = _checked_solve(blocks.A, blocks.B, lambda rc: SingularBlock("A", rc))
    return blocks.D - blocks.C @ AinvB


def default_rank_tol(shape) -> float:
    return max(shape) * EPS


def qr_column_null_split(M, tol: float | None = None):
    """Split the column space and left nullspace of ``M`` (k x c).

    Returns ``(Q_c, Q_o, T_c)`` where ``[Q_c Q_o]`` is orthogonal,
    ``Q_c @ T_c`` reproduces ``M`` and ``Q_o.T @ M`` vanishes. The rank
    ``r = Q_c.shape[1]`` is decided by column-pivoted Householder QR: a
    diagonal entry counts if it exceeds ``tol * |largest diagonal entry|``
    (default ``tol = max(k, c) * eps``).

    For full column rank the unpivoted factorization is used, so ``T_c`` is
    upper triangular with a nonnegative diagonal. Otherwise ``T_c`` is
    upper trapezoidal in the column order chosen by the pivoting.
    """
    M = as_matrix(M, "M")
    k, c = M.shape
    if k < 1 or c < 1:
        raise ValueError(f"M must have at least one row and column, got {M.shape}")
    if tol is None:
        tol = default_rank_tol(M.shape)

    Qp, Rp, piv = sla.qr(M, mode="full", pivoting=True, check_finite=False)
    diag = np.abs(np.diag(Rp))
    top = diag[0] if diag.size else 0.0
    r = int(np.count_nonzero(diag > tol * top)) if top > 0 else 0

    if r == c:
        Q, R = sla.qr(M, mode="full", check_finite=False)
        signs = np.where(np.diag(R) < 0, -1.0, 1.0)
        Q = Q.copy()
        Q[:, :c] *= signs
        T_c = signs[:, None] * R[:c]
        return Q[:, :c], Q[:, c:], T_c

    Q_c = Qp[:, :r]
    T_c = Q_c.T @ M
    return Q_c, Qp[:, r:], T_c


@dataclass(frozen=True)
class LdltFactor:
    """``S = P^T L diag(d) L^T P`` with ``(P S P^T)[i, j] = S[p[i], p[j]]``."""

    permutation: np.ndarray
    L: np.ndarray
    d: np.ndarray
    rank: int

    @property
    def n(self) -> int:
        return self.L.shape[0]

    def permutation_matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.permutation] = 1.0
        return P

    def reconstruct(self) -> np.ndarray:
        LDLt = (self.L * self.d) @ self.L.T
        S = np.empty_like(LDLt)
        S[np.ix_(self.permutation, self.permutation)] = LDLt
        return S


def pivoted_ldlt(
    S,
    rank_tol: float | None = None,
    psd_tol: float = PSD_TOL,
    symmetry_tol: float = SYMMETRY_TOL,
) -> LdltFactor:
    """Rank-revealing LDL^T of a symmetric positive semidefinite matrix.

    At each step the largest remaining diagonal entry is pivoted to the
    front (ties go to the lowest index). Elimination stops once that entry
    is at most ``rank_tol`` times the largest initial diagonal entry
    (default ``rank_tol = n * eps``); the number of completed steps is the
    rank. The untouched trailing block must be negligible: any of its
    entries below ``-psd_tol * scale`` on the diagonal, or above
    ``psd_tol * scale`` in magnitude off it, raises IndefiniteMatrix.
    Trailing diagonal values are clamped at zero and stored in ``d``.
    """
    S = as_matrix(S, "S")
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError(f"S must be square, got {S.shape}")
    if rank_tol is None:
        rank_tol = default_rank_tol(S.shape) if n else 0.0
    scale = np.abs(S).max(initial=0.0)
    asym = np.abs(S - S.T).max(initial=0.0)
    if asym > symmetry_tol * max(scale, 1.0):
        raise NotSymmetric(asym)

    W = symmetrize(S)
    perm = np.arange(n)
    L = np.eye(n)
    d = np.zeros(n)
    top = max(np.diag(W).max(initial=0.0), 0.0)
    threshold = rank_tol * top

    rank = 0
    for i in range(n):
        diag = np.diag(W)[i:]
        j = i + int(np.argmax(diag))  # argmax returns the first maximum
        if W[j, j] <= threshold or W[j, j] <= 0.0:
            break
        if j != i:
            W[[i, j], :] = W[[j, i], :]
            W[:, [i, j]] = W[:, [j, i]]
            L[[i, j], :i] = L[[j, i], :i]
            perm[[i, j]] = perm[[j, i]]
        pivot = W[i, i]
        d[i] = pivot
        col = W[i + 1 :, i] / pivot
        L[i + 1 :, i] = col
        W[i + 1 :, i + 1 :] -= pivot * np.outer(col, col)
        W[i + 1 :, i] = 0.0
        W[i, i + 1 :] = 0.0
        rank += 1

    rest = W[rank:, rank:]
    if rest.size:
        limit = psd_tol * scale
        rest_diag = np.diag(rest)
        if rest_diag.min() < -limit:
            raise IndefiniteMatrix(float(rest_diag.min()))
        off = rest - np.diag(rest_diag)
        if np.abs(off).max(initial=0.0) > limit:
            raise IndefiniteMatrix(float(np.abs(off).max()))
        d[rank:] = np.maximum(rest_diag, 0.0)
    return LdltFactor(perm, L, d, rank)


def square_root_from_ldlt(f: LdltFactor) -> np.ndarray:
    """Return ``R = sqrt(D) L^T P`` restricted to the first ``rank`` rows.

    ``R.T @ R`` reproduces the factored matrix; R is generally not upper
    triangular because of the permutation.
    """
    r = f.rank
    rows = np.sqrt(f.d[:r])[:, None] * f.L[:, :r].T
    R = np.zeros((r, f.n))
    R[:, f.permutation] = rows
    return R


def smw_inverse(P, H, noise_cov) -> np.ndarray:
    """``(P^-1 + H^T N^-1 H)^-1`` evaluated as ``P - P H^T (H P H^T + N)^-1 H P``.

    No inverse of ``P`` is formed. ``H`` may have zero rows, in which case
    ``P`` is returned.
    """
    P = as_matrix(P, "P")
    H = as_matrix(H, "H")
    N = as_matrix(noise_cov, "noise_cov")
    if H.shape[0] == 0:
        return P.copy()
    PHt = P @ H.T
    innovation = symmetrize(H @ PHt + N)
    gain_t = sla.cho_solve(sla.cho_factor(innovation, check_finite=False), PHt.T)
    return symmetrize(P - PHt @ gain_t)
