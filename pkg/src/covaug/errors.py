"""Exception hierarchy shared by all covaug modules."""

from __future__ import annotations


class CovaugError(Exception):
    """Base class for every error raised by covaug."""


class NumericalError(CovaugError):
    """A matrix failed a numerical precondition."""


class SingularBlock(NumericalError):
    """A diagonal block that must be inverted is singular at tolerance."""

    def __init__(self, block: str, rcond: float):
        self.block = block
        self.rcond = rcond
        super().__init__(f"block {block} is singular (rcond={rcond:.3e})")


class SingularSchur(NumericalError):
    """The Schur complement that must be inverted is singular at tolerance."""

    def __init__(self, rcond: float):
        self.rcond = rcond
        super().__init__(f"Schur complement is singular (rcond={rcond:.3e})")


class SingularPrior(NumericalError):
    """The prior covariance cannot be inverted."""

    def __init__(self, rcond: float | None = None, detail: str = ""):
        self.rcond = rcond
        msg = "prior covariance is not invertible"
        if rcond is not None:
            msg += f" (rcond={rcond:.3e})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NotSymmetric(NumericalError):
    def __init__(self, asymmetry: float):
        self.asymmetry = asymmetry
        super().__init__(f"matrix is not symmetric (max |S - S^T| = {asymmetry:.3e})")


class IndefiniteMatrix(NumericalError):
    def __init__(self, value: float):
        self.value = value
        super().__init__(f"matrix is indefinite (offending pivot/entry {value:.3e})")


class UnderObserved(NumericalError):
    """A landmark's Jacobian does not have full column rank."""

    def __init__(self, rank: int, index: int | None = None):
        self.rank = rank
        self.index = index
        where = "" if index is None else f" {index}"
        super().__init__(f"landmark{where} is under-observed (rank {rank} < 3)")


class BehindCamera(CovaugError):
    def __init__(self, depth: float):
        self.depth = depth
        super().__init__(f"point depth {depth:.3e} is below the minimum depth")


class DivergedTriangulation(CovaugError):
    pass


class InsufficientViews(CovaugError):
    def __init__(self, views: int, required: int = 2):
        self.views = views
        self.required = required
        super().__init__(f"landmark seen in {views} view(s), {required} required")


class ConfigError(CovaugError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")
