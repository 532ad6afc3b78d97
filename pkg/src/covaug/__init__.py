"""Marginal covariance and information of parameters introduced by new observations."""

from covaug.errors import (
    BehindCamera,
    ConfigError,
    CovaugError,
    DivergedTriangulation,
    IndefiniteMatrix,
    InsufficientViews,
    NotSymmetric,
    SingularBlock,
    SingularPrior,
    SingularSchur,
    UnderObserved,
)

__version__ = "0.1.0"
