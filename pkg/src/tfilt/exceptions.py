"""Exception types raised by the estimators and oracles."""

from __future__ import annotations

import numpy as np


class ScaleMatrixError(np.linalg.LinAlgError):
    """A scale or covariance matrix that must be inverted is singular."""


class MomentError(ValueError):
    """A requested moment does not exist for the given degrees of freedom."""


class GridError(RuntimeError):
    """The point-mass grid cannot represent the density (leakage, zero evidence)."""


class TableLookupError(KeyError):
    """A scale-factor table does not cover the requested (n, nu, nu') cell."""


class InfeasibleScenarioError(RuntimeError):
    """Rejection sampling exhausted its budget without an accepted trajectory."""
