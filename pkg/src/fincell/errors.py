"""Exception hierarchy for fincell.

Every error carries a human-readable message; solver errors additionally carry
the diagnostic payload named in their docstring so callers can react
programmatically (remesh on deformation failure, report Newton history, ...).
"""

from __future__ import annotations


class FincellError(Exception):
    """Base class for all package errors."""


# --- geometry / mesh ---------------------------------------------------------


class GeometryError(FincellError):
    """Invalid geometric input (self-intersecting fin, fin outside cell/box, ...)."""


class MeshError(FincellError):
    """Mesh generation or validation failure."""


class DeformationError(FincellError):
    """Mesh deformation produced an inverted or degenerate element.

    Attributes
    ----------
    element : int
        Index of the worst offending triangle.
    min_det : float
        Most negative (or smallest) Jacobian determinant encountered.
    """

    def __init__(self, message: str, element: int = -1, min_det: float = float("nan")):
        super().__init__(message)
        self.element = element
        self.min_det = min_det


# --- FEM core ----------------------------------------------------------------


class AssemblyError(FincellError):
    """Inconsistent assembly input (field/space mismatch, bad dof map, ...)."""


class LinearSolveError(FincellError):
    """Sparse direct solve failed (structural/numerical singularity).

    Attributes
    ----------
    pivot : int
        Zero-pivot location reported by the factorization, -1 if unknown.
    """

    def __init__(self, message: str, pivot: int = -1):
        super().__init__(message)
        self.pivot = pivot


class NonConvergence(FincellError):
    """Newton iteration failed to converge.

    Attributes
    ----------
    history : list[float]
        Residual norms per iteration.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


# --- energy ------------------------------------------------------------------


class DegenerateThermalState(FincellError):
    """Volume-averaged temperature mode is non-positive; decay rate undefined."""


class ComplexRootError(FincellError):
    """Decay-rate quadratic has no real root (discriminant < 0).

    Attributes
    ----------
    a, F : float
        Coefficients of the root expression at failure.
    """

    def __init__(self, message: str, a: float = float("nan"), F: float = float("nan")):
        super().__init__(message)
        self.a = a
        self.F = F


class NonDecayingError(FincellError):
    """Array heat-transfer sum requested for a non-decaying mode (lambda > 0)."""


# --- optimizer ---------------------------------------------------------------


class QPError(FincellError):
    """Quadratic-subproblem solve failed (incompatible bounds, non-SPD operator, ...)."""


class OptimizationStalled(FincellError):
    """Trust region collapsed or repeated deformation failures; no progress possible.

    Attributes
    ----------
    history : list
        Iteration records accumulated before the stall.
    """

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


# --- array DNS / fitting ------------------------------------------------------


class FitError(FincellError):
    """Exponential decay fit failed (non-positive excess temperature, bad window, low R^2)."""


# --- interface misuse ----------------------------------------------------------


class UsageError(FincellError):
    """API misuse: wrong state pairing, stale mesh, unknown config key, ..."""


class ConfigError(UsageError):
    """Invalid run configuration (unknown key, type error, missing required value)."""
