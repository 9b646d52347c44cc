"""Exception hierarchy.

Configuration problems (bad layouts, bad flags, unsupported geometry) are
kept apart from numerical failures so the CLI can map them to different
exit codes.
"""


class StokesLabError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(StokesLabError, ValueError):
    """Invalid input detected before any numerical work."""


class UnsupportedGeometryError(ConfigurationError):
    """Geometry outside what a formulation can handle (e.g. slanted Γ2)."""


class NumericalError(StokesLabError, RuntimeError):
    """Failure during a numerical computation."""


class SingularMatrixError(NumericalError):
    """Structurally or numerically singular linear system."""


class IllPosedError(NumericalError):
    """Discrete problem has no unique solution (e.g. empty Γ2)."""
