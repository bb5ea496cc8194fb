"""Exception types shared by the solver modules."""

from __future__ import annotations


class SingularSystemError(ValueError):
    """A linear system is (numerically) singular."""


class NonConvergenceError(RuntimeError):
    """An iterative procedure stopped without meeting its tolerance.

    Carries the last residual norm in ``residual``.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class DegenerateGeometryError(ValueError):
    """The membrane touches (or crosses) the ground plate, so the
    mapped elliptic problem degenerates."""


class NoSteadyStateError(NonConvergenceError):
    """Newton iteration for a steady state failed to converge."""


class GridTooCoarseError(ValueError):
    """The grid has too few nodes for the requested stencil."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed or invalid."""
