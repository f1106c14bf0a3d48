"""Exception types raised across the package."""


class ReebMagError(Exception):
    """Base class for all package errors."""


class DomainError(ReebMagError, ValueError):
    """A point (or finite-difference stencil) leaves its chart's domain."""


class DegeneracyError(ReebMagError):
    """A linear system that should be nonsingular is numerically singular."""


class InputError(ReebMagError, ValueError):
    """Malformed input to an evaluator (too few samples, open loop, ...)."""


class IntegrationError(ReebMagError):
    """The adaptive integrator could not make progress."""


class VerificationError(ReebMagError):
    """A mapped orbit failed re-verification."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class OptimizationError(ReebMagError):
    """The minimax optimizer diverged."""


class ConfigError(ReebMagError, ValueError):
    """Invalid experiment configuration."""
