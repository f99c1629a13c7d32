"""Exception types shared across the package."""


class DeepOedError(Exception):
    """Base class for all package errors."""


class DomainError(DeepOedError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class ShapeError(DeepOedError, ValueError):
    """Mismatched array shapes."""


class NonFiniteError(DeepOedError, FloatingPointError):
    """A numerical computation produced NaN or Inf."""


class SingularError(DeepOedError, ValueError):
    """A weighted normal matrix is rank-deficient."""


class DivergedError(DeepOedError, RuntimeError):
    """An iterative optimization produced a non-finite loss."""


class ExhaustedError(DeepOedError, RuntimeError):
    """No admissible (non-tabu) neighbor exists for the current design."""


class ConfigError(DeepOedError, ValueError):
    """Invalid experiment configuration."""
