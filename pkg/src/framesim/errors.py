"""Exception types shared across the package."""


class FrameSimError(Exception):
    """Base class for all framesim errors."""


class ValidationError(FrameSimError, ValueError):
    """Raised for invalid inputs, grids, spaces, or configuration values."""


class SpaceMismatchError(ValidationError):
    """Raised when two states that must share a factor space do not."""


class PropagationError(FrameSimError, RuntimeError):
    """Raised when a simulation run violates one of its runtime contracts."""
