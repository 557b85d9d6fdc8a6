"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid parameters or configuration."""


class DomainError(ValueError):
    """Argument outside the domain of a function."""


class ShapeError(ValueError):
    """Array length or shape mismatch."""
