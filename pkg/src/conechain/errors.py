"""Exception types shared across the package."""


class ConeChainError(Exception):
    """Base class for all package errors."""


class DomainError(ConeChainError, ValueError):
    """Input outside the domain of an operation (e.g. not in the cone)."""


class CertificationError(ConeChainError):
    """A contraction or approximation certificate could not be established."""


class UnderflowError(ConeChainError, ArithmeticError):
    """A rescaled product collapsed to zero or became non-finite."""


class CalibrationError(CertificationError):
    """No admissible cone parameter was found."""


class WindowError(ConeChainError, ValueError):
    """Quadrature window too narrow for the requested tail tolerance."""
