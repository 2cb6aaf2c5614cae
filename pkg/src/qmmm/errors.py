"""Exception hierarchy shared by the model, solver and verification layers."""


class QmmmError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(QmmmError, ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class NonFiniteError(QmmmError, ArithmeticError):
    """An integrand produced NaN on the support of the jump measure."""


class NonIntegrableError(QmmmError, ArithmeticError):
    """An integral against the jump measure diverges."""


class QuadratureError(QmmmError, ArithmeticError):
    """Adaptive quadrature did not reach its tolerance."""


class NoSignChangeError(QmmmError):
    """The root function keeps one sign on the admissible set."""


class MaxIterError(QmmmError):
    """An iterative solver exhausted its iteration budget."""


class InfeasibleError(QmmmError):
    """The martingale constraint admits no strictly positive tilt."""


class SingularSigmaError(QmmmError):
    """The drift is not in the range of the jump-diffusion covariance."""


class InsufficientRowsError(QmmmError):
    """Too few successful sweep rows for a convergence verdict."""


class ParseError(QmmmError, ValueError):
    """A model or result file is malformed."""


class InsufficientPathsError(QmmmError, ValueError):
    """A Monte Carlo check needs at least two paths for a standard error."""
