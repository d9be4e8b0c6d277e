"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries a short
machine-readable ``reason``.
"""


class AuctionError(Exception):
    reason = "error"


class DomainError(AuctionError, ValueError):
    reason = "domain"


class InfeasibleError(AuctionError, ValueError):
    reason = "infeasible"


class SingularityError(DomainError):
    reason = "singular-density"


class SizeError(AuctionError, ValueError):
    reason = "too-large"


class ConfigurationError(AuctionError, ValueError):
    reason = "configuration"


class PrecisionError(AuctionError, ArithmeticError):
    reason = "precision"


class ContractWarning(UserWarning):
    """A caller-supplied function violates a documented contract."""
