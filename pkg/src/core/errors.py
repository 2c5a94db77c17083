"""
Errors - exception hierarchy shared by every TrustSAS module.

Verification predicates return bool; only malformed encodings raise.
"""


class TrustSASError(Exception):
    """Base class for all library errors"""


class ParameterError(TrustSASError, ValueError):
    """Out-of-range or inconsistent parameters"""


class ContractViolation(TrustSASError, TypeError):
    """Operands violate a call contract (for example, elements of different fields)"""


class InsufficientSharesError(TrustSASError):
    pass


class InterpolationError(TrustSASError):
    pass


class DecodeError(TrustSASError, ValueError):
    """Malformed wire encoding. Distinct from a verification returning False."""


class JoinError(TrustSASError):
    pass


class DKGFailure(TrustSASError):
    pass


class PIRError(TrustSASError):
    pass


class ChainError(TrustSASError):
    pass


class ForkError(ChainError):
    """Block does not extend the current head"""


class QuorumError(ChainError):
    """Commit proof does not reach 2f+1 validators"""


class TransactionError(ChainError):
    pass


class ConfigError(TrustSASError, ValueError):
    pass


class PrivacyViolation(TrustSASError):
    """A DB-side record would expose a true SU identity"""


class InvariantViolation(TrustSASError, AssertionError):
    pass
