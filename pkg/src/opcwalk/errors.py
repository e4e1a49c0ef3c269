"""Exception types raised by the package."""


class OpcwalkError(Exception):
    """Base class for all package errors."""


class ContractViolation(OpcwalkError, ValueError):
    """An operation was called outside its precondition."""


class RejectionCapError(OpcwalkError, RuntimeError):
    """Conditioning on the origin being in the backbone gave up."""


class DeadEndError(OpcwalkError, RuntimeError):
    """A walker reached a horizon backbone site with no backbone successor.

    This is an artifact of the finite horizon: a site whose longest path has
    length exactly ``h`` counts as backbone, its successors do not. A larger
    horizon makes it rarer.
    """

    def __init__(self, site, message=None):
        self.site = site
        super().__init__(message or f"walker stuck at horizon dead end {site}; increase the horizon")


class InsufficientDataError(OpcwalkError, ValueError):
    """Not enough samples for the requested estimate."""


class WindowTooLarge(OpcwalkError, ValueError):
    """Exhaustive enumeration refused because the state space is too big."""


class ConfigError(OpcwalkError, ValueError):
    """Invalid experiment configuration; ``errors`` holds (json pointer, message) pairs."""

    def __init__(self, errors):
        self.errors = list(errors)
        text = "; ".join(f"{ptr}: {msg}" for ptr, msg in self.errors)
        super().__init__(text or "invalid configuration")
