"""Exception types shared across the package."""


class WfselectError(Exception):
    """Base class for all package-specific errors."""


class IterationCapError(WfselectError):
    """Alternating-series refinement exhausted its iteration budget.

    Signals numerically degenerate inputs (durations far below the
    practical range of the exact method).
    """


class AttemptsExhaustedError(WfselectError):
    """Rejection sampler exceeded its attempt budget for one draw."""


class DegenerateBankError(WfselectError):
    """Sample bank has zero spread, so no bandwidth can be formed."""


class MissingBankError(WfselectError):
    """A (s, q0) cell required by the prior support has no bank."""


class BankFormatError(WfselectError):
    """Bank file is corrupt, truncated, or from an unknown version."""


class BankKeyMismatchError(BankFormatError):
    """Bank file was built under a different parameter key."""


class ConfigError(WfselectError):
    """Configuration file violated one or more constraints.

    Carries every violation at once so the user can fix them in one pass.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
