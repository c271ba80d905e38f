"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration / input-file problems
exit with 1, broken internal contracts with 2.
"""


class MLSRError(Exception):
    """Base class for all package-specific errors."""


class ContractViolation(MLSRError, ValueError):
    """An operation was called with arguments that break its contract
    (shape mismatch, out-of-bounds patch, degenerate size, ...)."""


class ConfigError(MLSRError, ValueError):
    """A configuration value or combination violates a documented constraint."""


class FormatError(MLSRError, ValueError):
    """A checkpoint or kernel file does not match its documented format."""


class DiagnosticError(MLSRError, RuntimeError):
    """A verification harness hit a state it cannot evaluate
    (e.g. a non-finite loss during a gradient check)."""
