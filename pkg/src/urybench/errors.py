"""Shared exception types.

UsageError maps to CLI exit code 2, PreconditionError to exit code 3.
"""


class UsageError(ValueError):
    """Malformed input: bad syntax, arity mismatch, value out of range."""


class PreconditionError(ValueError):
    """Structurally valid input that violates an operation precondition."""
