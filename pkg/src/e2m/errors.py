"""Exception types shared across the package.

The CLI maps these onto exit codes: DomainError -> 2, InternalError -> 3.
"""


class DomainError(ValueError):
    """Invalid input data or a request outside the supported domain."""


class InternalError(RuntimeError):
    """An internal invariant was violated (indicates an implementation bug)."""
