"""Exception hierarchy shared across the toolchain.

The CLI maps these onto distinct process exit codes, so raising the right
class matters more than the message text.
"""


class CellforgeError(Exception):
    """Base class for all toolchain errors."""

    exit_code = 1


class ConfigError(CellforgeError):
    """Bad or missing configuration (schema violations, unknown keys)."""

    exit_code = 2


class InputError(CellforgeError):
    """Missing or unusable inputs: absent files, empty clouds, degenerate data."""

    exit_code = 3


class InvariantError(CellforgeError):
    """A domain invariant was violated (symmetry, dimensions, digests, ...)."""

    exit_code = 4


class DimensionError(InvariantError):
    """Operands have incompatible shapes or lengths."""


class SymmetryError(InvariantError):
    """A field that must be symmetric is not, beyond tolerance."""


class MaterialError(InvariantError):
    """An elastic tensor fails positive-definiteness requirements."""


class SolverError(CellforgeError):
    """Linear solver failure: singular system or non-convergence."""

    exit_code = 5


class ConstraintError(SolverError):
    """The constraint set leaves the system singular or inconsistent."""
