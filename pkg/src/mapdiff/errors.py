"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ValidationError -> 1, runtime errors
(ContractError, DomainError, TrainingDiverged) -> 2, FormatError -> 3.
"""


class MapdiffError(Exception):
    """Base class for all package errors."""


class ValidationError(MapdiffError):
    """Invalid configuration or command-line input."""


class ContractError(MapdiffError):
    """A caller violated an API precondition (shape, phase, emptiness)."""


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of an operation."""


class FormatError(MapdiffError):
    """A file is malformed, truncated, or inconsistent with its manifest."""


class TrainingDiverged(MapdiffError):
    """Training hit a non-finite loss; usually a learning-rate or scale issue."""
