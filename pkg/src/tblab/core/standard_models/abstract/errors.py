"""An ABSTRACT DATA MODEL, TBLabError, and the error families raised by tblab.

Every error carries the process ``exit_code`` the CLI reports when it
escapes a command: 2 for configuration errors, 3 for data errors and 4 for
numeric failures.
"""

from typing import Any, ClassVar


class TBLabError(Exception):
    """Base error of the package."""

    exit_code: ClassVar[int] = 1

    def __init__(self, original: str | Exception | None = None):
        self.original = original
        super().__init__(str(original))


class ConfigError(TBLabError):
    """Invalid or inconsistent configuration."""

    exit_code: ClassVar[int] = 2


class DataError(TBLabError):
    """Invalid input data, corpus or model input."""

    exit_code: ClassVar[int] = 3


class NumericError(TBLabError):
    """A numerical computation failed or did not converge."""

    exit_code: ClassVar[int] = 4


class InvalidToken(DataError):
    """A token id is outside the vocabulary."""


class TraceMismatch(DataError):
    """A trace does not belong to the parameters it is used with."""


class InvalidMask(DataError):
    """A mask plan suppresses the output position or names unknown layers."""


class WorldExhausted(DataError):
    """The attribute world cannot produce the requested number of facts."""


class NoCandidate(DataError):
    """Retrieval found no record satisfying the selection rule."""


class CorpusTooSmall(DataError):
    """The corpus holds too few disjoint records for sampling."""


class IncompleteBatch(DataError):
    """An adversarial batch lacks a sample for a selected loss type."""


class NumericalOverflow(NumericError):
    """A non-finite activation appeared in the forward pass."""

    def __init__(self, layer: int, position: int):
        self.layer = layer
        self.position = position
        super().__init__(
            f"non-finite activation at layer {layer}, position {position}"
        )


class NonFiniteLoss(NumericError):
    """An objective term became NaN or infinite."""

    def __init__(self, message: str, **detail: Any):
        self.detail = detail
        super().__init__(message)


class DegenerateState(NumericError):
    """All residual distances are zero, so the Distance score is undefined."""


class DidNotConverge(NumericError):
    """An optimisation loop ended before reaching its target.

    ``detail`` holds whatever the caller needs to recover: achieved accuracy
    and loss curve for base training, best-so-far snapshot and report for
    editing.
    """

    def __init__(self, message: str, **detail: Any):
        self.detail = detail
        super().__init__(message)
