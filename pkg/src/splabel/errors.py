"""Exception hierarchy shared by all toolkit modules.

Two families matter to callers: ``InputError`` covers malformed or missing
inputs (CLI exit code 2, HTTP 422) and ``ContractViolation`` covers misuse
of the stage protocol (CLI exit code 3, HTTP 409).
"""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class InputError(ToolkitError):
    """A file, value, or manifest entry is unusable as given."""


class ContractViolation(ToolkitError):
    """An operation was invoked outside its declared protocol."""


class MalformedHeader(InputError):
    """Array or image header bytes do not follow the interchange layout."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class UnsupportedDtype(InputError):
    """Array dtype is outside the float32/uint8/int32 whitelist."""

    def __init__(self, descr: str, offset: int):
        super().__init__(f"unsupported dtype {descr!r} (byte offset {offset})")
        self.descr = descr
        self.offset = offset


class TruncatedPayload(InputError):
    """Fewer payload bytes than the declared shape requires."""

    def __init__(self, expected: int, got: int, offset: int):
        super().__init__(
            f"payload truncated: expected {expected} bytes, got {got} "
            f"(byte offset {offset})"
        )
        self.offset = offset


class UnsupportedMaxval(InputError):
    """PPM maxval other than 255."""


class IoFailure(InputError):
    """The operating system refused a read or write."""


class MissingInput(InputError):
    """A manifest role or file required by a stage is absent."""


class NegativeLabel(InputError):
    """An ingested label map contains negative labels."""


class DimensionMismatch(ContractViolation):
    """Vectors of unequal dimension were combined."""


class ShapeMismatch(ContractViolation):
    """Arrays with inconsistent extents were combined."""


class LabelOutOfRange(ContractViolation):
    """A partition label falls outside [0, k)."""


class StageDependencyViolation(ContractViolation):
    """A pipeline stage ran before the stages it depends on."""
