"""Exception hierarchy shared across the package."""


class FreqPromptError(Exception):
    """Base class for all package errors."""


class DimensionError(FreqPromptError):
    """Array shapes do not satisfy an operation's contract."""


class ParameterError(FreqPromptError):
    """A configuration value is out of its allowed range."""


class ContractError(FreqPromptError):
    """A caller violated a documented precondition."""


class StateError(FreqPromptError):
    """An object was used in an invalid order (e.g. double backward)."""


class NumericError(FreqPromptError):
    """A computation produced NaN/Inf or otherwise left the finite domain."""


class DataFormatError(FreqPromptError):
    """A serialized file violates the on-disk format.

    `offset` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class InsufficientDataError(FreqPromptError):
    """A split request asks for more samples than a class provides."""


class TemplateError(FreqPromptError):
    """A prompt template is malformed (missing the '{}' class slot)."""


class UnknownClassError(FreqPromptError, KeyError):
    """A class id or name is not present in the dataset."""
