"""Exception types shared across the package."""


class MedGradError(Exception):
    """Base class for package errors."""


class DimensionError(MedGradError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(MedGradError, ValueError):
    """Input is mathematically degenerate (e.g. a zero-norm vector)."""


class ContractError(MedGradError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(MedGradError, ArithmeticError):
    """A NaN or Inf appeared in a forward or backward pass."""


class VocabularyError(MedGradError, ValueError):
    """A token or token id is not in the vocabulary."""


class CaptionParseError(MedGradError, ValueError):
    """Caption is not in ``class, criterion, ...`` form."""


class CheckpointFormatError(MedGradError, ValueError):
    """Checkpoint bytes are malformed; the message names the offending field."""


class ConfigError(MedGradError, ValueError):
    """Run configuration is invalid."""


class DataFormatError(MedGradError, ValueError):
    """A dataset file (image, mask, manifest) could not be parsed."""
