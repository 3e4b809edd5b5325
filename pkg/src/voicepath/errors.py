"""Exception hierarchy shared by every stage of the pipeline."""


class VoicepathError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(VoicepathError, ValueError):
    """A function argument is outside its documented range."""


class FormatError(VoicepathError, ValueError):
    """Malformed container (bad RIFF header, truncated chunk, bad manifest)."""


class UnsupportedFormatError(FormatError):
    """Well-formed container using a codec or layout we refuse to guess at."""

    def __init__(self, field, value, expected):
        self.field = field
        self.value = value
        super().__init__(f"unsupported {field}={value!r} (expected {expected})")


class CorpusLoadError(VoicepathError):
    def __init__(self, missing):
        self.missing = list(missing)
        listing = ", ".join(self.missing)
        super().__init__(f"{len(self.missing)} manifest entries not found: {listing}")


class DegenerateInputError(VoicepathError, ValueError):
    """Input has no usable content (silent clip, zero variance, single sample)."""


class SilentClipError(DegenerateInputError):
    pass


class ZeroVarianceError(DegenerateInputError):
    pass


class TooShortError(VoicepathError, ValueError):
    pass


class EmptyOutputError(VoicepathError):
    pass


class ResolutionError(ParameterError):
    pass


class ShapeError(VoicepathError, ValueError):
    pass


class NumericError(VoicepathError, ArithmeticError):
    pass


class LabelError(VoicepathError, ValueError):
    pass


class StateError(VoicepathError, RuntimeError):
    pass


class ConvergenceError(VoicepathError, RuntimeError):
    def __init__(self, message, max_violation=None):
        self.max_violation = max_violation
        super().__init__(message)


class StratificationError(VoicepathError, ValueError):
    pass


class PolicyError(VoicepathError, ValueError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch, value):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")


class SchemaError(VoicepathError, ValueError):
    pass


class DependencyError(VoicepathError):
    def __init__(self, artifact, stage):
        self.artifact = artifact
        self.stage = stage
        super().__init__(f"stage '{stage}' needs missing artifact '{artifact}'")
