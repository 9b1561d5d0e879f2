"""Exception hierarchy.

Every error raised by this package derives from :class:`PLPCLError` so CLI
entry points can map any library failure to a clean non-zero exit. Names
mirror the failure they report; the CLI prints ``type(exc).__name__`` on
stderr.
"""


class PLPCLError(Exception):
    """Base class for all library errors."""


# --- matrix primitives ---------------------------------------------------


class ZeroRowError(PLPCLError):
    """A row had (near-)zero Euclidean norm where a direction was required."""


class ZeroColumnError(PLPCLError):
    """A matrix column was all-zero where a direction was required."""


class ShapeMismatchError(PLPCLError):
    """Operand shapes are incompatible."""


# --- model ----------------------------------------------------------------


class InvalidDimsError(PLPCLError):
    """A model dimension was zero or negative."""


class InvalidDropoutError(PLPCLError):
    """Dropout probability outside [0, 1)."""


class DimsMismatchError(PLPCLError):
    """Input width does not match the model's expected input dimension."""


# --- losses / supervision --------------------------------------------------


class EmptyBatchError(PLPCLError):
    """No samples eligible for the requested loss term."""


class TooFewClustersError(PLPCLError):
    """Fewer than two clusters available for a contrastive pool."""


class LabelOutOfRangeError(PLPCLError):
    """A class index is outside the cluster-head width."""


class IndexOutOfRangeError(PLPCLError):
    """A sample index is outside the batch."""


class ConflictingSupervisionError(PLPCLError):
    """A sample carries both a ground-truth label and a pseudo-label."""


# --- pipeline ---------------------------------------------------------------


class NoLabeledDataError(PLPCLError):
    """Pretraining requires at least one labeled sample."""


class ClassCountMismatchError(PLPCLError):
    """Observed labeled classes disagree with the configured class count."""


# --- data -------------------------------------------------------------------


class ParseError(PLPCLError):
    """A dataset line could not be parsed."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DimMismatchError(PLPCLError):
    """A record's embedding width differs from the rest of the file."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class UnknownSplitError(PLPCLError):
    """A record names a split other than train/dev/test."""


class NoClassesError(PLPCLError):
    """The dataset does not provide the classes the operation needs."""


class InvalidParamsError(PLPCLError):
    """Invalid arguments to a generator or estimator."""


# --- evaluation ---------------------------------------------------------------


class LengthMismatchError(PLPCLError):
    """Prediction and truth label vectors differ in length (or are empty)."""


class TooFewSamplesError(PLPCLError):
    """Not enough samples for the requested computation."""
