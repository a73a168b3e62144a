"""Exception hierarchy shared by all mambarate modules."""

from __future__ import annotations


class MambaRateError(Exception):
    """Base class for every error raised by this package."""


# --- data files -----------------------------------------------------------


class DataError(MambaRateError):
    pass


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class ZeroDimension(DataError):
    pass


class MissingColumn(DataError):
    pass


class RatingOutOfRange(DataError):
    pass


class DuplicateListenerEntry(DataError):
    pass


class InconsistentRecord(DataError):
    """Rows of one utterance disagree on system id or sample rate."""


class EmptyIdList(DataError):
    pass


class BadFractions(DataError):
    pass


# --- rbf codec ------------------------------------------------------------


class OutOfRange(MambaRateError, ValueError):
    pass


class WrongDimension(MambaRateError, ValueError):
    pass


# --- autodiff -------------------------------------------------------------


class ShapeMismatch(MambaRateError, ValueError):
    pass


class NonFiniteResult(MambaRateError, FloatingPointError):
    pass


class NotScalarLoss(MambaRateError, ValueError):
    pass


# --- training -------------------------------------------------------------


class TrainingError(MambaRateError):
    pass


class EmptyTrainSet(TrainingError):
    pass


class EmptyValSet(TrainingError):
    pass


class DivergedLoss(TrainingError):
    pass


# --- metrics --------------------------------------------------------------


class MetricError(MambaRateError, ValueError):
    pass


class EmptyInput(MetricError):
    pass


class ConstantInput(MetricError):
    """Correlation is undefined because one side has zero variance."""


class TooFewPoints(MetricError):
    pass


class NoSystemIds(MetricError):
    pass


# --- cli / config ---------------------------------------------------------


class ConfigError(MambaRateError):
    pass


class DimMismatch(MambaRateError):
    pass


class UnknownUtterance(MambaRateError):
    pass


class CheckpointError(MambaRateError):
    pass
