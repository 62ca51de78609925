"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`MriclfError`. The three
intermediate classes map onto CLI exit codes (config 2, data 3, numerical 4).
"""


class MriclfError(Exception):
    exit_code = 1


class ConfigError(MriclfError):
    exit_code = 2


class DataError(MriclfError):
    exit_code = 3


class NumericalError(MriclfError):
    exit_code = 4


# volume
class MissingPayload(DataError):
    pass


class GeometryMismatch(DataError):
    pass


class NonFiniteData(DataError):
    pass


class EmptyMask(DataError):
    pass


class ProbabilityOutOfRange(DataError):
    pass


class NonPositiveJacobian(DataError):
    pass


class NonPositiveIcv(DataError):
    pass


class ZeroVariance(NumericalError):
    pass


# dataset
class MalformedRow(DataError):
    pass


class DuplicateSubjectId(DataError):
    pass


class UnknownDiagnosis(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class EmptyClass(DataError):
    pass


# svm
class SingleClass(DataError):
    pass


class NonPositiveC(ConfigError):
    pass


class DimensionMismatch(DataError):
    pass


class DegenerateGram(NumericalError):
    pass


# cnn
class ShapeMismatch(DataError):
    pass


class DegenerateBatch(NumericalError):
    pass


class EmptyValidation(DataError):
    pass


class NoCorrectPositives(DataError):
    pass


# stats
class EmptyScores(DataError):
    pass


class TooFewIterations(DataError):
    pass


class MetricUndefined(NumericalError):
    pass


class NoDisagreement(DataError):
    pass


# cli
class FeatureMismatch(DataError):
    pass


class KindMismatch(ConfigError):
    pass
