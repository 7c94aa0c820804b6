"""Exception hierarchy shared by every pipeline stage.

Each error carries the process exit code the CLI should return for it:
1 for usage/config problems, 2 for data problems, 3 for numeric failures.
"""


class LulcError(Exception):
    exit_code = 2


class UsageError(LulcError):
    exit_code = 1


class ConfigParseError(UsageError):
    pass


class UnknownSubcommand(UsageError):
    pass


class NumericFailure(LulcError):
    exit_code = 3


# raster-io
class MissingHeader(LulcError):
    pass


class PayloadSizeMismatch(LulcError):
    pass


class UnsupportedDtype(LulcError):
    pass


class SampleOutOfRange(LulcError):
    pass


class IoFailure(LulcError):
    pass


class BandOutOfRange(LulcError):
    pass


# tiling
class DimensionMismatch(LulcError):
    pass


class TileLargerThanMosaic(LulcError):
    pass


class EmptyTileSet(LulcError):
    pass


class InvalidZoomFraction(LulcError):
    pass


class CoverageGap(LulcError):
    pass


class CoverageGapWarning(UserWarning):
    pass


# cloudmask
class DegenerateHistogram(LulcError):
    pass


class BitOutOfRange(LulcError):
    pass


# autodiff
class ShapeMismatch(LulcError):
    pass


class EmptyOutput(ShapeMismatch):
    pass


class TargetOutOfRange(LulcError):
    pass


# segnet
class InvalidOutputStride(UsageError):
    pass


class WidthMismatch(UsageError):
    pass


class CheckpointMismatch(LulcError):
    pass


# trainer
class ChannelMismatch(LulcError):
    pass


class LabelOutOfRange(LulcError):
    pass


class EmptyTrainingSplit(LulcError):
    pass


# metrics
class EmptyMatrix(LulcError):
    pass


class EmptyReportList(LulcError):
    pass


class WeightSumInvalid(LulcError):
    pass
