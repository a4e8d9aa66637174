"""Exception hierarchy.

Class names double as the error tokens printed by the command line tool,
so they intentionally omit the usual ``Error`` suffix.
"""


class OctInspectError(Exception):
    """Base class for every data or processing error raised by this package."""


class IoFailure(OctInspectError):
    pass


# volume container / binary formats
class VolumeFormatError(OctInspectError):
    pass


class BadMagic(VolumeFormatError):
    pass


class TruncatedFile(VolumeFormatError):
    pass


class TrailingData(VolumeFormatError):
    pass


class UnsupportedVersion(VolumeFormatError):
    pass


class UnsupportedBitDepth(VolumeFormatError):
    pass


class DimensionOverflow(VolumeFormatError):
    pass


class InvalidVolume(OctInspectError):
    pass


class EmptyDirectory(OctInspectError):
    pass


class MixedDimensions(OctInspectError):
    pass


class UnsupportedFormat(OctInspectError):
    pass


class SliceOutOfRange(OctInspectError):
    pass


# labels and manifests
class LabelFormatError(OctInspectError):
    pass


class MalformedLine(LabelFormatError):
    def __init__(self, line_no: int, message: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}" if message else f"line {line_no}")


class UnknownClassId(LabelFormatError):
    pass


class OutOfRangeCoordinate(LabelFormatError):
    pass


class BadConfidence(LabelFormatError):
    pass


class NotSquare(LabelFormatError):
    pass


class DegenerateAfterClamp(OctInspectError):
    pass


class ManifestError(OctInspectError):
    pass


class MissingLabels(OctInspectError):
    pass


# processing
class BadKernel(OctInspectError):
    pass


class BadConfig(OctInspectError):
    pass


class DegenerateBox(OctInspectError):
    pass


class NoGroundTruth(OctInspectError):
    pass


class PlacementOverflow(OctInspectError):
    pass


class TooFewVolumes(OctInspectError):
    pass


class MissingPredictions(OctInspectError):
    pass
