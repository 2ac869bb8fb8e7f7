"""Exception hierarchy for the lf4d pipeline."""


class LF4DError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(LF4DError):
    """Invalid configuration (unknown keys, out-of-domain values)."""


class DataError(LF4DError):
    """Invalid or missing input data."""


class NumericalError(LF4DError):
    """A numerical routine failed to produce a usable result."""


# -- geometry ------------------------------------------------------------

class BehindCamera(NumericalError):
    """Point has non-positive camera-space depth."""


class NonPositiveDepth(NumericalError):
    """Back-projection requested with depth <= 0."""


class DegenerateHomography(NumericalError):
    """Rectifying rotation is not invertible."""


# -- ingest --------------------------------------------------------------

class MissingFile(DataError):
    """A file referenced by a manifest does not exist."""


class SchemaMismatch(DataError):
    """On-disk document has an unsupported schema or version."""


class CalibrationCountMismatch(DataError):
    """Manifest view count disagrees with the calibration."""


class BadMagic(DataError):
    """Binary file does not start with the expected magic bytes."""


class TruncatedFile(DataError):
    """Binary file ended before the declared payload."""


class ParseError(DataError):
    """Text record file failed to parse.

    Carries the 1-based line number of the offending record.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PlaneBehindCamera(DataError):
    """Synthetic scene places a plane behind a camera."""


# -- objects -------------------------------------------------------------

class EmptyCloud(DataError):
    """Clustering requested on an empty point cloud."""


class NotVisible(DataError):
    """Cluster or point has no visible projection in the requested view."""


# -- features / keyframes ------------------------------------------------

class NoFeatures(DataError):
    """No features exist in either frame of a metric pair."""


class BadOrder(DataError):
    """Frame pair violates the i < j ordering requirement."""


class EmptySilhouette(DataError):
    """Shape metric requested on an empty silhouette."""


class AlignmentDiverged(NumericalError):
    """Iterative mask alignment failed to converge."""


class EmptySegment(DataError):
    """Track construction requested on an empty key-frame segment."""


# -- epi -----------------------------------------------------------------

class DegenerateBaseline(DataError):
    """Camera row has zero maximal pairwise baseline."""


class TooFewSamples(DataError):
    """Line fit requires at least two samples at distinct heights."""


class OutOfImage(DataError):
    """Window center lies outside the image."""


class NoOverlap(NumericalError):
    """Two windows share no jointly valid samples."""


# -- flow / eval ---------------------------------------------------------

class NoObjectPixels(DataError):
    """Flow requested on an empty object mask."""


class EmptyMask(DataError):
    """Metric requested on an empty mask."""


class EmptyConfig(ConfigError):
    """Camera configuration selects no views."""


class InvalidConfig(ConfigError):
    """Camera configuration does not form a row x column grid."""
