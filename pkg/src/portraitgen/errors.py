"""Exception hierarchy shared across the pipeline.

Three branches matter for the CLI exit codes: configuration problems (2),
data/input problems (3), and numeric failures (4).
"""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PipelineError):
    """Invalid or inconsistent configuration."""


class DataError(PipelineError):
    """Missing, malformed, or inconsistent input data."""


class NumericError(PipelineError):
    """Numeric failure (non-finite loss, degenerate geometry domain)."""


# -- geometry / tensors ------------------------------------------------------

class ShapeMismatch(DataError):
    """Array shape does not match the operation's contract."""


class DimMismatch(DataError):
    """Feature dimensions of two operands disagree."""


class NonPositiveDepth(NumericError):
    """Pinhole projection received a point with z <= 0."""


# -- audio -------------------------------------------------------------------

class EmptyAudio(DataError):
    """Waveform shorter than one video frame."""


class FeatureMismatch(DataError):
    """Precomputed feature file does not cover the requested clip."""


# -- preprocessing -----------------------------------------------------------

class NoBody(DataError):
    """Segmentation map contains no upper-body pixels."""


class DegenerateContour(DataError):
    """Torso contour yields too few candidate keypoints."""


class TooFewPoints(DataError):
    """Polygon simplification needs at least 3 input points."""


class CountMismatch(DataError):
    """Per-frame input streams of a clip have different lengths."""


# -- metrics -----------------------------------------------------------------

class TooShort(DataError):
    """Sequence too short for a temporal-difference metric."""


class TooFewSamples(DataError):
    """Diversity needs at least two sampled sequences."""


class DegeneratePolygon(DataError):
    """Mouth polygon cannot be rasterized (fewer than 3 vertices or empty)."""


class LengthMismatch(DataError):
    """Reference and generated videos have different frame counts."""


class MissingStream(DataError):
    """Evaluation input directory lacks a required stream."""


# -- rendering ---------------------------------------------------------------

class EmptyReference(DataError):
    """Condition assembly called without a reference image."""


# -- orchestration -----------------------------------------------------------

class MissingCheckpoint(DataError):
    """A required stage checkpoint is absent."""


class DatasetEmpty(DataError):
    """Training dataset contains no records."""


class InconsistentWindows(DataError):
    """Per-window predictions do not line up with the window list."""


class NonFiniteLoss(NumericError):
    """Training produced a NaN/Inf loss."""
