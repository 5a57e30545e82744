"""Exception types shared across the package."""


class SplatPlanError(Exception):
    """Base class for all package errors."""


class DegenerateLookAt(SplatPlanError):
    """Camera eye coincides with the target, or up is parallel to the gaze."""


class BehindCamera(SplatPlanError):
    """Primitive center is at or behind the camera near plane."""


class RenderError(SplatPlanError):
    """Rendering failed (e.g. a primitive projected to non-finite values)."""


class EmptyCalibration(SplatPlanError):
    """Threshold calibration received no covered pixels."""


class TooManyCells(SplatPlanError):
    """Requested voxel lattice exceeds the cell budget."""


class SampleOutsideField(SplatPlanError):
    """An uncertainty sample lies outside the voxel lattice."""


class UnknownRegionLabel(SplatPlanError):
    """A region label is not present in the ground truth."""


class NoFeasibleCell(SplatPlanError):
    """Every candidate cell scored zero; the option set is empty or dead."""


class NoPath(SplatPlanError):
    """Greedy trajectory search found no advancing neighbor."""


class SimCollision(SplatPlanError):
    """A planned trajectory intersects occupied space before contact."""


class ZeroFinalQuality(SplatPlanError):
    """Contribution rate is undefined when the final quality is zero."""


class LengthMismatch(SplatPlanError):
    """Transcripts being compared do not have equal length."""


class BackendUnavailable(SplatPlanError):
    """The remote reasoner endpoint could not be reached.

    Carries the raw reply (when any) for logging.
    """

    def __init__(self, message, raw_reply=None):
        super().__init__(message)
        self.raw_reply = raw_reply


class SchemaViolation(SplatPlanError):
    """A reasoner reply failed schema validation after all retries."""

    def __init__(self, message, raw_reply=None):
        super().__init__(message)
        self.raw_reply = raw_reply
