"""Exception types shared across the engine."""


class CfcamError(Exception):
    """Base class for all engine errors."""


class ArrayFileError(CfcamError):
    """Array file is malformed, truncated, or has an unsupported dtype."""


class DegenerateClusteringError(CfcamError):
    """Too few channels left to derive clustering parameters."""


class EmptyValidSetError(CfcamError):
    """No dominant or clustered channel survived; a CAM cannot be formed."""


class ModelLoadError(CfcamError):
    """Model graph file could not be parsed or violates its manifest."""


class UnsupportedOpsetError(ModelLoadError):
    """Graph requires an operator set newer than the engine supports."""


class InferenceError(CfcamError):
    """A forward pass failed (shape mismatch, unsupported operator...)."""


class BundleValidationError(CfcamError):
    """Bundle directory violates the cfcam-bundle contract.

    Carries the structured list of violations in ``violations``.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])
