"""Stable error vocabulary shared by the library, CLI, and HTTP service.

Every failure surfaced to callers carries a machine-readable ``code`` so the
service and CLI can report it without string matching.
"""


class EngineError(Exception):
    code = "InternalError"

    def __init__(self, message: str = "", *, detail: object = None):
        super().__init__(message or self.code)
        self.detail = detail


# container / asset errors
class MalformedContainer(EngineError):
    code = "MalformedContainer"


class UnsupportedFeature(EngineError):
    code = "UnsupportedFeature"


class SerializationOverflow(EngineError):
    code = "SerializationOverflow"


# geometry errors
class DegenerateCamera(EngineError):
    code = "DegenerateCamera"


class EmptyMesh(EngineError):
    code = "EmptyMesh"


class EmptyCloud(EngineError):
    code = "EmptyCloud"


class DegenerateSource(EngineError):
    code = "DegenerateSource"


# segmentation errors
class UndecodableImage(EngineError):
    code = "UndecodableImage"


class ProviderFailure(EngineError):
    code = "ProviderFailure"


class NoDepthInMask(EngineError):
    code = "NoDepthInMask"


# retrieval errors
class NoFeatures(EngineError):
    code = "NoFeatures"


class CatalogEmpty(EngineError):
    code = "CatalogEmpty"


class EmptyQuery(EngineError):
    code = "EmptyQuery"


# replacement errors
class StalePlanError(EngineError):
    code = "StalePlanError"


class DegenerateComponent(EngineError):
    code = "DegenerateComponent"


# catalog / persistence errors
class DirectoryUnreadable(EngineError):
    code = "DirectoryUnreadable"


class IoFailure(EngineError):
    code = "IoFailure"


class UnsupportedFormat(EngineError):
    code = "UnsupportedFormat"


class UnsupportedVersion(EngineError):
    code = "UnsupportedVersion"


# service errors
class CapacityExceeded(EngineError):
    code = "CapacityExceeded"


class NothingToUndo(EngineError):
    code = "NothingToUndo"


class PreconditionFailed(EngineError):
    code = "PreconditionFailed"


class NotFound(EngineError):
    code = "NotFound"


# warnings (recoverable conditions the caller may want to log)
class NoForegroundWarning(UserWarning):
    pass


class CodebookReducedWarning(UserWarning):
    pass


class DanglingReferenceWarning(UserWarning):
    pass
