"""Exception hierarchy shared across the package.

Each class carries a ``category`` string; the CLI prints it on failure and maps
it to an exit code.
"""


class RadFieldError(Exception):
    category = "error"


class DomainError(RadFieldError, ValueError):
    category = "domain"


class ConfigError(RadFieldError, ValueError):
    category = "config"


class MalformedManifestError(RadFieldError, ValueError):
    category = "malformed-manifest"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class InvalidPoseError(RadFieldError, ValueError):
    category = "invalid-pose"

    def __init__(self, message, frame_index=None):
        super().__init__(message)
        self.frame_index = frame_index


class DegenerateOrientationError(DomainError):
    category = "degenerate-orientation"


class InsufficientDataError(RadFieldError, ValueError):
    category = "insufficient-data"


class EmptyResultError(RadFieldError, ValueError):
    category = "empty-result"


class ImageReadError(RadFieldError, OSError):
    category = "io"


class TrainingDivergedError(RadFieldError, FloatingPointError):
    category = "diverged"

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateSceneError(RadFieldError, ValueError):
    category = "degenerate-scene"
