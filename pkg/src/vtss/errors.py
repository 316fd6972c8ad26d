"""Exception hierarchy shared by every vtss module."""


class VtssError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(VtssError):
    """A file does not follow its declared binary layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConsistencyError(VtssError):
    """Inputs that must agree with each other do not."""


class CapacityError(VtssError):
    """Not enough samples to satisfy a request."""


class GeometryError(VtssError):
    """A crop, shift or zoom does not fit inside the image."""


class ShapeError(VtssError):
    """An array has the wrong shape."""


class SpecError(VtssError):
    """An invalid task, architecture or injection specification."""


class ShardError(VtssError):
    """A batch cannot be split into the requested number of shards."""


class TrainingError(VtssError):
    """Optimization diverged."""

    def __init__(self, message, epoch=None, step=None):
        super().__init__(f"{message} (epoch={epoch}, step={step})")
        self.epoch = epoch
        self.step = step


class ConfigError(VtssError):
    """An experiment configuration is invalid.

    ``pointer`` is the JSON pointer of the offending value, when known.
    """

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class RangeError(VtssError):
    """An index or epoch is outside its valid range."""
