"""Exception hierarchy shared across the package."""


class LayoutGenError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(LayoutGenError):
    """A layout or config violates a structural invariant."""


class VocabularyError(LayoutGenError):
    """A category name is not present in the active vocabulary."""


class IncompleteLayoutError(LayoutGenError):
    """An operation that needs fully specified geometry met a MASK bin."""


class ParseError(LayoutGenError):
    """A JSON document does not match the layout schema.

    ``path`` is a JSONPath-style locator such as ``$.elements[2].w``.
    """

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


class ShapeError(LayoutGenError):
    """Array or sequence shapes are inconsistent."""


class ScheduleError(LayoutGenError):
    """Noise schedule parameters produce an invalid transition matrix."""


class DomainError(LayoutGenError):
    """An input value lies outside an operation's domain (e.g. x0 = MASK)."""


class ImpossibleTransitionError(LayoutGenError):
    """Posterior conditioning on a (x_t, x0) pair with zero forward mass."""


class DegenerateInputError(LayoutGenError):
    """Every mixture component of a reverse distribution has zero mass."""


class DataError(LayoutGenError):
    """Corpus or task inputs are missing something the operation requires."""


class DecodeError(LayoutGenError):
    """The decoder breached one of its own invariants (internal error)."""


class CheckpointError(LayoutGenError):
    """A checkpoint file cannot be loaded."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class CheckpointIntegrityError(CheckpointError):
    """Checkpoint file is truncated or internally inconsistent."""
