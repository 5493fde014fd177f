"""Exception hierarchy shared across the package."""


class KneeMriError(Exception):
    """Base class for all library-specific failures."""


class FormatError(KneeMriError):
    """A file's framing (magic bytes, header, byte count) is malformed."""


class ShapeError(KneeMriError):
    """An array has the wrong rank, memory order, or dimensions."""


class DtypeError(KneeMriError):
    """An array element type outside the supported set."""


class ParseError(KneeMriError):
    """A text record could not be parsed into its domain."""


class IntegrityError(KneeMriError):
    """Duplicate or inconsistent records in a table."""


class LayoutError(KneeMriError):
    """A dataset directory tree is missing required pieces."""


class WindowError(KneeMriError):
    """A slice window larger than the available stack."""


class GeometryError(KneeMriError):
    """A geometric transform that does not fit the image."""


class ConfigError(KneeMriError):
    """A run configuration violating the per-mode invariants."""


class OptimizerError(KneeMriError):
    """An optimizer step refused, e.g. on non-finite gradients."""


class UndefinedAucError(KneeMriError):
    """AUC requested for single-class labels."""


class DegenerateLabelsError(KneeMriError):
    """Class weights requested for single-class labels."""


class SearchError(KneeMriError):
    """A grid search in which every cell failed."""
