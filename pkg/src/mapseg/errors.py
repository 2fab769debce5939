"""Exception taxonomy shared by all modules.

The CLI maps these onto exit codes: usage/config errors -> 1,
data/shape errors -> 2, numeric errors -> 3, I/O errors -> 4.
"""


class MapSegError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MapSegError):
    """Tensor or grid dimensions are inconsistent with the operation."""


class ArgumentError(MapSegError):
    """An argument value is outside its documented domain."""


class ConfigError(MapSegError):
    """A configuration document or flag set is invalid."""


class DataError(MapSegError):
    """Input data (labels, palettes, manifests) violates its contract."""


class NumericError(MapSegError):
    """A computation produced or received non-finite values."""


class StateError(MapSegError):
    """Mismatched caches, gradient sets, or parameter names."""


class FileFormatError(MapSegError):
    """A file on disk is malformed, truncated, or corrupt."""
