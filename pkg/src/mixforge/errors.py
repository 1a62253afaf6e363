"""Exception taxonomy shared by every mixforge module.

The CLI maps any :class:`MixforgeError` to exit code 1; anything else is a
genuine bug and escapes with a traceback.
"""

from __future__ import annotations


class MixforgeError(Exception):
    """Base class for all domain errors raised by this package."""

    category = "error"


class SchemaError(MixforgeError):
    """Schema definition or schema/file mismatch problems."""

    category = "schema"


class DataError(MixforgeError):
    """Row- or cell-level ingestion problems (unparseable, missing, empty)."""

    category = "data"


class RangeError(DataError):
    """A value falls outside the observed range of its column (strict mode)."""

    category = "range"


class FitError(MixforgeError):
    """A model could not be fitted (degenerate data, bad configuration)."""

    category = "fit"


class SearchError(MixforgeError):
    """Hyperparameter search failed for every sampled candidate."""

    category = "search"


class BundleError(MixforgeError):
    """Model bundle persistence problems (corruption, missing entries)."""

    category = "bundle"


class VersionError(BundleError):
    """A persisted artifact declares an unsupported format version."""

    category = "version"
