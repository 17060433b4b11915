"""Exception hierarchy: all exporter failures derive from ExporterError."""


class ExporterError(Exception):
    """Base class for everything this package raises on purpose."""


class AnnotationError(ExporterError):
    """Malformed or inconsistent annotation input."""


class ImageError(ExporterError):
    """An image file that cannot be opened or decoded."""


class FormatError(ExporterError):
    """Invalid data for the binary embedding-table format."""


class ExportError(ExporterError):
    """A job-level failure, such as an export with no output rows."""
