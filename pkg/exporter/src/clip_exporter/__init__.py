"""Export dual-encoder embeddings of image crops and captions to FGEB tables."""

from .encoders import ClipEncoder, Encoder, HashEncoder
from .errors import AnnotationError, ExporterError, ExportError, FormatError, ImageError
from .export import ExportJob, run_export

__all__ = [
    "AnnotationError",
    "ClipEncoder",
    "Encoder",
    "ExportError",
    "ExporterError",
    "ExportJob",
    "FormatError",
    "HashEncoder",
    "ImageError",
    "run_export",
]
