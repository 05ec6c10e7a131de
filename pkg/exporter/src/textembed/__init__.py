"""textembed: batch text-embedding exporter for description corpora."""

from .encoders import ClipTextEncoder, HashedNgramEncoder, build_encoder
from .export import ExportError, ExporterConfig, export

__version__ = "0.1.0"
