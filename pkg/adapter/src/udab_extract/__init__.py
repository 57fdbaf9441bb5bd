"""Framework-side extraction adapter emitting UDAB1 evaluation bundles."""

from .bundle_writer import write_udab1
from .extract import ExtractionError, ExtractionSpec, extract

__version__ = "0.1.0"

__all__ = ["ExtractionError", "ExtractionSpec", "extract", "write_udab1", "__version__"]
