"""Bridge from trained CNNs to the saliency pipeline's interchange files."""

from .export import ExtractionSpec, convert_boxes, export_batch, load_annotations
from .model import (
    ExtractorError,
    LayerNotFound,
    SdfcModel,
    SdfcWidthMismatch,
    attach_sdfc,
    load_model,
)

__version__ = "0.1.0"
