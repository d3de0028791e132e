"""Vision-encoder export utility for the snapshot pipeline."""

__version__ = "0.1.0"

from .export import (
    ExportError,
    ExportManifest,
    export_encoder,
    make_reference_checkpoint,
    probe_input,
    run_graph,
)

__all__ = [
    "ExportError",
    "ExportManifest",
    "export_encoder",
    "make_reference_checkpoint",
    "probe_input",
    "run_graph",
    "__version__",
]
