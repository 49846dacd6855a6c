"""Adapter that runs a torch classifier over occlubench datasets and writes
prediction logs (JSON Lines) and Grad-CAM saliency files (OBSM).

The adapter performs no occlusion itself: occluded variants are produced by
the main toolkit as derived datasets (see its ``eval --export-occluded``),
predicted here, and scored back in the main toolkit.
"""

from occlubench_exporter.export import export_gradcam, export_predictions
from occlubench_exporter.io import (
    load_cifar_batches,
    load_idx_pair,
    load_manifest,
    write_obsm,
    write_prediction_jsonl,
)

__version__ = "0.1.0"
