"""Reference segmentation by turning a reference-target pair into a pseudo video."""
from .core import (EvaluationReport, Episode, PseudoVideoSequence, aggregate_miou, as_image, as_mask, iou,
                   resize_pair)

__version__ = "0.1.0"

__all__ = ["EvaluationReport", "Episode", "PseudoVideoSequence", "aggregate_miou", "as_image", "as_mask", "iou",
           "resize_pair"]
