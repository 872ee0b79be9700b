"""Multi-box prompt fusion and per-pixel uncertainty for promptable segmenters.

Any callable segmenter that takes an image and a box can be wrapped: sample
jittered boxes around a rough prompt, average the predictions, and read the
per-pixel disagreement as an uncertainty map.
"""

from .errors import MultiboxError
from .fusion import PredictionSet, binarize, fuse_mean
from .imaging import Image, load_image, load_mask, load_raster_f32, save_raster_f32
from .metrics import MetricReport, dice, ece, evaluate, s_measure, weighted_fmeasure
from .prompts import BoxPrompt, PromptConfig, gt_bounding_box, jitter_boxes
from .uncertainty import expected_entropy, predictive_entropy, uncertainty, variance_map

__version__ = "0.1.0"

__all__ = [
    "BoxPrompt",
    "Image",
    "MetricReport",
    "MultiboxError",
    "PredictionSet",
    "PromptConfig",
    "binarize",
    "dice",
    "ece",
    "evaluate",
    "expected_entropy",
    "fuse_mean",
    "gt_bounding_box",
    "jitter_boxes",
    "load_image",
    "load_mask",
    "load_raster_f32",
    "predictive_entropy",
    "s_measure",
    "save_raster_f32",
    "uncertainty",
    "variance_map",
    "weighted_fmeasure",
]
