from .batch import METRIC_KINDS, BatchRow, batch_evaluate, columns, evaluate_pair
from .multimatch import Alignment, MmComponents, align_saccades, align_scanpaths, multimatch, simplify_scanpath
from .saliency import (
    DegenerateMapError,
    SaliencyMap,
    build_saliency_map,
    congruency,
    fixation_map,
    fixation_pixels,
    nss,
    otsu_binarize,
    otsu_from_histogram,
    otsu_threshold,
)

__all__ = [
    "METRIC_KINDS", "BatchRow", "batch_evaluate", "columns", "evaluate_pair",
    "Alignment", "MmComponents", "align_saccades", "align_scanpaths", "multimatch", "simplify_scanpath",
    "DegenerateMapError", "SaliencyMap", "build_saliency_map", "congruency", "fixation_map",
    "fixation_pixels", "nss", "otsu_binarize", "otsu_from_histogram", "otsu_threshold",
]
