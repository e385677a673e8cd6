"""Explanation methods and evaluation metrics for two-stage object detectors."""

import os

# Pin BLAS thread pools before numpy loads: per-image work is parallelized at
# the process level, and single-threaded kernels keep floating-point reduction
# order (and therefore output bytes) independent of the worker count.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
del _var

from .imaging import BBox, Image, Mask, SaliencyMap, bilinear_upsample, iou, normalize_map, otsu_threshold
from .detectors import Detection, ProposalSet, SyntheticDetector
from .minicnn import MiniCNN
from .runner import METHOD_NAMES, ExplanationResult, explain_image, run_many
from .metrics import METRIC_NAMES, MetricReport, evaluate_map, run_benchmark
from .config import RunConfig, load_run_config

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Image",
    "Mask",
    "SaliencyMap",
    "Detection",
    "ProposalSet",
    "SyntheticDetector",
    "MiniCNN",
    "ExplanationResult",
    "MetricReport",
    "RunConfig",
    "METHOD_NAMES",
    "METRIC_NAMES",
    "bilinear_upsample",
    "evaluate_map",
    "explain_image",
    "iou",
    "load_run_config",
    "normalize_map",
    "otsu_threshold",
    "run_benchmark",
    "run_many",
    "__version__",
]
