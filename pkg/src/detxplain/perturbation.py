"""Black-box perturbation explainers: RISE and its detector-aware variant.

RISE probes the detector with randomly masked copies of the image and
accumulates each mask weighted by the detector's confidence on it. D-RISE
replaces the confidence weight with a similarity between a chosen target
detection and whatever the detector finds on the masked image, which makes
the map specific to one box instead of the image-level decision.
"""

from dataclasses import dataclass

import numpy as np

from .imaging import Image, Mask, SaliencyMap, bilinear_upsample, iou

DEFAULT_N_MASKS = 500
DEFAULT_GRID_SIZE = 8
DEFAULT_KEEP_PROB = 0.5


@dataclass(frozen=True)
class RiseConfig:
    n_masks: int = DEFAULT_N_MASKS
    grid_size: int = DEFAULT_GRID_SIZE
    keep_prob: float = DEFAULT_KEEP_PROB
    seed: int = 0

    def __post_init__(self):
        if self.n_masks < 1:
            raise ValueError("n_masks must be >= 1")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        if not 0.0 < self.keep_prob < 1.0:
            raise ValueError("keep_prob must be in (0, 1)")


def generate_masks(cfg: RiseConfig, h: int, w: int):
    """The deterministic mask sequence for a config: grid bits, then offset.

    Each cell is kept with probability keep_prob; the low-resolution grid is
    bilinearly upsampled with a uniformly random sub-cell shift so that cell
    seams land at different pixels for every mask.
    """
    rng = np.random.default_rng(cfg.seed)
    masks = []
    for _ in range(cfg.n_masks):
        grid = (rng.random((cfg.grid_size, cfg.grid_size))
                < cfg.keep_prob).astype(np.float64)
        offset = rng.uniform(0.0, 1.0, size=2)  # (dy, dx) in grid cells
        upsampled = bilinear_upsample(grid, h, w,
                                      offset=(offset[0], offset[1]))
        masks.append(Mask(grid=grid, upsampled=upsampled))
    return masks


def _masked_image(image: Image, mask: Mask) -> Image:
    return Image(data=image.data * mask.upsampled)


def _accumulate(masks, weights, n_masks: int, keep_prob: float) -> np.ndarray:
    """Fixed-order weighted sum of masks, normalized by n * keep_prob."""
    total = np.zeros_like(masks[0].upsampled)
    for mask, weight in zip(masks, weights):
        if weight != 0.0:
            total += weight * mask.upsampled
    return total / (n_masks * keep_prob)


def rise(image: Image, detector, cfg: RiseConfig = RiseConfig()) -> SaliencyMap:
    """Image-level RISE: mask weight = best final-detection score.

    A masked image with no detection contributes nothing (weight 0), which is
    what makes the method meaningful on a thresholded detector.
    """
    masks = generate_masks(cfg, image.height, image.width)
    weights = [detector.image_score(_masked_image(image, m)) for m in masks]
    values = _accumulate(masks, weights, cfg.n_masks, cfg.keep_prob)
    return SaliencyMap(values=values, method_name="rise")


def iou_times_score(target, detection) -> float:
    """Default D-RISE pairwise similarity between target and a detection."""
    return iou(target.box, detection.box) * detection.score


def drise_all(image: Image, detector, targets,
              cfg: RiseConfig = RiseConfig(),
              similarity=iou_times_score):
    """D-RISE maps for several targets off one shared mask sweep.

    Detecting on each masked image is the expensive part and does not depend
    on the target, so explaining every final detection of an image costs one
    sweep instead of one per box. Weights per target are the best similarity
    against the masked image's detections; similarity defaults to
    iou(target, d) * d.score and is pluggable.
    """
    masks = generate_masks(cfg, image.height, image.width)
    per_mask = [detector.detect(_masked_image(image, m)) for m in masks]
    maps = []
    for target in targets:
        weights = [max((similarity(target, d) for d in dets), default=0.0)
                   for dets in per_mask]
        values = _accumulate(masks, weights, cfg.n_masks, cfg.keep_prob)
        maps.append(SaliencyMap(values=values, method_name="drise",
                                target_box=target.box))
    return maps


def drise(image: Image, detector, target,
          cfg: RiseConfig = RiseConfig(),
          similarity=iou_times_score) -> SaliencyMap:
    """D-RISE: per-box saliency for one target detection."""
    return drise_all(image, detector, [target], cfg, similarity)[0]
