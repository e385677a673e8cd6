"""Grad-CAM, Grad-CAM++, and Ada-SISE over MiniCNN white-box traces.

All three explain the same scalar: one stage-2 objectness score picked by a
target selector (default: the image-wide maximum), and all are deterministic.
Grad-CAM and Grad-CAM++ are pure trace arithmetic — one forward pass, one
backward pass. Ada-SISE uses the backward pass only to select feature maps;
each survivor then becomes an attribution mask that re-queries the model, so
its cost scales with the survivor count rather than with one backward pass.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .imaging import Image, SaliencyMap, bilinear_upsample, normalize_values, otsu_threshold

log = logging.getLogger(__name__)

LAST_CONV_LAYER = "conv2"
ADASISE_LAYERS = ("conv1", "pool1", "conv2", "pool2")


@dataclass
class LayerAttribution:
    """Per-channel mean-gradient scores and activation maps for one layer."""

    layer_name: str
    channel_scores: np.ndarray   # (C,)
    maps: np.ndarray             # (C, h, w) activations

    def __post_init__(self):
        if len(self.channel_scores) != self.maps.shape[0]:
            raise ValueError("channel_scores length must match map count")


def _traced(detector, image: Image, target):
    trace = detector.forward_trace(image)
    detector.backward_trace(trace, target)
    return trace


def layer_attribution(trace, layer_name: str) -> LayerAttribution:
    grads = trace.gradients[layer_name]
    return LayerAttribution(layer_name=layer_name,
                            channel_scores=grads.mean(axis=(1, 2)),
                            maps=trace.activations[layer_name])


def _gradcam_cam(trace) -> np.ndarray:
    """Pre-ReLU class activation map at the last conv layer."""
    att = layer_attribution(trace, LAST_CONV_LAYER)
    return np.tensordot(att.channel_scores, att.maps, axes=1)


def gradcam(detector, image: Image, target="max_score") -> SaliencyMap:
    """Channel weights = spatial mean gradient at conv2; ReLU of the
    weighted activation sum, bilinearly upsampled to image size."""
    trace = _traced(detector, image, target)
    cam = np.maximum(_gradcam_cam(trace), 0.0)
    values = bilinear_upsample(cam, image.height, image.width)
    return SaliencyMap(values, "gradcam")


def gradcampp(detector, image: Image, target="max_score") -> SaliencyMap:
    """Canonical Grad-CAM++: α weights from squared/cubed gradients, channel
    weights = Σ α·ReLU(gradient), then ReLU + upsample as in gradcam."""
    trace = _traced(detector, image, target)
    A = trace.activations[LAST_CONV_LAYER]
    G = trace.gradients[LAST_CONV_LAYER]
    g2 = G * G
    g3 = g2 * G
    denom = 2.0 * g2 + A.sum(axis=(1, 2), keepdims=True) * g3
    alpha = np.where(denom != 0.0, g2 / np.where(denom != 0.0, denom, 1.0), 0.0)
    weights = (alpha * np.maximum(G, 0.0)).sum(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, A, axes=1), 0.0)
    values = bilinear_upsample(cam, image.height, image.width)
    return SaliencyMap(values, "gradcampp")


def _gate_channels(scores: np.ndarray) -> np.ndarray:
    """Indices surviving Ada-SISE's two-stage gate: positive mean gradient,
    then above the Otsu split of the positive scores."""
    positive = np.flatnonzero(scores > 0.0)
    if positive.size == 0:
        return positive
    vals = scores[positive]
    if np.unique(vals).size < 2:
        return positive
    try:
        thr = otsu_threshold(vals)
    except DegenerateInputError:
        return positive
    kept = positive[vals > thr]
    return kept if kept.size else positive


def adasise(detector, image: Image, target="max_score",
            layers=ADASISE_LAYERS) -> SaliencyMap:
    """Fuse attribution masks from gradient-gated feature maps of several
    backbone layers.

    Per layer: score channels by mean gradient, keep the positive ones, drop
    the low Otsu class. Each survivor's activation map, min-max normalized
    and upsampled to input size, acts as an attribution mask: the model is
    re-queried on image ⊙ mask and the resulting confidence weights the mask
    in the layer visualization (a map that preserves the score when kept
    earns a large say). Layer visualizations are normalized and summed.
    """
    trace = _traced(detector, image, target)
    h, w = image.data.shape
    fused = np.zeros((h, w))
    contributed = False
    for name in layers:
        att = layer_attribution(trace, name)
        kept = _gate_channels(att.channel_scores)
        if kept.size == 0:
            continue
        vis = np.zeros((h, w))
        for c in kept:
            mask = normalize_values(bilinear_upsample(att.maps[c], h, w))
            probe = detector.image_score(Image(image.data * mask))
            vis += probe * mask
        fused += normalize_values(vis)
        contributed = True
    if not contributed:
        log.warning("adasise: no channel had a positive mean gradient; "
                    "returning an all-zero map")
        return SaliencyMap(fused, "adasise")
    return SaliencyMap(normalize_values(fused), "adasise")
