"""Deterministic heatmap rendering: fixed blue-to-red colormap, overlays, PNG.

Rendering is pure integer/float arithmetic over a fixed 256-entry lookup
table, so identical inputs always produce bit-identical PNG payloads.
"""

import io

import numpy as np
from PIL import Image as PILImage

from .imaging import BBox, Image, SaliencyMap, normalize_values

GREEN = (0, 255, 0)
BLUE = (40, 90, 255)
RED = (255, 40, 40)

# Piecewise-linear blue -> cyan -> yellow -> red ramp, 256 entries.
_STOPS = np.array([
    [0, 0, 255],
    [0, 255, 255],
    [255, 255, 0],
    [255, 0, 0],
], dtype=np.float64)


def _build_lut() -> np.ndarray:
    t = np.linspace(0.0, 1.0, 256)
    anchors = np.linspace(0.0, 1.0, len(_STOPS))
    lut = np.stack([np.interp(t, anchors, _STOPS[:, c]) for c in range(3)], axis=1)
    return np.rint(lut).astype(np.uint8)


COLORMAP = _build_lut()


def apply_colormap(norm_values: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] through the fixed LUT to an (H, W, 3) uint8 array."""
    idx = np.clip(np.rint(np.asarray(norm_values) * 255.0), 0, 255).astype(np.intp)
    return COLORMAP[idx]


def draw_box(rgb: np.ndarray, box: BBox, color=GREEN) -> None:
    """Draw a 1-pixel box outline in place (half-open extent)."""
    h, w = rgb.shape[:2]
    x1, y1 = max(box.x1, 0), max(box.y1, 0)
    x2, y2 = min(box.x2, w), min(box.y2, h)
    col = np.array(color, dtype=np.uint8)
    rgb[y1, x1:x2] = col
    rgb[y2 - 1, x1:x2] = col
    rgb[y1:y2, x1] = col
    rgb[y1:y2, x2 - 1] = col


def render_heatmap_overlay(image: Image, s: SaliencyMap, boxes: list[BBox],
                           box_colors: list[tuple[int, int, int]] | None = None) -> np.ndarray:
    """Alpha-blend (0.5) the colormapped saliency over the grayscale image.

    Saliency is min-max normalized first; boxes are outlined on top (green by
    default). Returns an (H, W, 3) uint8 array.
    """
    if (image.height, image.width) != (s.height, s.width):
        raise ValueError(f"saliency {s.values.shape} does not match image "
                         f"{image.data.shape}")
    gray = image.data * 255.0
    heat = apply_colormap(normalize_values(s.values)).astype(np.float64)
    out = np.rint(0.5 * gray[:, :, None] + 0.5 * heat)
    out = np.clip(out, 0, 255).astype(np.uint8)
    for i, box in enumerate(boxes):
        color = box_colors[i] if box_colors else GREEN
        draw_box(out, box, color)
    return out


def png_bytes(rgb: np.ndarray) -> bytes:
    """Encode an (H, W[, 3]) uint8 array as PNG."""
    buf = io.BytesIO()
    PILImage.fromarray(rgb).save(buf, format="PNG")
    return buf.getvalue()


def save_png(path, rgb: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(png_bytes(rgb))
