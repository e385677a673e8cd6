"""Shared numeric/image primitives: boxes, masks, interpolation, thresholds.

Coordinate convention: boxes are half-open integer rectangles
[x1, x2) x [y1, y2) in pixel units, so areas and pixel counts are exact.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError

OTSU_BINS = 256


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, half-open pixel convention [x1, x2) x [y1, y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        if self.x1 < 0 or self.y1 < 0 or self.x2 <= self.x1 or self.y2 <= self.y1:
            raise ValueError(f"invalid box ({self.x1}, {self.y1}, {self.x2}, {self.y2})")

    @property
    def width(self) -> int:
        return self.x2 - self.x1

    @property
    def height(self) -> int:
        return self.y2 - self.y1

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x1, self.y1, self.x2, self.y2)

    def inside(self, height: int, width: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def contains(self, x, y) -> bool:
        """Point membership under the half-open convention."""
        return self.x1 <= x < self.x2 and self.y1 <= y < self.y2


@dataclass
class Image:
    """Single-channel intensity image with values in [0, 1].

    ``boxes`` optionally carries ground-truth annotations when the image came
    from an annotated dataset.
    """

    data: np.ndarray
    boxes: list[BBox] = field(default_factory=list)
    image_id: str = ""

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")
        if self.data.min() < 0.0 or self.data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class SaliencyMap:
    """Non-negative per-pixel attribution aligned to an image.

    ``target_box`` is set only by per-detection explainers.
    """

    values: np.ndarray
    method_name: str
    target_box: BBox | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("saliency values must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("saliency contains non-finite values")
        if self.values.min() < 0.0:
            raise ValueError("saliency values must be non-negative")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class Mask:
    """Binary occlusion grid plus its soft upsampled form."""

    grid: np.ndarray          # (s, s) values in {0, 1}
    upsampled: np.ndarray     # (H, W) values in [0, 1]

    def __post_init__(self):
        self.grid = np.asarray(self.grid)
        self.upsampled = np.asarray(self.upsampled, dtype=np.float64)
        if not np.isin(self.grid, (0, 1)).all():
            raise ValueError("mask grid must be binary")
        if self.upsampled.min() < -1e-12 or self.upsampled.max() > 1.0 + 1e-12:
            raise ValueError("upsampled mask must lie in [0, 1]")
        # interpolation of {0,1} cells can overshoot by float rounding dust;
        # clamp so masked products stay valid intensities
        np.clip(self.upsampled, 0.0, 1.0, out=self.upsampled)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; exact on integer coordinates."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def bilinear_upsample(grid, out_h: int, out_w: int, offset: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Bilinearly interpolate a coarse grid onto an out_h x out_w raster.

    Uses the half-pixel convention: output pixel (r, c) samples the grid at
    ((r + 0.5) * s_h / out_h - 0.5 + offset_y, ...), clamped to the grid, so
    every output value is a convex combination of the four nearest grid cells.
    ``offset`` is a sub-cell shift in grid units (used by RISE-style masks).
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2 or grid.shape[0] < 2 or grid.shape[1] < 2:
        raise ValueError("grid must be 2-D with at least 2 cells per side")
    if out_h <= 0 or out_w <= 0:
        raise ValueError("output size must be positive")
    s_h, s_w = grid.shape
    gy = (np.arange(out_h) + 0.5) * (s_h / out_h) - 0.5 + offset[0]
    gx = (np.arange(out_w) + 0.5) * (s_w / out_w) - 0.5 + offset[1]
    gy = np.clip(gy, 0.0, s_h - 1.0)
    gx = np.clip(gx, 0.0, s_w - 1.0)
    y0 = np.minimum(gy.astype(np.int64), s_h - 2)
    x0 = np.minimum(gx.astype(np.int64), s_w - 2)
    wy = (gy - y0)[:, None]
    wx = (gx - x0)[None, :]
    tl = grid[np.ix_(y0, x0)]
    tr = grid[np.ix_(y0, x0 + 1)]
    bl = grid[np.ix_(y0 + 1, x0)]
    br = grid[np.ix_(y0 + 1, x0 + 1)]
    return (tl * (1 - wy) * (1 - wx) + tr * (1 - wy) * wx
            + bl * wy * (1 - wx) + br * wy * wx)


def otsu_threshold(values) -> float:
    """Otsu threshold over a 256-bin histogram of min-max-normalized values.

    Returns the threshold in the original value scale; the binarization rule
    is ``value > threshold``. Raises DegenerateInputError on constant input.
    """
    flat = np.asarray(values, dtype=np.float64).ravel()
    if flat.size < 2:
        raise DegenerateInputError("otsu needs at least two values")
    vmin, vmax = flat.min(), flat.max()
    if vmax <= vmin:
        raise DegenerateInputError("otsu undefined for constant input")
    norm = (flat - vmin) / (vmax - vmin)
    hist, _ = np.histogram(norm, bins=OTSU_BINS, range=(0.0, 1.0))
    hist = hist.astype(np.float64)
    total = hist.sum()
    bin_centers = (np.arange(OTSU_BINS) + 0.5) / OTSU_BINS

    w0 = np.cumsum(hist)
    w1 = total - w0
    m0 = np.cumsum(hist * bin_centers)
    mu_total = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mean0 = m0 / w0
        mean1 = (mu_total - m0) / w1
        between = w0 * w1 * (mean0 - mean1) ** 2
    between[~np.isfinite(between)] = -1.0
    # cut after bin k: classes are bins [0..k] and [k+1..255]; both non-empty
    between[-1] = -1.0
    k = int(np.argmax(between))
    threshold_norm = (k + 1) / OTSU_BINS
    return float(vmin + threshold_norm * (vmax - vmin))


def normalize_values(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant array maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = values.min(), values.max()
    if vmax <= vmin:
        return np.zeros_like(values)
    return (values - vmin) / (vmax - vmin)


def normalize_map(s: SaliencyMap) -> SaliencyMap:
    """Min-max normalize a saliency map.

    A constant map normalizes to all zeros: an explanation that assigns every
    pixel the same weight carries no evidence, and downstream metrics should
    treat it as absent attribution.
    """
    return SaliencyMap(values=normalize_values(s.values),
                       method_name=s.method_name,
                       target_box=s.target_box)
