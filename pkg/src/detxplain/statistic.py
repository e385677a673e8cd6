"""Stage-1 statistic explainers: KDE over proposal centers, PCKDE, Density Map.

These methods read the proposal distribution instead of probing the model,
so they work on every image — including ones where the second stage reports
nothing. The kernel density estimate uses an isotropic bivariate Gaussian,

    p̂(b) = 1/(n·h²) · Σᵢ K₂((Bᵢ − b)/h),   K₂(u) = exp(−|u|²/2)/(2π),

the two-dimensional form of the textbook 1/(nh) estimator (the extra h keeps
the density integrating to one over the plane). The Density Map drops the
smoothing entirely and counts, per pixel, how many proposal boxes contain it.

Conventions: points are (x, y); the density grid is evaluated at integer
pixel coordinates and argmax ties resolve to the first cell in row-major
order, so every quantity is reproducible bit for bit.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .imaging import BBox

SILVERMAN_FACTOR = 1.06
MIN_BANDWIDTH = 0.5          # pixels; a narrower kernel cannot be resolved
DEFAULT_BORDER_BAND = 16     # pixels; negative-case border statistic


@dataclass(frozen=True)
class KdeModel:
    """Fitted kernel density model over proposal centers."""

    centers: np.ndarray        # (n, 2) float, (x, y)
    bandwidth: float

    def __post_init__(self):
        if self.centers.ndim != 2 or self.centers.shape[1] != 2:
            raise ValueError("centers must be an (n, 2) array")
        if len(self.centers) == 0:
            raise ValueError("KDE needs at least one center")
        if not self.bandwidth > 0.0:
            raise ValueError("bandwidth must be positive")


@dataclass(frozen=True)
class DensityEstimate:
    """Pixel-grid evaluation of a KdeModel."""

    grid: np.ndarray           # (H, W) densities, non-negative
    argmax_point: tuple        # (x, y) integer pixel of the maximum
    argmax_value: float


@dataclass(frozen=True)
class PckdeResult:
    """Prediction-consistency grade of one final detection."""

    score: float
    consistent: bool
    detected_center: tuple     # (x, y), continuous box midpoint


@dataclass(frozen=True)
class DensityMapResult:
    """Per-pixel proposal-box membership counts."""

    counts: np.ndarray         # (H, W) non-negative integers
    max_count: int


def silverman_bandwidth(centers: np.ndarray) -> float:
    """h = 1.06 · σ̂ · n^(−1/5) with σ̂ the mean of the per-axis sample stds.

    Floored at MIN_BANDWIDTH so a collapsed proposal cloud still yields a
    usable (if spiky) estimate.
    """
    n = len(centers)
    if n < 2:
        return float(MIN_BANDWIDTH)
    sigma = float(np.mean(np.std(centers, axis=0, ddof=1)))
    return max(SILVERMAN_FACTOR * sigma * n ** (-0.2), MIN_BANDWIDTH)


def fit_kde(proposals, bandwidth="auto") -> KdeModel:
    """Fit a Gaussian KDE to the proposal-box center points."""
    if proposals.count == 0:
        raise ValueError("cannot fit a KDE to an empty proposal set")
    centers = proposals.centers()
    if bandwidth == "auto":
        h = silverman_bandwidth(centers)
    else:
        h = float(bandwidth)
        if not h > 0.0:
            raise ValueError("bandwidth must be positive")
    return KdeModel(centers=centers, bandwidth=h)


def kde_at(model: KdeModel, points: np.ndarray) -> np.ndarray:
    """Densities at arbitrary (m, 2) query points by direct summation."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    h = model.bandwidth
    diff = (pts[:, None, :] - model.centers[None, :, :]) / h
    sq = np.einsum("mnk,mnk->mn", diff, diff)
    k = np.exp(-0.5 * sq) / (2.0 * np.pi)
    return k.sum(axis=1) / (len(model.centers) * h * h)


def kde_density(model: KdeModel, h_img: int, w_img: int) -> DensityEstimate:
    """Evaluate the density at every pixel (x, y) of an h_img × w_img grid.

    Separable evaluation: the bivariate Gaussian factors into per-axis
    kernels, so the grid costs O(n·(H+W)) exponentials plus one matrix
    product instead of O(n·H·W).
    """
    xs = np.arange(w_img, dtype=np.float64)
    ys = np.arange(h_img, dtype=np.float64)
    h = model.bandwidth
    ex = np.exp(-0.5 * ((xs[None, :] - model.centers[:, 0:1]) / h) ** 2)
    ey = np.exp(-0.5 * ((ys[None, :] - model.centers[:, 1:2]) / h) ** 2)
    grid = (ey.T @ ex) / (2.0 * np.pi * len(model.centers) * h * h)
    flat = int(np.argmax(grid))
    ay, ax = divmod(flat, w_img)
    return DensityEstimate(grid=grid, argmax_point=(int(ax), int(ay)),
                           argmax_value=float(grid[ay, ax]))


def pckde(model: KdeModel, estimate: DensityEstimate, final_detection,
          log_space: bool = False) -> PckdeResult:
    """Grade one final detection against the proposal density.

    Default score: p̂(detected center)/p̂(argmax), in (0,1] because the
    center is scored at its nearest pixel and the argmax is the grid
    maximum. ``log_space=True`` instead takes the ratio of log-densities —
    the paper's text supports both readings; the log variant is exposed for
    comparison only and does not keep the (0,1] guarantee.
    """
    cx, cy = final_detection.box.center
    h_img, w_img = estimate.grid.shape
    px = int(np.clip(np.rint(cx), 0, w_img - 1))
    py = int(np.clip(np.rint(cy), 0, h_img - 1))
    peak = estimate.argmax_value
    if not peak > 0.0:
        raise NumericError("degenerate density: zero argmax, cannot grade")
    value = float(estimate.grid[py, px])
    if log_space:
        if not value > 0.0:
            raise NumericError("log-space PCKDE undefined at zero density")
        score = float(np.log(value) / np.log(peak))
    else:
        score = value / peak
    return PckdeResult(score=score, consistent=bool(score > 0.5),
                       detected_center=(float(cx), float(cy)))


def density_map(proposals, h_img: int, w_img: int) -> DensityMapResult:
    """Count, per pixel, the proposal boxes containing it (half-open extents)."""
    counts = np.zeros((h_img, w_img), dtype=np.int64)
    for row in proposals.boxes_array():
        x1, y1, x2, y2 = (int(v) for v in row)
        if x1 < 0 or y1 < 0 or x2 > w_img or y2 > h_img:
            raise ValueError(f"box {(x1, y1, x2, y2)} exceeds {w_img}x{h_img} bounds")
        counts[y1:y2, x1:x2] += 1
    return DensityMapResult(counts=counts, max_count=int(counts.max(initial=0)))


def border_band_fraction(values: np.ndarray, band: int = DEFAULT_BORDER_BAND) -> float:
    """Fraction of total mass lying within ``band`` pixels of any image edge."""
    total = float(values.sum())
    if total <= 0.0:
        return 0.0
    interior = values[band:-band or None, band:-band or None]
    return float((total - interior.sum()) / total)


def negative_case_report(proposals, detections, estimate: DensityEstimate,
                         dm: DensityMapResult,
                         band: int = DEFAULT_BORDER_BAND) -> dict:
    """Bundle the stage-1 evidence for an image, detected or not.

    The border-band mass fractions quantify the corner/border pile-up that
    characterizes proposal distributions on empty scenes; on a genuine
    detection the mass concentrates in the interior instead.
    """
    return {
        "status": "detected" if detections else "no detection",
        "n_detections": len(detections),
        "n_proposals": proposals.count,
        "border_band_px": int(band),
        "density_border_fraction": border_band_fraction(estimate.grid, band),
        "counts_border_fraction": border_band_fraction(
            dm.counts.astype(np.float64), band),
        "density_argmax": [int(v) for v in estimate.argmax_point],
        "max_count": dm.max_count,
    }
