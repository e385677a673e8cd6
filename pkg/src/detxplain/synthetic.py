"""Synthetic "nodule" scene generator.

A scene is a speckle-textured background (multiplicative uniform noise
smoothed by a 3x3 box filter) with zero or more elliptical blobs. Blobs come
in two kinds, mirroring how thyroid nodules read in B-mode ultrasound:

* dark (hypoechoic) nodules — an attenuated core wrapped in a thin echogenic
  rim, the classic "halo sign";
* bright (hyperechoic) nodules — a uniformly echogenic disk.

Every edge is diffuse: core, rim and disk profiles are raised-cosine ramps in
normalized ellipse radius, and the rim sits strictly inside the reported
ground-truth box so brightness-sensitive detectors peak inside the
annotation. Everything is a pure function of (size, nodule count, seed), and
intensities are quantized to the 8-bit grid up front so an in-memory scene is
bit-identical to its PNG round trip.
"""

from dataclasses import dataclass

import numpy as np

from .errors import GenerationError
from .imaging import BBox, Image

SPECKLE_AMPLITUDE = 0.35
BACKGROUND_LEVEL = 0.5

# Radial profile breakpoints, in units of normalized ellipse radius (the
# ground-truth ellipse boundary is rho = 1).
CORE_PLATEAU = 0.45        # dark core holds full depth inside this radius
CORE_FALLOFF = 0.72        # ... and fades to zero here
HALO_CENTER = 0.74         # echogenic rim bump location
HALO_HALFWIDTH = 0.16      # rim support is [0.58, 0.90] — inside the GT box
BRIGHT_PLATEAU = 0.60      # bright disk holds full boost inside this radius
BRIGHT_FALLOFF = 0.88

DARK_DEPTH = (0.64, 0.70)      # core attenuation, multiplier 1 - depth
HALO_GAIN = (1.08, 1.18)       # rim boost, multiplier 1 + gain at the peak
BRIGHT_DEPTH = (1.00, 1.15)    # disk boost
DARK_PROBABILITY = 0.6

MIN_RADIUS = 10
MAX_RADIUS = 17
PLACEMENT_RETRIES = 60
GT_GAP = 6                 # minimum pixel gap between ground-truth boxes


@dataclass
class SyntheticScene:
    image: Image
    ground_truth: list[BBox]
    seed: int


def box3(values: np.ndarray) -> np.ndarray:
    """3x3 box filter with reflect padding."""
    p = np.pad(values, 1, mode="reflect")
    out = np.zeros_like(values, dtype=np.float64)
    h, w = values.shape
    for dy in range(3):
        for dx in range(3):
            out += p[dy:dy + h, dx:dx + w]
    return out / 9.0


def _falloff(rho: np.ndarray, inner: float, outer: float) -> np.ndarray:
    """Raised-cosine 1 -> 0 ramp over the [inner, outer] radius band."""
    t = np.clip((rho - inner) / (outer - inner), 0.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def _bump(rho: np.ndarray, center: float, halfwidth: float) -> np.ndarray:
    """Raised-cosine bump of unit peak on |rho - center| < halfwidth."""
    t = np.clip((rho - center) / halfwidth, -1.0, 1.0)
    return 0.5 * (1.0 + np.cos(np.pi * t))


def generate_scene(h: int, w: int, n_nodules: int, seed: int,
                   polarity: str = "mixed") -> SyntheticScene:
    """Generate one scene; fully deterministic in its arguments.

    polarity: 'mixed' draws each blob dark with probability 0.6, else
    bright; 'dark'/'bright' force one kind (used by targeted tests).
    """
    if h < 64 or w < 64:
        raise ValueError("scene must be at least 64x64")
    if not 0 <= n_nodules <= 3:
        raise ValueError("n_nodules must be in 0..3")
    if polarity not in ("mixed", "dark", "bright"):
        raise ValueError(f"unknown polarity {polarity!r}")

    rng = np.random.default_rng(seed)
    noise = rng.uniform(-SPECKLE_AMPLITUDE, SPECKLE_AMPLITUDE, size=(h, w))
    background = BACKGROUND_LEVEL * (1.0 + box3(noise))

    ys, xs = np.mgrid[0:h, 0:w]
    factor = np.ones((h, w), dtype=np.float64)
    boxes: list[BBox] = []
    for _ in range(n_nodules):
        placed = False
        for _attempt in range(PLACEMENT_RETRIES):
            a = rng.uniform(MIN_RADIUS, MAX_RADIUS)   # semi-axis along x
            b = rng.uniform(MIN_RADIUS, MAX_RADIUS)   # semi-axis along y
            margin = 6.0
            cx = rng.uniform(a + margin, w - a - margin)
            cy = rng.uniform(b + margin, h - b - margin)
            if polarity == "mixed":
                dark = rng.random() < DARK_PROBABILITY
            else:
                dark = polarity == "dark"
            depth = rng.uniform(*(DARK_DEPTH if dark else BRIGHT_DEPTH))
            halo = rng.uniform(*HALO_GAIN)
            candidate = BBox(int(np.floor(cx - a)), int(np.floor(cy - b)),
                             int(np.ceil(cx + a)), int(np.ceil(cy + b)))
            clear = all(
                candidate.x2 + GT_GAP <= other.x1 or other.x2 + GT_GAP <= candidate.x1
                or candidate.y2 + GT_GAP <= other.y1 or other.y2 + GT_GAP <= candidate.y1
                for other in boxes)
            if not clear:
                continue
            rho = np.sqrt(((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2)
            if dark:
                factor *= (1.0 - depth * _falloff(rho, CORE_PLATEAU, CORE_FALLOFF)
                           + halo * _bump(rho, HALO_CENTER, HALO_HALFWIDTH))
            else:
                factor *= 1.0 + depth * _falloff(rho, BRIGHT_PLATEAU, BRIGHT_FALLOFF)
            boxes.append(candidate)
            placed = True
            break
        if not placed:
            raise GenerationError(
                f"could not place nodule {len(boxes) + 1} of {n_nodules} "
                f"after {PLACEMENT_RETRIES} attempts (seed {seed})")

    data = np.clip(background * factor, 0.0, 1.0)
    # Snap to the 8-bit intensity grid: what the detector sees in memory is
    # exactly what it will see again after the PNG round trip.
    data = np.rint(data * 255.0) / 255.0
    return SyntheticScene(image=Image(data=data, boxes=list(boxes)),
                          ground_truth=boxes, seed=seed)


def dataset_nodule_counts(n: int, master_seed: int) -> np.ndarray:
    """Per-scene nodule counts for a generated dataset, drawn from {0, 1, 2}."""
    from .seeds import derive_rng
    rng = derive_rng(master_seed, "nodule-counts")
    return rng.integers(0, 3, size=n)


def generate_dataset_scenes(n: int, h: int, w: int, master_seed: int):
    """Yield (scene_id, scene) pairs for a deterministic n-scene dataset."""
    from .seeds import derive_seed
    counts = dataset_nodule_counts(n, master_seed)
    for i in range(n):
        scene_seed = derive_seed(master_seed, "scene", i)
        yield f"{i:04d}", generate_scene(h, w, int(counts[i]), scene_seed)
