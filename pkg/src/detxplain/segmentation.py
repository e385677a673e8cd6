"""SLIC superpixels over (intensity, x, y) features.

This is the classic k-means-style SLIC: regular-grid seeds nudged to the
lowest-gradient pixel nearby, windowed assignment rounds under the distance
D^2 = dI^2 + (m/S)^2 * ds^2, then a connectivity pass that merges stray
components into an adjacent segment. Intensity is in [0, 1], so compactness
values are smaller than the ones quoted for Lab color images.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError
from .imaging import Image

FOUR_CONNECTED = np.array([[0, 1, 0],
                           [1, 1, 1],
                           [0, 1, 0]], dtype=bool)


@dataclass
class Superpixels:
    labels: np.ndarray      # (H, W) int labels, contiguous 0..k-1
    k: int                  # final segment count after orphan merging
    compactness: float


def _gradient_magnitude(data: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(data)
    return gy * gy + gx * gx


def _initial_centers(data: np.ndarray, k: int) -> np.ndarray:
    """Regular-grid seeds, each moved to the lowest-gradient 3x3 neighbor.

    The seed itself is evaluated first so it wins ties — on a constant image
    the seeds stay exactly on the grid.
    """
    h, w = data.shape
    ny = max(1, int(round(math.sqrt(k * h / w))))
    nx = max(1, math.ceil(k / ny))
    while ny * nx < k:
        nx += 1
    grad = _gradient_magnitude(data)
    centers = []
    for gy in range(ny):
        for gx in range(nx):
            if len(centers) == k:
                break
            cy = int((gy + 0.5) * h / ny)
            cx = int((gx + 0.5) * w / nx)
            best = (cy, cx)
            best_g = grad[cy, cx]
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = cy + dy, cx + dx
                    if 0 <= yy < h and 0 <= xx < w and grad[yy, xx] < best_g:
                        best, best_g = (yy, xx), grad[yy, xx]
            centers.append((data[best], float(best[0]), float(best[1])))
    return np.array(centers, dtype=np.float64)


def _enforce_connectivity(labels: np.ndarray) -> tuple[np.ndarray, int]:
    """Split every label into 4-connected components; keep each label's
    largest component and merge the rest into an adjacent kept segment."""
    h, w = labels.shape
    comp = np.full((h, w), -1, dtype=np.int64)
    n_comp = 0
    comp_label = []
    for lab in range(labels.max() + 1):
        mask = labels == lab
        if not mask.any():
            continue
        lab_comp, n = ndimage.label(mask, structure=FOUR_CONNECTED)
        comp[mask] = lab_comp[mask] - 1 + n_comp
        n_comp += n
        comp_label.extend([lab] * n)

    sizes = np.bincount(comp.ravel(), minlength=n_comp)
    mains = set()
    by_label = {}
    for cid in range(n_comp):
        by_label.setdefault(comp_label[cid], []).append(cid)
    for lab, cids in by_label.items():
        mains.add(max(cids, key=lambda c: (sizes[c], -c)))

    # Final ids in row-major order of first appearance of each main component.
    final = np.full((h, w), -1, dtype=np.int64)
    next_id = 0
    main_id = {}
    order = comp.ravel()
    for cid in order:
        if cid in mains and cid not in main_id:
            main_id[cid] = next_id
            next_id += 1
    for cid, fid in main_id.items():
        final[comp == cid] = fid

    orphans = [c for c in range(n_comp) if c not in mains]
    while orphans:
        deferred = []
        for cid in orphans:
            mask = comp == cid
            ring = ndimage.binary_dilation(mask, structure=FOUR_CONNECTED) & ~mask
            neighbors = final[ring]
            neighbors = neighbors[neighbors >= 0]
            if neighbors.size == 0:
                deferred.append(cid)
                continue
            counts = np.bincount(neighbors)
            final[mask] = int(np.argmax(counts))
        if len(deferred) == len(orphans):
            # isolated cluster of orphans: absorb the first into segment 0
            final[comp == deferred[0]] = 0
            deferred.pop(0)
        orphans = deferred
    return final, next_id


def slic(image: Image, k: int, compactness: float = 10.0,
         iters: int = 10) -> Superpixels:
    """Segment into roughly k superpixels; returns the post-merge label map."""
    data = image.data
    h, w = data.shape
    if k < 2:
        raise ConfigurationError("slic needs k >= 2")
    if k > h * w / 16:
        raise ConfigurationError(f"k={k} too large for a {h}x{w} image")

    centers = _initial_centers(data, k)
    step = max(1, int(round(math.sqrt(h * w / k))))
    ratio = (compactness / step) ** 2

    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(iters):
        dist = np.full((h, w), np.inf)
        labels.fill(-1)
        for ci in range(len(centers)):
            ival, cy, cx = centers[ci]
            y0, y1 = max(0, int(cy) - step), min(h, int(cy) + step + 1)
            x0, x1 = max(0, int(cx) - step), min(w, int(cx) + step + 1)
            sub = data[y0:y1, x0:x1]
            yy, xx = np.ogrid[y0:y1, x0:x1]
            d2 = (sub - ival) ** 2 + ratio * ((yy - cy) ** 2 + (xx - cx) ** 2)
            better = d2 < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][better] = d2[better]
            labels[y0:y1, x0:x1][better] = ci
        # stragglers outside every window: brute-force assign
        missing = np.argwhere(labels < 0)
        for y, x in missing:
            d2 = ((data[y, x] - centers[:, 0]) ** 2
                  + ratio * ((y - centers[:, 1]) ** 2 + (x - centers[:, 2]) ** 2))
            labels[y, x] = int(np.argmin(d2))
        # center update: mean feature of the assigned pixels
        for ci in range(len(centers)):
            mask = labels == ci
            if mask.any():
                ys, xs = np.nonzero(mask)
                centers[ci] = (data[mask].mean(), ys.mean(), xs.mean())

    final, count = _enforce_connectivity(labels)
    return Superpixels(labels=final, k=count, compactness=compactness)
