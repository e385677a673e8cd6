"""LIME for the detector's image-level score.

Perturbed samples toggle SLIC segments on/off (off = mean-intensity fill),
the detector is queried for each sample, and a sparse linear surrogate is fit
by coordinate-descent LASSO. Sparsity is steered by bisecting the L1 penalty
until at most ``k_features`` coefficients survive.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .imaging import Image, SaliencyMap
from .segmentation import Superpixels, slic

log = logging.getLogger(__name__)

LASSO_MAX_SWEEPS = 2000
LASSO_TOL = 1e-12
BISECTION_STEPS = 42


@dataclass
class SurrogateModel:
    """Sparse linear model over segment indicator features."""

    weights: np.ndarray
    intercept: float
    lam: float
    selected: tuple
    status: str = "ok"

    def predict(self, z: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(z, dtype=np.float64) @ self.weights


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def lasso_coordinate_descent(X, y, lam, sample_weight=None, w0=None, b0=None,
                             max_sweeps=LASSO_MAX_SWEEPS, tol=LASSO_TOL):
    """Minimize 0.5·Σᵢ ωᵢ(yᵢ − b − Xᵢ·w)² + λ‖w‖₁ (intercept unpenalized).

    Cyclic coordinate descent with exact single-coordinate updates; returns
    (w, b). Warm starts via ``w0``/``b0`` make the λ-bisection cheap.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, float)
    sw_total = sw.sum()
    if sw_total <= 0.0:
        raise ConfigurationError("sample weights sum to zero")

    Xw = X * sw[:, None]                 # ω-scaled columns, reused every sweep
    colsq = (Xw * X).sum(axis=0)         # Σ ωᵢ Xᵢⱼ²
    w = np.zeros(p) if w0 is None else w0.copy()
    b = float(sw @ y / sw_total) if b0 is None else float(b0)
    r = y - b - X @ w

    for _ in range(max_sweeps):
        delta = 0.0
        shift = float(sw @ r / sw_total)
        if shift != 0.0:
            b += shift
            r -= shift
            delta = abs(shift)
        for j in range(p):
            if colsq[j] == 0.0:
                continue
            rho = float(Xw[:, j] @ r) + colsq[j] * w[j]
            new = _soft_threshold(rho, lam) / colsq[j]
            if new != w[j]:
                r += X[:, j] * (w[j] - new)
                delta = max(delta, abs(new - w[j]))
                w[j] = new
        if delta < tol:
            break
    return w, b


def fit_sparse_surrogate(X, y, sample_weight, k_features) -> SurrogateModel:
    """Bisect λ ∈ [0, λ_max] for the smallest penalty with ≤ k_features
    nonzero weights, then return that fit."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sw = np.asarray(sample_weight, dtype=np.float64)

    w, b = lasso_coordinate_descent(X, y, 0.0, sw)
    if np.count_nonzero(w) <= k_features:
        return SurrogateModel(w, b, 0.0, tuple(np.flatnonzero(w).tolist()))

    b0 = float(sw @ y / sw.sum())
    lam_max = float(np.abs((X * sw[:, None]).T @ (y - b0)).max()) + 1e-12
    lo, hi = 0.0, lam_max
    best = (np.zeros(X.shape[1]), b0, lam_max)
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        w, b = lasso_coordinate_descent(X, y, mid, sw, w0=best[0], b0=best[1])
        if np.count_nonzero(w) <= k_features:
            best = (w, b, mid)
            hi = mid
        else:
            lo = mid
    w, b, lam = best
    return SurrogateModel(w, b, lam, tuple(np.flatnonzero(w).tolist()))


def lime(image: Image, detector, n_samples: int = 1000, k_features: int = 5,
         kernel_width: float = 0.25, seed: int = 0,
         segments: Superpixels | None = None, k_segments: int = 40,
         compactness: float = 10.0, slic_iters: int = 10):
    """Fit the surrogate and paint selected segments with their (clamped)
    weights. Returns ``(SurrogateModel, SaliencyMap)``."""
    if n_samples < 10 * k_features:
        raise ConfigurationError(
            f"n_samples={n_samples} too small for k_features={k_features} "
            f"(need at least {10 * k_features})")
    if segments is None:
        segments = slic(image, k_segments, compactness, slic_iters)
    labels = segments.labels
    k = segments.k

    rng = np.random.default_rng(seed)
    Z = rng.integers(0, 2, size=(n_samples, k)).astype(np.float64)
    Z[0, :] = 1.0                        # the unperturbed instance itself
    fill = float(image.data.mean())

    y = np.empty(n_samples)
    for i in range(n_samples):
        zmap = Z[i][labels]
        perturbed = image.data * zmap + fill * (1.0 - zmap)
        y[i] = detector.image_score(Image(perturbed))

    # cosine distance to the all-ones vector; for binary z this reduces to
    # 1 - sqrt(fraction kept), and an all-zero row lands at distance 1
    d = 1.0 - np.sqrt(Z.mean(axis=1))
    sw = np.exp(-(d * d) / (kernel_width * kernel_width))

    if np.ptp(y) == 0.0:
        log.warning("lime: detector score constant over all %d samples; "
                    "returning zero surrogate", n_samples)
        model = SurrogateModel(np.zeros(k), float(y[0]), 0.0, (),
                               status="degenerate")
        return model, SaliencyMap(np.zeros_like(image.data), "lime")

    model = fit_sparse_surrogate(Z, y, sw, k_features)
    painted = np.maximum(model.weights, 0.0)[labels]
    return model, SaliencyMap(painted, "lime")
