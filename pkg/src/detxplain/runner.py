"""Method registry and parallel per-image explanation dispatch.

The registry binds the nine method names to their implementations together
with capability requirements: gradient methods need a white-box detector,
second-stage methods need at least one final detection (on silent images
they report a "no detection" status instead of failing), and the statistic
methods (kde, dm) run on the stage-1 proposal set unconditionally — they are
the only explainers with something to say about a missed nodule.

``run_many`` distributes images over a process pool. Every random method
seeds itself from ``derive_seed(master, method, image_id)``, so results are
a pure function of (detector, image, method, master seed) and are identical
for any worker count; only the wall-clock ``seconds`` fields vary between
runs. Timing wraps explanation generation only — the shared detection pass
and all file I/O happen outside the clocks.
"""

from dataclasses import dataclass, field
from time import perf_counter
import multiprocessing

import numpy as np

from .errors import ConfigurationError
from .gradient_methods import adasise, gradcam, gradcampp
from .imaging import Image
from .lime import lime
from .lrp import lrp_epsilon, lrp_saliency
from .perturbation import (DEFAULT_GRID_SIZE, DEFAULT_KEEP_PROB,
                           DEFAULT_N_MASKS, RiseConfig, drise_all, rise)
from .seeds import derive_seed
from .statistic import (DEFAULT_BORDER_BAND, border_band_fraction,
                        density_map, fit_kde, kde_density,
                        negative_case_report, pckde)

METHOD_NAMES = ("lime", "rise", "drise", "gradcam", "gradcampp", "lrp",
                "adasise", "kde", "dm")
WHITE_BOX_METHODS = frozenset({"gradcam", "gradcampp", "lrp", "adasise"})
STAGE2_METHODS = frozenset({"lime", "rise", "drise", "gradcam", "gradcampp",
                            "lrp", "adasise"})
STATISTIC_METHODS = frozenset({"kde", "dm"})

STATUS_OK = "ok"
STATUS_NO_DETECTION = "no detection"


def param_str(params, key: str, default):
    value = params.get(key, default)
    return value if value is None else str(value)


def param_int(params, key: str, default):
    value = params.get(key)
    if value is None:
        return default
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be an integer, got {value!r}") from None


def param_float(params, key: str, default):
    value = params.get(key)
    if value is None:
        return default
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key} must be a number, got {value!r}") from None


def param_bool(params, key: str, default):
    value = params.get(key)
    if value is None:
        return default
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"{key} must be a boolean, got {value!r}")


@dataclass
class ExplanationResult:
    """One saliency/density map (or a bare status) for one image and method.

    ``seconds`` is the per-image method time; for per-detection methods the
    whole sweep is attributed to each of its maps. ``info`` carries
    method-specific scalars (surrogate status, PCKDE score, border-band
    statistics) and is JSON-ready.
    """

    method: str
    image_id: str
    status: str
    values: np.ndarray | None
    seconds: float
    detection_index: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def artifact_name(self) -> str:
        """Stable file stem: ``{image_id}_{method}`` plus the detection index
        for per-detection methods."""
        if self.detection_index is None:
            return f"{self.image_id}_{self.method}"
        return f"{self.image_id}_{self.method}_{self.detection_index}"


def check_methods(detector, methods) -> None:
    """Validate method names and detector compatibility before any work."""
    unknown = [m for m in methods if m not in METHOD_NAMES]
    if unknown:
        raise ConfigurationError(
            f"unknown methods: {', '.join(sorted(unknown))} "
            f"(available: {', '.join(METHOD_NAMES)})")
    if not getattr(detector, "white_box", False):
        incompatible = [m for m in methods if m in WHITE_BOX_METHODS]
        if incompatible:
            raise ConfigurationError(
                f"methods {', '.join(incompatible)} require a white-box "
                f"detector but {type(detector).__name__} is black-box")


def _rise_config(params, prefix: str, seed: int) -> RiseConfig:
    return RiseConfig(
        n_masks=param_int(params, f"{prefix}.n_masks", DEFAULT_N_MASKS),
        grid_size=param_int(params, f"{prefix}.grid_size", DEFAULT_GRID_SIZE),
        keep_prob=param_float(params, f"{prefix}.keep_prob", DEFAULT_KEEP_PROB),
        seed=seed)


def _kde_bandwidth(params):
    raw = params.get("kde.bandwidth")
    if raw is None or str(raw) == "auto":
        return "auto"
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"kde.bandwidth must be 'auto' or a number, got {raw!r}") from None


def _explain_one(detector, image, method, detections, proposals,
                 master_seed, params):
    """Dispatch one method on one image; returns a list of results."""
    image_id = image.image_id or ""
    band = param_int(params, "statistic.border_band", DEFAULT_BORDER_BAND)
    start = perf_counter()

    if method in STAGE2_METHODS and not detections:
        return [ExplanationResult(method=method, image_id=image_id,
                                  status=STATUS_NO_DETECTION, values=None,
                                  seconds=perf_counter() - start)]

    if method == "lime":
        seed = derive_seed(master_seed, "lime", image_id)
        model, s = lime(
            image, detector,
            n_samples=param_int(params, "lime.n_samples", 1000),
            k_features=param_int(params, "lime.k_features", 5),
            kernel_width=param_float(params, "lime.kernel_width", 0.25),
            seed=seed,
            k_segments=param_int(params, "lime.k_segments", 40),
            compactness=param_float(params, "lime.compactness", 10.0),
            slic_iters=param_int(params, "lime.slic_iters", 10))
        seconds = perf_counter() - start
        info = {"surrogate_status": model.status,
                "selected_segments": [int(i) for i in model.selected],
                "lambda": float(model.lam)}
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  seconds, info=info)]

    if method == "rise":
        cfg = _rise_config(params, "rise", derive_seed(master_seed, "rise",
                                                       image_id))
        s = rise(image, detector, cfg)
        seconds = perf_counter() - start
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  seconds, info={"n_masks": cfg.n_masks})]

    if method == "drise":
        cfg = _rise_config(params, "drise", derive_seed(master_seed, "drise",
                                                        image_id))
        maps = drise_all(image, detector, detections, cfg)
        seconds = perf_counter() - start
        return [
            ExplanationResult(method, image_id, STATUS_OK, s.values, seconds,
                              detection_index=k,
                              info={"n_masks": cfg.n_masks,
                                    "target_box": list(s.target_box.as_tuple),
                                    "target_score": float(detections[k].score)})
            for k, s in enumerate(maps)
        ]

    if method == "gradcam":
        s = gradcam(detector, image)
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  perf_counter() - start)]

    if method == "gradcampp":
        s = gradcampp(detector, image)
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  perf_counter() - start)]

    if method == "lrp":
        relevance = lrp_epsilon(detector, image,
                                epsilon=param_float(params, "lrp.epsilon", 1e-9))
        s = lrp_saliency(relevance)
        seconds = perf_counter() - start
        info = {"explained_score": float(relevance.score),
                "bias_absorbed": float(relevance.absorbed)}
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  seconds, info=info)]

    if method == "adasise":
        s = adasise(detector, image)
        return [ExplanationResult(method, image_id, STATUS_OK, s.values,
                                  perf_counter() - start)]

    if method == "kde":
        model = fit_kde(proposals, bandwidth=_kde_bandwidth(params))
        estimate = kde_density(model, image.height, image.width)
        seconds = perf_counter() - start
        info = {"bandwidth": float(model.bandwidth),
                "border_band_px": band,
                "border_band_fraction": border_band_fraction(estimate.grid,
                                                             band)}
        if detections:
            graded = pckde(model, estimate, detections[0],
                           log_space=param_bool(params, "kde.log_space", False))
            info["pckde"] = float(graded.score)
            info["consistent"] = bool(graded.consistent)
        else:
            dm = density_map(proposals, image.height, image.width)
            info["negative_case"] = negative_case_report(
                proposals, detections, estimate, dm, band)
        return [ExplanationResult(method, image_id, STATUS_OK, estimate.grid,
                                  seconds, info=info)]

    if method == "dm":
        result = density_map(proposals, image.height, image.width)
        values = result.counts.astype(np.float64)
        seconds = perf_counter() - start
        info = {"max_count": int(result.max_count),
                "border_band_px": band,
                "border_band_fraction": border_band_fraction(values, band)}
        if not detections:
            model = fit_kde(proposals, bandwidth=_kde_bandwidth(params))
            estimate = kde_density(model, image.height, image.width)
            info["negative_case"] = negative_case_report(
                proposals, detections, estimate, result, band)
        return [ExplanationResult(method, image_id, STATUS_OK, values,
                                  seconds, info=info)]

    raise ConfigurationError(f"unknown method {method!r}")


def explain_image(detector, image: Image, methods, master_seed: int = 0,
                  params=None):
    """Run the requested methods on one image, in the requested order.

    The detection pass is shared by all methods and excluded from their
    timings. Returns a flat list of ExplanationResult.
    """
    check_methods(detector, methods)
    params = dict(params or {})
    detections = detector.detect(image)
    proposals = detector.stage1_proposals(image)
    results = []
    for method in methods:
        results.extend(_explain_one(detector, image, method, detections,
                                    proposals, master_seed, params))
    return results


def _explain_task(task):
    detector, image, methods, master_seed, params = task
    return explain_image(detector, image, methods, master_seed, params)


def run_many(detector, images, methods, master_seed: int = 0,
             workers: int = 1, params=None):
    """Explain every image; returns one result list per image, in order.

    ``workers > 1`` fans images out to a process pool. Each task is fully
    determined by its arguments, so the output is identical for any worker
    count.
    """
    check_methods(detector, methods)
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")
    tasks = [(detector, image, tuple(methods), master_seed, params)
             for image in images]
    if workers == 1 or len(tasks) <= 1:
        return [_explain_task(task) for task in tasks]
    with multiprocessing.Pool(processes=workers) as pool:
        return list(pool.imap(_explain_task, tasks, chunksize=1))
