"""Quantitative evaluation of saliency explanations against a detector.

Plausibility metrics grade a map against ground-truth boxes: EBPG is the
fraction of saliency energy inside the truth, IoU compares an Otsu-derived
explanation box against each truth box, and Bbox checks how many of the
top-N pixels land inside the truth with N equal to the truth pixel count, so
the metric adapts to object size. Faithfulness metrics re-query the detector
with the explanation itself as input: confidence Drop should be small and
confidence Increase frequent when a map keeps what the detector actually
used. Signed relevance maps reach the metrics already folded to magnitudes
(see lrp_saliency), so every SaliencyMap here is non-negative by type.

``run_benchmark`` drives all of this over a dataset and assembles a
MetricReport whose CSV rows and per-method aggregate means mirror the usual
benchmark tables. Timing covers explanation generation only; metric
computation and file I/O stay off the clock. Everything except the
``seconds`` column is deterministic given the master seed.
"""

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateInputError
from .imaging import BBox, Image, SaliencyMap, iou, normalize_values, otsu_threshold
from .runner import STATUS_OK, check_methods, run_many

METRIC_NAMES = ("ebpg", "iou", "bbox", "drop", "increase")
CSV_HEADER = "image_id,method,ebpg,iou,bbox,drop,increase,seconds"


def _gt_union_mask(shape, gt_boxes) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    for box in gt_boxes:
        mask[box.y1:box.y2, box.x1:box.x2] = True
    return mask


def ebpg(s: SaliencyMap, gt) -> float | None:
    """Energy-based pointing game: saliency mass inside the truth union.

    Invariant under positive scaling of the map. Returns None (metric
    absent) when there is no ground truth to point at, and 0.0 for an
    all-zero map.
    """
    if not gt:
        return None
    total = float(s.values.sum())
    if total == 0.0:
        return 0.0
    inside = float(s.values[_gt_union_mask(s.values.shape, gt)].sum())
    return inside / total


def explanation_box(s: SaliencyMap) -> BBox:
    """Tight bounding box of the above-Otsu-threshold saliency pixels.

    Raises DegenerateInputError for constant maps (no threshold exists).
    """
    values = normalize_values(s.values)
    threshold = otsu_threshold(values)
    ys, xs = np.nonzero(values > threshold)
    return BBox(int(xs.min()), int(ys.min()),
                int(xs.max()) + 1, int(ys.max()) + 1)


def iou_metric(s: SaliencyMap, gt) -> float | None:
    """Mean IoU between the explanation box and each ground-truth box.

    There is one explanation box per map, so matching it against every truth
    box and averaging is the greedy assignment. Constant maps cannot be
    binarized; they score 0 with a warning rather than erroring out of a
    whole benchmark run.
    """
    if not gt:
        return None
    try:
        box = explanation_box(s)
    except DegenerateInputError:
        warnings.warn("constant saliency map: iou metric degenerates to 0",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.mean([iou(box, g) for g in gt]))


def bbox_metric(s: SaliencyMap, gt) -> float | None:
    """Fraction of the top-N saliency pixels inside the truth, N = truth area.

    Rank-based, hence invariant under strictly monotone transforms of the
    values. Ties resolve by row-major pixel index so the metric is a pure
    function of the map.
    """
    if not gt:
        return None
    n = sum(g.area for g in gt)
    order = np.argsort(-s.values, axis=None, kind="stable")[:n]
    hits = _gt_union_mask(s.values.shape, gt).ravel()[order]
    return float(hits.sum() / n)


def drop_increase(detector, image: Image, s: SaliencyMap):
    """Confidence Drop (percent) and Increase flag for explanation-as-input.

    The explanation image is the pixelwise product of the image with the map
    scaled by its own maximum — not min-max normalized — so a uniform map
    reproduces the image exactly (drop 0) and an all-zero map blanks it.
    Returns None when the detector scores the original image 0: there is no
    confidence to lose, and the aggregate tables skip the image.
    """
    y = detector.image_score(image)
    if y <= 0.0:
        return None
    peak = float(s.values.max())
    if peak > 0.0:
        scaled = s.values / peak
    else:
        scaled = np.zeros_like(s.values)
    weighted = Image(data=np.clip(image.data * scaled, 0.0, 1.0))
    o = detector.image_score(weighted)
    drop = max(0.0, y - o) / y * 100.0
    return float(drop), bool(o > y)


def evaluate_map(detector, image: Image, s: SaliencyMap, gt,
                 metrics=METRIC_NAMES) -> dict:
    """All requested metrics for one map; absent metrics map to None."""
    out = {}
    if "ebpg" in metrics:
        out["ebpg"] = ebpg(s, gt)
    if "iou" in metrics:
        out["iou"] = iou_metric(s, gt)
    if "bbox" in metrics:
        out["bbox"] = bbox_metric(s, gt)
    if "drop" in metrics or "increase" in metrics:
        faith = drop_increase(detector, image, s)
        drop_value, increase_value = faith if faith is not None else (None, None)
        if "drop" in metrics:
            out["drop"] = drop_value
        if "increase" in metrics:
            out["increase"] = increase_value
    return out


@dataclass(frozen=True)
class MetricRow:
    """One CSV row: metrics may be None (absent), seconds never is."""

    image_id: str
    method: str
    ebpg: float | None
    iou: float | None
    bbox: float | None
    drop: float | None
    increase: bool | None
    seconds: float


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    return repr(float(value))


@dataclass
class MetricReport:
    """Per-image rows plus per-method aggregate means.

    In the aggregates the increase flag is reported as the percentage of
    images on which confidence rose; every other metric is a plain mean over
    the images where it applied.
    """

    rows: list
    aggregates: dict

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(",".join([
                r.image_id, r.method, _cell(r.ebpg), _cell(r.iou),
                _cell(r.bbox), _cell(r.drop), _cell(r.increase),
                repr(float(r.seconds)),
            ]))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.aggregates, indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Fixed-width text rendering of the aggregates for terminal output."""
        columns = list(METRIC_NAMES) + ["seconds"]
        header = f"{'method':<10}" + "".join(f"{c:>10}" for c in columns)
        lines = [header]
        for method, entry in self.aggregates.items():
            cells = []
            for c in columns:
                value = entry.get(c)
                cells.append(f"{value:>10.4f}" if value is not None else f"{'-':>10}")
            lines.append(f"{method:<10}" + "".join(cells))
        return "\n".join(lines)


def aggregate_rows(rows, metrics=METRIC_NAMES) -> dict:
    """method -> metric -> mean over the rows where the metric applied."""
    by_method = {}
    for row in rows:
        by_method.setdefault(row.method, []).append(row)
    out = {}
    for method, method_rows in by_method.items():
        entry = {}
        for metric in metrics:
            values = [getattr(r, metric) for r in method_rows]
            values = [v for v in values if v is not None]
            if not values:
                continue
            if metric == "increase":
                entry[metric] = float(np.mean([1.0 if v else 0.0
                                               for v in values]) * 100.0)
            else:
                entry[metric] = float(np.mean(values))
        entry["seconds"] = float(np.mean([r.seconds for r in method_rows]))
        out[method] = entry
    return out


def check_metrics(metrics) -> None:
    unknown = [m for m in metrics if m not in METRIC_NAMES]
    if unknown:
        raise ConfigurationError(
            f"unknown metrics: {', '.join(sorted(unknown))} "
            f"(available: {', '.join(METRIC_NAMES)})")


def run_benchmark(dataset, detector, methods, metrics=METRIC_NAMES,
                  master_seed: int = 0, workers: int = 1, params=None):
    """Explain and score a whole dataset; returns (MetricReport, results).

    One row per (image, method) in dataset-then-requested-method order. For
    per-detection methods the first detection's map is the one evaluated.
    Rows for "no detection" statuses keep their timing but carry no metric
    values. The second return value holds the evaluated per-image
    ExplanationResult lists so callers can persist the maps themselves.
    """
    check_methods(detector, methods)
    check_metrics(metrics)
    per_image = run_many(detector, dataset, methods, master_seed=master_seed,
                         workers=workers, params=params)
    rows = []
    for image, results in zip(dataset, per_image):
        gt = image.boxes or []
        for method in methods:
            mine = [r for r in results if r.method == method]
            lead = mine[0]
            if lead.status != STATUS_OK:
                scores = {}
            else:
                s = SaliencyMap(values=lead.values, method_name=method)
                scores = evaluate_map(detector, image, s, gt, metrics)
            rows.append(MetricRow(
                image_id=image.image_id or "",
                method=method,
                ebpg=scores.get("ebpg"),
                iou=scores.get("iou"),
                bbox=scores.get("bbox"),
                drop=scores.get("drop"),
                increase=scores.get("increase"),
                seconds=lead.seconds,
            ))
    report = MetricReport(rows=rows, aggregates=aggregate_rows(rows, metrics))
    return report, per_image
