"""Detector contracts: anchors, proposals, NMS, and a gradient-free detector.

Both detectors here are two-stage in the Faster-R-CNN sense. Stage 1 scores a
fixed anchor pool (grid of centers x scales x aspect ratios) and keeps the
top `proposal_count` boxes, unsuppressed and unthresholded. Stage 2 rescores
each proposal, applies the score threshold tau, and runs greedy NMS. The
proposal set is deliberately exposed because the statistic explainers (KDE,
density map) consume it directly, including on images with no detections.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .imaging import BBox, Image

DEFAULT_INPUT_SIZE = 128
DEFAULT_STRIDE = 4
# Three scales x two mirrored aspect ratios, sized for the synthetic nodules
# (ground-truth boxes run 20..36 px): every such box has an anchor with
# IoU >= 0.5 even at worst-case grid alignment.
DEFAULT_SCALES = (24.0, 32.0, 42.0)
DEFAULT_RATIOS = (1.0 / 1.3, 1.3)
DEFAULT_PROPOSAL_COUNT = 300
DEFAULT_TAU = 0.5
DEFAULT_NMS_IOU = 0.5


@dataclass(frozen=True)
class Detection:
    """A scored box; stage is 'proposal' (pre-NMS) or 'final'."""

    box: BBox
    score: float
    stage: str = "final"

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0,1]")
        if self.stage not in ("proposal", "final"):
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass
class ProposalSet:
    """Stage-1 output: exactly `count` scored candidate boxes, no suppression."""

    proposals: list

    @property
    def count(self) -> int:
        return len(self.proposals)

    def centers(self) -> np.ndarray:
        """(n, 2) array of box center points, (x, y) order."""
        out = np.empty((len(self.proposals), 2), dtype=np.float64)
        for i, det in enumerate(self.proposals):
            out[i] = det.box.center
        return out

    def boxes_array(self) -> np.ndarray:
        """(n, 4) integer array of (x1, y1, x2, y2) rows."""
        return np.array([det.box.as_tuple for det in self.proposals],
                        dtype=np.int64).reshape(len(self.proposals), 4)


def build_anchor_pool(h: int, w: int, stride: int = DEFAULT_STRIDE,
                      scales=DEFAULT_SCALES, ratios=DEFAULT_RATIOS):
    """All anchor boxes over the stride grid, clipped to image bounds.

    Returns (boxes, cells): boxes is (n, 4) int64 rows (x1, y1, x2, y2) in the
    half-open convention, cells is (n, 2) int64 rows (cell_row, cell_col)
    giving the stage-1 grid cell each anchor is centered on. The anchor order
    is row-major over cells, then scales, then ratios — fixed, so ranking ties
    resolve the same way everywhere.
    """
    cell_rows = np.arange(h // stride)
    cell_cols = np.arange(w // stride)
    half = stride / 2.0
    boxes = []
    cells = []
    for r in cell_rows:
        cy = r * stride + half
        for c in cell_cols:
            cx = c * stride + half
            for s in scales:
                for ratio in ratios:
                    bw = s * np.sqrt(ratio)
                    bh = s / np.sqrt(ratio)
                    x1 = int(np.floor(cx - bw / 2.0 + 0.5))
                    x2 = int(np.floor(cx + bw / 2.0 + 0.5))
                    y1 = int(np.floor(cy - bh / 2.0 + 0.5))
                    y2 = int(np.floor(cy + bh / 2.0 + 0.5))
                    boxes.append((max(0, x1), max(0, y1),
                                  min(w, x2), min(h, y2)))
                    cells.append((r, c))
    return (np.array(boxes, dtype=np.int64),
            np.array(cells, dtype=np.int64))


def select_top(scores: np.ndarray, count: int) -> np.ndarray:
    """Indices of the `count` best scores, ties broken by lower index.

    If there are fewer candidates than `count`, the ranked index list is
    repeated cyclically — a deterministic pad that only triggers for
    unusually small configurations.
    """
    order = np.lexsort((np.arange(scores.size), -scores))
    if scores.size >= count:
        return order[:count]
    return np.resize(order, count)


def nms(detections, iou_threshold: float = DEFAULT_NMS_IOU):
    """Greedy non-maximum suppression; keeps boxes with pairwise IoU <= thr.

    Input may be in any order; candidates are visited by descending score
    with ties broken by input position, so the result is deterministic.
    """
    from .imaging import iou as box_iou
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].score, i))
    kept = []
    for i in order:
        cand = detections[i]
        if all(box_iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


class DetectorBase:
    """Shared two-stage plumbing; subclasses provide the two scoring heads.

    Instances are immutable after construction and safe to share across
    worker processes.
    """

    white_box = False

    def __init__(self, input_size: int = DEFAULT_INPUT_SIZE,
                 stride: int = DEFAULT_STRIDE, scales=DEFAULT_SCALES,
                 ratios=DEFAULT_RATIOS,
                 proposal_count: int = DEFAULT_PROPOSAL_COUNT,
                 tau: float = DEFAULT_TAU,
                 nms_iou: float = DEFAULT_NMS_IOU):
        self.input_size = int(input_size)
        self.stride = int(stride)
        self.scales = tuple(float(s) for s in scales)
        self.ratios = tuple(float(r) for r in ratios)
        self.proposal_count = int(proposal_count)
        self.tau = float(tau)
        self.nms_iou = float(nms_iou)
        self.anchor_boxes, self.anchor_cells = build_anchor_pool(
            self.input_size, self.input_size, self.stride,
            self.scales, self.ratios)

    # -- scoring heads -----------------------------------------------------
    def stage1_scores(self, image: Image) -> np.ndarray:
        """Score every anchor in the pool; shape (n_anchors,)."""
        raise NotImplementedError

    def stage2_scores(self, image: Image, boxes: np.ndarray) -> np.ndarray:
        """Rescore the given (n, 4) boxes; shape (n,)."""
        raise NotImplementedError

    # -- two-stage pipeline ------------------------------------------------
    def check_image(self, image: Image) -> None:
        if image.height != self.input_size or image.width != self.input_size:
            raise DataError(
                f"image is {image.height}x{image.width} but detector expects "
                f"{self.input_size}x{self.input_size}")

    def stage1_proposals(self, image: Image) -> ProposalSet:
        self.check_image(image)
        scores = self.stage1_scores(image)
        keep = select_top(scores, self.proposal_count)
        proposals = [
            Detection(box=BBox(*self.anchor_boxes[i]),
                      score=float(scores[i]), stage="proposal")
            for i in keep
        ]
        return ProposalSet(proposals=proposals)

    def detect(self, image: Image):
        proposals = self.stage1_proposals(image)
        boxes = proposals.boxes_array()
        scores = self.stage2_scores(image, boxes)
        candidates = [
            Detection(box=det.box, score=float(s), stage="final")
            for det, s in zip(proposals.proposals, scores)
            if s > self.tau
        ]
        return nms(candidates, self.nms_iou)

    def image_score(self, image: Image) -> float:
        """Maximum final-detection score, or 0.0 when nothing is detected."""
        detections = self.detect(image)
        return detections[0].score if detections else 0.0


def _integral(data: np.ndarray) -> np.ndarray:
    s = np.zeros((data.shape[0] + 1, data.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(data, axis=0), axis=1, out=s[1:, 1:])
    return s


def _box_sums(integral: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    return (integral[y2, x2] - integral[y1, x2]
            - integral[y2, x1] + integral[y1, x1])


class SyntheticDetector(DetectorBase):
    """Gradient-free detector scoring boxes by center-vs-surround contrast.

    The score of a box is a saturating function of |mean(inside) -
    mean(ring)| where the ring is a fixed-width band around the box. Constant
    images therefore give every anchor the same score, and blobs of either
    polarity light up the boxes that frame them. There is no network
    anywhere, which makes this the reference black-box detector.
    """

    white_box = False

    def __init__(self, ring: int = 4, contrast_scale: float = 0.055,
                 **kwargs):
        super().__init__(**kwargs)
        self.ring = int(ring)
        self.contrast_scale = float(contrast_scale)

    def _contrast(self, image: Image, boxes: np.ndarray) -> np.ndarray:
        integral = _integral(image.data)
        h, w = image.data.shape
        inner = _box_sums(integral, boxes)
        areas = ((boxes[:, 2] - boxes[:, 0])
                 * (boxes[:, 3] - boxes[:, 1])).astype(np.float64)
        outer_boxes = np.stack([
            np.maximum(0, boxes[:, 0] - self.ring),
            np.maximum(0, boxes[:, 1] - self.ring),
            np.minimum(w, boxes[:, 2] + self.ring),
            np.minimum(h, boxes[:, 3] + self.ring),
        ], axis=1)
        outer = _box_sums(integral, outer_boxes)
        outer_areas = ((outer_boxes[:, 2] - outer_boxes[:, 0])
                       * (outer_boxes[:, 3] - outer_boxes[:, 1])).astype(np.float64)
        ring_areas = outer_areas - areas
        ring_means = np.where(ring_areas > 0,
                              (outer - inner) / np.maximum(ring_areas, 1.0),
                              inner / areas)
        return np.abs(inner / areas - ring_means)

    def _score(self, contrast: np.ndarray) -> np.ndarray:
        return 1.0 - np.exp(-contrast / self.contrast_scale)

    def stage1_scores(self, image: Image) -> np.ndarray:
        return self._score(self._contrast(image, self.anchor_boxes))

    def stage2_scores(self, image: Image, boxes: np.ndarray) -> np.ndarray:
        return self._score(self._contrast(image, boxes))
