"""A miniature white-box two-stage CNN detector with hand-written autodiff.

Architecture (all float64, reflect padding):

    layer        kernel      output shape   biases
    -----------  ----------  -------------  ------------------------
    input        -           1 x 128 x 128  -
    conv1 + ReLU 3x3, 8 ch   8 x 128 x 128  zero
    pool1        max 2x2     8 x 64 x 64    -
    conv2 + ReLU 3x3, 16 ch  16 x 64 x 64   brightness thresholds
    pool2        max 2x2     16 x 32 x 32   -
    rpn head     1x1 conv    32 x 32        scalar (sigmoid objectness)
    stage-2      mean-pooled proposal crop of pool2 -> dense(16) -> sigmoid

Weights are hand-constructed difference-of-Gaussians/edge filters, not
trained. conv1 splits signed Sobel/Laplacian responses into non-negative
channels and keeps a box-smoothed brightness copy; conv2 assembles edge
energy, ring (second-derivative) summaries, and — via its bias terms — three
absolute-brightness detectors: "hyperbright" (echogenic structure well above
the speckle ceiling, saturated by a paired ceiling channel so evidence is a
bounded ramp), "darkish" (attenuated tissue) and "blackness" (signal
dropout). The two heads score "echogenic structure present, not occluded"
with a negative ambient term, so confidence rises with visible bright
evidence, falls with background clutter, and collapses on dropout — which is
what makes occlusion-based explainers informative on this detector.

``zero_bias=True`` builds a diagnostic variant with every bias zeroed. Its
detections are meaningless, but relevance propagation over it conserves
exactly, which is what the conservation audits use.

The backward pass is written by hand so gradient explainers run with no
framework involved. Bias terms are additive constants: they shift forward
pre-activations and are invisible to the backward pass.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .detectors import DetectorBase, Detection, ProposalSet, nms, select_top
from .errors import ConfigurationError
from .imaging import BBox, Image

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()
LAPLACIAN = np.array([[-1.0, -1.0, -1.0],
                      [-1.0, 8.0, -1.0],
                      [-1.0, -1.0, -1.0]])
CROSS = np.array([[1.0, 0.0, -1.0],
                  [0.0, 0.0, 0.0],
                  [-1.0, 0.0, 1.0]])
BOX3 = np.full((3, 3), 1.0 / 9.0)
CENTER = np.zeros((3, 3))
CENTER[1, 1] = 1.0

# Filter gains, chosen so pre-activations on nodule structure are O(1):
# large enough that the epsilon used by relevance propagation is a small
# perturbation, small enough that the sigmoids stay out of saturation.
CONV1_EDGE_GAIN = 2.0
CONV1_LAP_GAIN = 1.0
CONV1_CROSS_GAIN = 1.5
# The box (brightness) channel is taken up by this gain and divided back out
# wherever it is consumed, so the network's outputs are unchanged while the
# pre-activations along the brightness pathway sit well above the relevance
# stabilizer: epsilon leakage scales like eps/z per layer, and brightness in
# [0, 1] would otherwise be the smallest z in the net.
CONV1_BOX_GAIN = 4.0

# Absolute-brightness thresholds for the biased conv2 channels, in image
# intensity units (the conv2 rows divide conv1's box gain back out, so a
# threshold of 0.66 really means image brightness 0.66 after box smoothing
# and max pooling). Calibrated on generated scenes: plain speckle tops out
# near 0.62, echogenic structure (rims and bright disks) clears 0.84, dark
# cores sit near 0.2, and true dropout is 0. The gains below set the
# response slope per unit of brightness past the threshold.
# The hyperbright detector is a saturating ramp built from two ReLU channels
# (ramp at the lower knee minus ramp at the upper knee), so evidence stops
# growing once structure is unambiguously bright: detection then keys on how
# much of the crop is echogenic, not on how far past the ceiling it shines.
HYPER_THRESHOLD = 0.66
HYPER_SATURATION = 0.78
DARK_THRESHOLD = 0.34
BLACK_THRESHOLD = 0.075
HYPER_GAIN = 4.0
DARK_GAIN = 3.0
BLACK_GAIN = 8.0

CONV2_PLAN = (
    # (source conv1 channels, kernel, gain, bias) per conv2 output channel
    ((0, 1, 2, 3), "box", 1.0, 0.0),      # c0  edge energy, smoothed
    ((0, 1), "box", 1.0, 0.0),            # c1  x-edge energy
    ((2, 3), "box", 1.0, 0.0),            # c2  y-edge energy
    ((7,), "box", 1.0, 0.0),              # c3  diagonal edge energy
    ((4, 5), "box", 1.0, 0.0),            # c4  blob (Laplacian) energy
    ((6,), "box", 1.0, 0.0),              # c5  ambient brightness, smoothed
    ((6,), "lap", 1.5, 0.0),              # c6  ring: brighter than surround
    ((6,), "neg_lap", 1.5, 0.0),          # c7  ring: darker than surround
    ((6,), "center", HYPER_GAIN / CONV1_BOX_GAIN,   # c8  hyperbright level
     -HYPER_GAIN * HYPER_THRESHOLD),
    ((6,), "neg_center", DARK_GAIN / CONV1_BOX_GAIN,  # c9  darkish tissue
     DARK_GAIN * DARK_THRESHOLD),
    ((6,), "neg_center", BLACK_GAIN / CONV1_BOX_GAIN,  # c10 signal dropout
     BLACK_GAIN * BLACK_THRESHOLD),
    ((6,), "sobel_x", 1.0, 0.0),          # c11 coarse x-gradient, + lobe
    ((6,), "sobel_y", 1.0, 0.0),          # c12 coarse y-gradient, + lobe
    ((4, 5), "center", 1.0, 0.0),         # c13 blob energy, unsmoothed
    ((0, 1, 2, 3, 4, 5, 7), "box", 0.5, 0.0),  # c14 overall texture activity
    ((6,), "center", HYPER_GAIN / CONV1_BOX_GAIN,   # c15 hyperbright ceiling
     -HYPER_GAIN * HYPER_SATURATION),
)

_KERNELS = {
    "box": BOX3,
    "lap": LAPLACIAN,
    "neg_lap": -LAPLACIAN,
    "sobel_x": SOBEL_X,
    "neg_sobel_x": -SOBEL_X,
    "sobel_y": SOBEL_Y,
    "neg_sobel_y": -SOBEL_Y,
    "center": CENTER,
    "neg_center": -CENTER,
}

# Head weights over the 16 conv2 channels plus a scalar bias each. The
# hyperbright pair (c8 minus its ceiling twin c15) carries the positive
# evidence as a saturating ramp, smoothed ambient brightness (c5) is a mild
# clutter penalty that lets confidence *rise* when irrelevant surroundings
# are suppressed, and blackness (c10) vetoes crops that are substantially
# occluded. The bias places the decision boundary: a crop must show roughly
# half a nodule's worth of echogenic evidence to clear tau = 0.5.
HEAD_WEIGHTS = np.zeros(16)
HEAD_WEIGHTS[8] = 26.0     # + hyperbright evidence, lower knee
HEAD_WEIGHTS[15] = -26.0   # - hyperbright ceiling: saturates the ramp
HEAD_WEIGHTS[5] = -3.6 / CONV1_BOX_GAIN   # - ambient clutter (image units)
HEAD_WEIGHTS[10] = -6.0    # - occlusion veto
RPN_WEIGHTS = HEAD_WEIGHTS
DENSE_WEIGHTS = HEAD_WEIGHTS
RPN_BIAS = -1.0
DENSE_BIAS = -0.55


def build_conv1_weights() -> np.ndarray:
    w = np.zeros((8, 1, 3, 3))
    w[0, 0] = CONV1_EDGE_GAIN * SOBEL_X
    w[1, 0] = -CONV1_EDGE_GAIN * SOBEL_X
    w[2, 0] = CONV1_EDGE_GAIN * SOBEL_Y
    w[3, 0] = -CONV1_EDGE_GAIN * SOBEL_Y
    w[4, 0] = CONV1_LAP_GAIN * LAPLACIAN
    w[5, 0] = -CONV1_LAP_GAIN * LAPLACIAN
    w[6, 0] = CONV1_BOX_GAIN * BOX3
    w[7, 0] = CONV1_CROSS_GAIN * CROSS
    return w


def build_conv2_weights():
    w = np.zeros((16, 8, 3, 3))
    b = np.zeros(16)
    for out_ch, (sources, kernel, gain, bias) in enumerate(CONV2_PLAN):
        for src in sources:
            w[out_ch, src] = gain * _KERNELS[kernel]
        b[out_ch] = bias
    return w, b


def conv3x3(x: np.ndarray, weights: np.ndarray,
            bias: np.ndarray = None) -> np.ndarray:
    """3x3 cross-correlation with reflect padding, stride 1."""
    c_in, h, w = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    win = sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(c_in * 9, h * w)
    out = weights.reshape(weights.shape[0], -1) @ cols
    out = out.reshape(weights.shape[0], h, w)
    if bias is not None:
        out += bias[:, None, None]
    return out


def conv3x3_backward_input(grad_out: np.ndarray, weights: np.ndarray,
                           c_in: int) -> np.ndarray:
    """Adjoint of conv3x3 w.r.t. its input, including the reflect-pad fold."""
    c_out, h, w = grad_out.shape
    cols_grad = weights.reshape(c_out, -1).T @ grad_out.reshape(c_out, h * w)
    cols_grad = cols_grad.reshape(c_in, 3, 3, h, w)
    gpad = np.zeros((c_in, h + 2, w + 2))
    for ky in range(3):
        for kx in range(3):
            gpad[:, ky:ky + h, kx:kx + w] += cols_grad[:, ky, kx]
    # Reflect padding reads border-adjacent cells twice; fold the pad
    # gradient back onto the mirrored interior positions.
    gpad[:, 2, :] += gpad[:, 0, :]
    gpad[:, h - 1, :] += gpad[:, h + 1, :]
    gpad[:, :, 2] += gpad[:, :, 0]
    gpad[:, :, w - 1] += gpad[:, :, w + 1]
    return gpad[:, 1:h + 1, 1:w + 1]


def maxpool2(x: np.ndarray):
    """2x2 max pooling; returns (pooled, switches) with first-max argmax."""
    c, h, w = x.shape
    win = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4)
    win = np.ascontiguousarray(win).reshape(c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=3)
    out = np.take_along_axis(win, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool2_scatter(values: np.ndarray, idx: np.ndarray,
                     in_shape) -> np.ndarray:
    """Route per-window values back to the winning input positions.

    Used both for gradient backprop and winner-takes-all relevance routing.
    """
    c, h, w = in_shape
    out = np.zeros(in_shape)
    ci, yi, xi = np.ogrid[:c, :h // 2, :w // 2]
    out[ci, 2 * yi + idx // 2, 2 * xi + idx % 2] = values
    return out


def cell_boxes_for(boxes: np.ndarray, grid: int, stride: int = 4) -> np.ndarray:
    """Map pixel boxes to the pool2 cells they touch (half-open, clipped)."""
    cx1 = np.clip(boxes[:, 0] // stride, 0, grid - 1)
    cy1 = np.clip(boxes[:, 1] // stride, 0, grid - 1)
    cx2 = np.clip(-(-boxes[:, 2] // stride), 1, grid)
    cy2 = np.clip(-(-boxes[:, 3] // stride), 1, grid)
    return np.stack([cx1, cy1, cx2, cy2], axis=1).astype(np.int64)


@dataclass
class WhiteBoxTrace:
    """Recorded forward pass: named activations plus stage-2 bookkeeping.

    After backward_trace, `gradients` holds the gradient of the selected
    stage-2 score with respect to every recorded activation (same keys and
    shapes as `activations`).
    """

    activations: dict
    switches: dict
    rpn_map: np.ndarray
    proposals: ProposalSet
    cell_boxes: np.ndarray
    stage2_features: np.ndarray
    stage2_pre: np.ndarray
    stage2_scores: np.ndarray
    score: float
    gradients: dict = field(default=None)
    target_index: int = field(default=None)

    def layer(self, name: str) -> np.ndarray:
        return self.activations[name]


def resolve_target(trace: WhiteBoxTrace, target: str) -> int:
    """Map a target selector to a proposal index.

    'max_score' picks the highest stage-2 score (first index on ties);
    'proposal:<i>' picks proposal i directly.
    """
    if target == "max_score":
        return int(np.argmax(trace.stage2_scores))
    if target.startswith("proposal:"):
        try:
            index = int(target.split(":", 1)[1])
        except ValueError:
            raise ConfigurationError(f"bad target selector {target!r}") from None
        if not 0 <= index < trace.stage2_scores.size:
            raise ConfigurationError(
                f"proposal index {index} out of range 0..{trace.stage2_scores.size - 1}")
        return index
    raise ConfigurationError(f"unknown target selector {target!r}")


class MiniCNN(DetectorBase):
    """The white-box detector. See the module docstring for the layer table."""

    white_box = True

    def __init__(self, zero_bias: bool = False, **kwargs):
        super().__init__(**kwargs)
        if self.input_size % 4 != 0:
            raise ConfigurationError("MiniCNN input size must be divisible by 4")
        self.w1 = build_conv1_weights()
        self.b1 = np.zeros(8)
        self.w2, self.b2 = build_conv2_weights()
        self.u = RPN_WEIGHTS.copy()
        self.v = DENSE_WEIGHTS.copy()
        self.bu = RPN_BIAS
        self.bv = DENSE_BIAS
        self.zero_bias = bool(zero_bias)
        if self.zero_bias:
            self.b2 = np.zeros(16)
            self.bu = 0.0
            self.bv = 0.0
        self.grid = self.input_size // 4
        self.anchor_cell_boxes = cell_boxes_for(self.anchor_boxes, self.grid,
                                                self.stride)

    # -- forward -------------------------------------------------------------
    def _backbone(self, data: np.ndarray):
        x = data[None, :, :]
        conv1_pre = conv3x3(x, self.w1, self.b1)
        conv1 = np.maximum(conv1_pre, 0.0)
        pool1, sw1 = maxpool2(conv1)
        conv2_pre = conv3x3(pool1, self.w2, self.b2)
        conv2 = np.maximum(conv2_pre, 0.0)
        pool2, sw2 = maxpool2(conv2)
        activations = {
            "input": x,
            "conv1_pre": conv1_pre,
            "conv1": conv1,
            "pool1": pool1,
            "conv2_pre": conv2_pre,
            "conv2": conv2,
            "pool2": pool2,
        }
        return activations, {"pool1": sw1, "pool2": sw2}

    def _rpn(self, pool2: np.ndarray) -> np.ndarray:
        return expit(np.tensordot(self.u, pool2, axes=([0], [0])) + self.bu)

    def _anchor_scores(self, rpn: np.ndarray) -> np.ndarray:
        """Anchor objectness: mean per-cell RPN score over the box's cells.

        Averaging over the covered cells (rather than reading one center
        cell) makes anchors that frame an entire object outrank anchors that
        hug a part of its boundary.
        """
        integral = np.zeros((self.grid + 1, self.grid + 1))
        np.cumsum(np.cumsum(rpn, axis=0), axis=1, out=integral[1:, 1:])
        cb = self.anchor_cell_boxes
        cx1, cy1, cx2, cy2 = cb[:, 0], cb[:, 1], cb[:, 2], cb[:, 3]
        sums = (integral[cy2, cx2] - integral[cy1, cx2]
                - integral[cy2, cx1] + integral[cy1, cx1])
        return sums / ((cx2 - cx1) * (cy2 - cy1))

    def _crop_features(self, pool2: np.ndarray, cell_boxes: np.ndarray) -> np.ndarray:
        integral = np.zeros((pool2.shape[0], self.grid + 1, self.grid + 1))
        np.cumsum(np.cumsum(pool2, axis=1), axis=2, out=integral[:, 1:, 1:])
        cx1, cy1, cx2, cy2 = (cell_boxes[:, 0], cell_boxes[:, 1],
                              cell_boxes[:, 2], cell_boxes[:, 3])
        sums = (integral[:, cy2, cx2] - integral[:, cy1, cx2]
                - integral[:, cy2, cx1] + integral[:, cy1, cx1])
        areas = ((cx2 - cx1) * (cy2 - cy1)).astype(np.float64)
        return (sums / areas).T  # (n_boxes, channels)

    def stage1_scores(self, image: Image) -> np.ndarray:
        self.check_image(image)
        activations, _ = self._backbone(image.data)
        return self._anchor_scores(self._rpn(activations["pool2"]))

    def stage2_scores(self, image: Image, boxes: np.ndarray) -> np.ndarray:
        self.check_image(image)
        activations, _ = self._backbone(image.data)
        cells = cell_boxes_for(boxes, self.grid, self.stride)
        features = self._crop_features(activations["pool2"], cells)
        return expit(features @ self.v + self.bv)

    def forward_trace(self, image: Image) -> WhiteBoxTrace:
        """One full forward pass: backbone, RPN, proposals, stage-2 scores."""
        self.check_image(image)
        activations, switches = self._backbone(image.data)
        rpn = self._rpn(activations["pool2"])
        anchor_scores = self._anchor_scores(rpn)
        keep = select_top(anchor_scores, self.proposal_count)
        proposals = ProposalSet(proposals=[
            Detection(box=BBox(*self.anchor_boxes[i]),
                      score=float(anchor_scores[i]), stage="proposal")
            for i in keep
        ])
        boxes = self.anchor_boxes[keep]
        cells = cell_boxes_for(boxes, self.grid, self.stride)
        features = self._crop_features(activations["pool2"], cells)
        pre = features @ self.v + self.bv
        scores = expit(pre)
        return WhiteBoxTrace(
            activations=activations,
            switches=switches,
            rpn_map=rpn,
            proposals=proposals,
            cell_boxes=cells,
            stage2_features=features,
            stage2_pre=pre,
            stage2_scores=scores,
            score=float(np.max(scores)),
        )

    def detect(self, image: Image):
        trace = self.forward_trace(image)
        candidates = [
            Detection(box=det.box, score=float(s), stage="final")
            for det, s in zip(trace.proposals.proposals, trace.stage2_scores)
            if s > self.tau
        ]
        return nms(candidates, self.nms_iou)

    def image_score(self, image: Image) -> float:
        # Greedy NMS always keeps the top-scoring candidate, so the maximum
        # final-detection score is just the thresholded stage-2 maximum.
        trace = self.forward_trace(image)
        return trace.score if trace.score > self.tau else 0.0

    # -- backward ------------------------------------------------------------
    def backward_trace(self, trace: WhiteBoxTrace,
                       target: str = "max_score") -> WhiteBoxTrace:
        """Reverse-mode gradients of one stage-2 score w.r.t. every layer.

        Fills trace.gradients (same keys/shapes as trace.activations) and
        trace.target_index, then returns the same trace object.
        """
        index = resolve_target(trace, target)
        s = trace.stage2_scores[index]
        g_pre = s * (1.0 - s)
        g_features = self.v * g_pre

        pool2 = trace.activations["pool2"]
        g_pool2 = np.zeros_like(pool2)
        cx1, cy1, cx2, cy2 = trace.cell_boxes[index]
        area = float((cx2 - cx1) * (cy2 - cy1))
        g_pool2[:, cy1:cy2, cx1:cx2] = (g_features / area)[:, None, None]

        g_conv2 = maxpool2_scatter(g_pool2, trace.switches["pool2"],
                                   trace.activations["conv2"].shape)
        g_conv2_pre = g_conv2 * (trace.activations["conv2_pre"] > 0.0)
        g_pool1 = conv3x3_backward_input(g_conv2_pre, self.w2, 8)
        g_conv1 = maxpool2_scatter(g_pool1, trace.switches["pool1"],
                                   trace.activations["conv1"].shape)
        g_conv1_pre = g_conv1 * (trace.activations["conv1_pre"] > 0.0)
        g_input = conv3x3_backward_input(g_conv1_pre, self.w1, 1)

        trace.gradients = {
            "input": g_input,
            "conv1_pre": g_conv1_pre,
            "conv1": g_conv1,
            "pool1": g_pool1,
            "conv2_pre": g_conv2_pre,
            "conv2": g_conv2,
            "pool2": g_pool2,
        }
        trace.target_index = index
        return trace
