"""Layer-wise relevance propagation (epsilon rule) through MiniCNN.

Relevance starts at one stage-2 score (the sigmoid is treated as the
identity for relevance purposes), flows back through the dense head, the
mean-pooled crop, both max-pool stages (winner-takes-all routing), and both
convolutions via R_j = a_j · Σ_k w_jk / (z_k + ε·sign(z_k)) · R_k. ReLU
passes relevance through unchanged.

Biases act as relevance sinks: at every affine layer the share
b_k · R_k / (z_k + ε·sign(z_k)) stays with the bias instead of flowing to
the inputs. Those absorbed amounts are tallied per layer in
``RelevanceField.bias_relevance`` so reports can reconcile the books:
Σ input relevance + Σ bias relevance ≈ explained score, up to ε leakage.
On the ``zero_bias`` MiniCNN variant every sink is empty and the input sum
alone is conserved, which acceptance tests bound.
"""

from dataclasses import dataclass

import numpy as np

from .imaging import Image, SaliencyMap
from .minicnn import conv3x3_backward_input, maxpool2_scatter, resolve_target


@dataclass
class RelevanceField:
    """Per-layer relevance tensors mirroring WhiteBoxTrace activations."""

    layers: dict
    input_relevance: np.ndarray    # (H, W), signed
    score: float                   # the explained stage-2 score
    target_index: int
    bias_relevance: dict           # layer name -> relevance absorbed by biases

    def total(self, layer_name: str) -> float:
        return float(self.layers[layer_name].sum())

    @property
    def absorbed(self) -> float:
        """Total relevance kept by biases instead of reaching the input."""
        return float(sum(self.bias_relevance.values()))


def _stabilized(z: np.ndarray, epsilon: float) -> np.ndarray:
    """z + ε·sign(z) with sign(0) taken as +1 so zeros stay harmless."""
    return z + epsilon * np.where(z >= 0.0, 1.0, -1.0)


def _windowed_fold(s_win: np.ndarray, weights: np.ndarray, c_in: int,
                   window, shape_hw):
    """conv3x3_backward_input restricted to a support window.

    ``s_win`` holds the only nonzero messages, at ``window`` of a
    ``shape_hw`` layer. The window is grown by one pixel (clamped to the
    layer bounds) so every fold write lands inside it; where the grown edge
    is interior the adjacent messages are zero and the helper's reflect-fold
    adds nothing, and where it is the true layer border the reflect-fold is
    exactly the right semantics. Returns (folded window, its slices).
    """
    wy, wx = window
    h, w = shape_hw
    gy = slice(max(wy.start - 1, 0), min(wy.stop + 1, h))
    gx = slice(max(wx.start - 1, 0), min(wx.stop + 1, w))
    grown = np.zeros((s_win.shape[0], gy.stop - gy.start, gx.stop - gx.start))
    grown[:, wy.start - gy.start:wy.stop - gy.start,
          wx.start - gx.start:wx.stop - gx.start] = s_win
    return conv3x3_backward_input(grown, weights, c_in), (gy, gx)


def lrp_epsilon(detector, image: Image, target="max_score",
                epsilon: float = 1e-9) -> RelevanceField:
    trace = detector.forward_trace(image)
    index = resolve_target(trace, target)
    score = float(trace.stage2_scores[index])

    # dense head: features are crop means of pool2 channels
    feats = trace.stage2_features[index]
    z_pre = float(trace.stage2_pre[index])
    head_denom = float(_stabilized(np.array(z_pre), epsilon))
    r_feats = feats * detector.v / head_denom * score
    bias_relevance = {"head": detector.bv / head_denom * score}

    # Relevance lives only in the crop's receptive field, so every step
    # below works on that window and pastes into full-size zero tensors;
    # outside the window all messages are zero and the arithmetic is exact.
    pool2 = trace.activations["pool2"]
    r_pool2 = np.zeros_like(pool2)
    cx1, cy1, cx2, cy2 = trace.cell_boxes[index]
    area = float((cx2 - cx1) * (cy2 - cy1))
    crop = pool2[:, cy1:cy2, cx1:cx2]
    share = r_feats / _stabilized(feats, epsilon) / area
    r_pool2[:, cy1:cy2, cx1:cx2] = crop * share[:, None, None]

    # max-pool: relevance follows the recorded winners (window doubles)
    conv2 = trace.activations["conv2"]
    r_conv2 = np.zeros_like(conv2)
    w2y, w2x = slice(2 * cy1, 2 * cy2), slice(2 * cx1, 2 * cx2)
    r_conv2[:, w2y, w2x] = maxpool2_scatter(
        r_pool2[:, cy1:cy2, cx1:cx2],
        trace.switches["pool2"][:, cy1:cy2, cx1:cx2],
        (conv2.shape[0], 2 * (cy2 - cy1), 2 * (cx2 - cx1)))

    # conv2 (ReLU transparent): message s_k = R_k / (z_k + ε·sign)
    z2 = trace.activations["conv2_pre"]
    s2_win = r_conv2[:, w2y, w2x] / _stabilized(z2[:, w2y, w2x], epsilon)
    bias_relevance["conv2"] = float((detector.b2[:, None, None] * s2_win).sum())
    pool1 = trace.activations["pool1"]
    f2, (f2y, f2x) = _windowed_fold(s2_win, detector.w2, 8,
                                    (w2y, w2x), pool1.shape[1:])
    r_pool1 = np.zeros_like(pool1)
    r_pool1[:, f2y, f2x] = pool1[:, f2y, f2x] * f2

    conv1 = trace.activations["conv1"]
    r_conv1 = np.zeros_like(conv1)
    w1y = slice(2 * f2y.start, 2 * f2y.stop)
    w1x = slice(2 * f2x.start, 2 * f2x.stop)
    r_conv1[:, w1y, w1x] = maxpool2_scatter(
        r_pool1[:, f2y, f2x], trace.switches["pool1"][:, f2y, f2x],
        (conv1.shape[0], 2 * (f2y.stop - f2y.start), 2 * (f2x.stop - f2x.start)))

    z1 = trace.activations["conv1_pre"]
    s1_win = r_conv1[:, w1y, w1x] / _stabilized(z1[:, w1y, w1x], epsilon)
    bias_relevance["conv1"] = float((detector.b1[:, None, None] * s1_win).sum())
    x = trace.activations["input"]
    f1, (f1y, f1x) = _windowed_fold(s1_win, detector.w1, 1,
                                    (w1y, w1x), x.shape[1:])
    r_input = np.zeros_like(x)
    r_input[:, f1y, f1x] = x[:, f1y, f1x] * f1

    layers = {
        "pool2": r_pool2,
        "conv2": r_conv2,
        "pool1": r_pool1,
        "conv1": r_conv1,
        "input": r_input,
    }
    return RelevanceField(layers=layers, input_relevance=r_input[0],
                          score=score, target_index=index,
                          bias_relevance=bias_relevance)


def lrp_saliency(field: RelevanceField) -> SaliencyMap:
    """Metrics and rendering consume |relevance|."""
    return SaliencyMap(np.abs(field.input_relevance), "lrp")
