"""Training-loss evaluators for flow, rigid motion, ego-motion and detection.

These are plain functions of predictions and targets; each ``*_grad``
returns the analytic gradient with respect to the prediction arguments
(subgradient 0 at the kinks of the absolute values).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from rigidflow.decoder import OrientedBox, iou_matrix
from rigidflow.rigidmotion import PlanarRigidMotion, wrap_angle

POSITIVE_IOU = 0.6
NEGATIVE_IOU = 0.45
SMOOTH_L1_KNEE = 1.0

POSITIVE, NEGATIVE, IGNORED = 1, 0, -1


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    lam: float = 1.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.lam)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError(f"loss weights must be finite and non-negative: {vals}")


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------


def _pair(pred, gt, width):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, width)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, width)
    if len(pred) != len(gt):
        raise ValueError(f"cardinality mismatch: {len(pred)} predictions vs {len(gt)} targets")
    if len(pred) == 0:
        raise ValueError("loss over zero cells")
    return pred, gt


def flow_loss(pred, gt) -> float:
    """Mean over cells of the l1 distance between predicted and true flow vectors."""
    pred, gt = _pair(pred, gt, 3)
    return float(np.abs(pred - gt).sum(axis=1).mean())


def flow_loss_grad(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt, 3)
    return np.sign(pred - gt) / len(pred)


# ---------------------------------------------------------------------------
# rigid motion
# ---------------------------------------------------------------------------


def _motion_arrays(motions: Sequence[PlanarRigidMotion]):
    theta = np.array([m.theta for m in motions], dtype=np.float64)
    t = np.array([m.t for m in motions], dtype=np.float64).reshape(-1, 2)
    return theta, t


def rigmo_loss_arrays(t_pred, theta_pred, t_gt, theta_gt, lam: float = 1.0) -> float:
    t_pred, t_gt = _pair(t_pred, t_gt, 2)
    th_pred, th_gt = _pair(theta_pred, theta_gt, 1)
    dth = np.abs(wrap_angle(th_pred[:, 0] - th_gt[:, 0]))
    return float((np.abs(t_pred - t_gt).sum(axis=1) + lam * dth).mean())


def rigmo_loss_grad(t_pred, theta_pred, t_gt, theta_gt, lam: float = 1.0):
    """Gradients ``(d/d t_pred, d/d theta_pred)``."""
    t_pred, t_gt = _pair(t_pred, t_gt, 2)
    th_pred, th_gt = _pair(theta_pred, theta_gt, 1)
    k = len(t_pred)
    return np.sign(t_pred - t_gt) / k, lam * np.sign(wrap_angle(th_pred[:, 0] - th_gt[:, 0])) / k


def rigmo_loss(pred: Sequence[PlanarRigidMotion], gt: Sequence[PlanarRigidMotion], lam: float = 1.0) -> float:
    """Mean over cells of ``||t - t*||_1 + lam |theta - theta*|`` in local coordinates.

    Both sides must be expressed about the same per-cell origins; world-frame
    entries or mismatched origins are rejected.
    """
    if len(pred) != len(gt):
        raise ValueError(f"cardinality mismatch: {len(pred)} predictions vs {len(gt)} targets")
    for k, (a, b) in enumerate(zip(pred, gt)):
        if a.is_world or b.is_world:
            raise ValueError(f"cell {k}: rigid-motion loss expects local-frame motions")
        if a.origin != b.origin:
            raise ValueError(f"cell {k}: prediction and target use different origins {a.origin} vs {b.origin}")
    th_p, t_p = _motion_arrays(pred)
    th_g, t_g = _motion_arrays(gt)
    return rigmo_loss_arrays(t_p, th_p, t_g, th_g, lam)


# ---------------------------------------------------------------------------
# ego-motion
# ---------------------------------------------------------------------------


def ego_loss(pred: PlanarRigidMotion, gt: PlanarRigidMotion, lam: float = 1.0) -> float:
    if not (pred.is_world and gt.is_world):
        raise ValueError("ego loss expects world-frame motions")
    return float(np.abs(pred.tvec - gt.tvec).sum() + lam * abs(wrap_angle(pred.theta - gt.theta)))


def ego_loss_grad(pred: PlanarRigidMotion, gt: PlanarRigidMotion, lam: float = 1.0):
    return np.sign(pred.tvec - gt.tvec), lam * float(np.sign(wrap_angle(pred.theta - gt.theta)))


# ---------------------------------------------------------------------------
# detection
# ---------------------------------------------------------------------------


def smooth_l1(x) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    k = SMOOTH_L1_KNEE
    return np.where(x < k, 0.5 * x * x / k, x - 0.5 * k)


def smooth_l1_grad(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    k = SMOOTH_L1_KNEE
    return np.where(np.abs(x) < k, x / k, np.sign(x))


def bce(p, label: int) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return -np.log(p) if label else -np.log1p(-p)


def _check_probs(p):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if len(p) and not ((p > 0) & (p < 1)).all():
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    return p


def det_loss(pos_probs, neg_probs, residual_pred=None, residual_gt=None) -> float:
    """Positive term (cross entropy + smooth-l1 residual) averaged over positives,
    plus cross entropy averaged over negatives."""
    pos = _check_probs(pos_probs)
    neg = _check_probs(neg_probs)
    if len(pos) == 0 and len(neg) == 0:
        raise ValueError("detection loss needs at least one positive or negative proposal")
    total = 0.0
    if len(pos):
        rp = np.zeros((len(pos), 7)) if residual_pred is None else np.asarray(residual_pred, float).reshape(-1, 7)
        rg = np.zeros((len(pos), 7)) if residual_gt is None else np.asarray(residual_gt, float).reshape(-1, 7)
        if len(rp) != len(pos) or len(rg) != len(pos):
            raise ValueError("one residual row per positive proposal")
        total += float((bce(pos, 1) + smooth_l1(rp - rg).sum(axis=1)).mean())
    if len(neg):
        total += float(bce(neg, 0).mean())
    return total


def det_loss_grad(pos_probs, neg_probs, residual_pred=None, residual_gt=None):
    """Gradients ``(d/d pos_probs, d/d neg_probs, d/d residual_pred)``."""
    pos = _check_probs(pos_probs)
    neg = _check_probs(neg_probs)
    g_pos = -1.0 / pos / len(pos) if len(pos) else np.zeros(0)
    g_neg = 1.0 / (1.0 - neg) / len(neg) if len(neg) else np.zeros(0)
    g_res = np.zeros((len(pos), 7))
    if len(pos) and residual_pred is not None:
        rp = np.asarray(residual_pred, float).reshape(-1, 7)
        rg = np.zeros_like(rp) if residual_gt is None else np.asarray(residual_gt, float).reshape(-1, 7)
        g_res = smooth_l1_grad(rp - rg) / len(pos)
    return g_pos, g_neg, g_res


# ---------------------------------------------------------------------------
# proposal matching
# ---------------------------------------------------------------------------


@dataclass
class ProposalMatch:
    labels: np.ndarray
    matched_gt: np.ndarray
    residuals: np.ndarray
    iou: np.ndarray

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == POSITIVE)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NEGATIVE)


def box_residual(anchor: OrientedBox, gt: OrientedBox) -> np.ndarray:
    """Regression target of ``gt`` relative to ``anchor``.

    ``[dx/diag, dy/diag, dz/h, log(l'/l), log(w'/w), log(h'/h), dyaw]`` with
    ``diag`` the footprint diagonal of the anchor.
    """
    la, wa, ha = anchor.size
    diag = np.hypot(la, wa)
    c = np.subtract(gt.center, anchor.center)
    return np.array([
        c[0] / diag,
        c[1] / diag,
        c[2] / ha,
        np.log(gt.size[0] / la),
        np.log(gt.size[1] / wa),
        np.log(gt.size[2] / ha),
        wrap_angle(gt.yaw - anchor.yaw),
    ])


def match_proposals(
    proposals: Sequence[OrientedBox],
    gts: Sequence[OrientedBox],
    pos_iou: float = POSITIVE_IOU,
    neg_iou: float = NEGATIVE_IOU,
) -> ProposalMatch:
    """Label proposals positive / negative / ignored against ground-truth boxes.

    Positive: the best-overlapping proposal of some ground-truth box (with
    non-zero overlap), or IoU above ``pos_iou`` with any box. Negative: not
    positive and IoU below ``neg_iou`` with every box. The rest are ignored.
    """
    n = len(proposals)
    iou = iou_matrix(proposals, gts)
    labels = np.full(n, IGNORED, dtype=np.int64)
    matched = np.full(n, -1, dtype=np.int64)
    residuals = np.zeros((n, 7))
    if n == 0:
        return ProposalMatch(labels, matched, residuals, iou)
    if len(gts) == 0:
        labels[:] = NEGATIVE
        return ProposalMatch(labels, matched, residuals, iou)
    best_iou = iou.max(axis=1)
    pos = best_iou > pos_iou
    for g in range(len(gts)):
        col = iou[:, g]
        if col.max() > 0:
            pos[col == col.max()] = True
    labels[(best_iou < neg_iou) & ~pos] = NEGATIVE
    labels[pos] = POSITIVE
    for k in np.flatnonzero(pos):
        g = int(np.argmax(iou[k]))
        matched[k] = g
        residuals[k] = box_residual(proposals[k], gts[g])
    return ProposalMatch(labels, matched, residuals, iou)


def total_loss(parts, weights: LossWeights = LossWeights()) -> float:
    """``alpha*flow + beta*rigmo + gamma*ego + det`` for ``parts = (flow, rigmo, ego, det)``."""
    flow, rigmo, ego, det = (float(v) for v in parts)
    if not np.isfinite([flow, rigmo, ego, det]).all():
        raise ValueError("loss parts must be finite")
    return weights.alpha * flow + weights.beta * rigmo + weights.gamma * ego + det
