"""Scene-flow, object-motion and ego-motion errors, and the evaluation pipeline."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from rigidflow.augmentor import AugmentedScenePair
from rigidflow.baselines import icp
from rigidflow.config import Config, EvalConfig
from rigidflow.decoder import (
    MotionField,
    NoMotionError,
    OrientedBox,
    assign_boxes,
    background_mask,
    iou_matrix,
    pool_motion,
    pool_object_motion,
    synthesize_gt,
)
from rigidflow.rigidmotion import PlanarRigidMotion, wrap_angle

log = logging.getLogger(__name__)

COLUMNS = ("epe_fg", "epe_bg", "epe_all", "obj_rot", "obj_tr", "ego_rot", "ego_tr", "tp", "fp", "fn")


@dataclass
class EvalReport:
    epe_fg: float = 0.0
    epe_bg: float = 0.0
    epe_all: float = 0.0
    obj_rot: float = 0.0
    obj_tr: float = 0.0
    ego_rot: float = 0.0
    ego_tr: float = 0.0
    tp: int = 0
    fp: int = 0
    fn: int = 0
    n_fg: int = 0
    n_bg: int = 0
    n_scenes: int = 1
    extra: dict = field(default_factory=dict)

    def row(self) -> list:
        return [getattr(self, c) for c in COLUMNS]

    def to_text(self, sep: str = "\t") -> str:
        vals = [f"{v:.6g}" if isinstance(v, float) else str(v) for v in self.row()]
        return sep.join(COLUMNS) + "\n" + sep.join(vals) + "\n"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def is_finite(self) -> bool:
        return bool(np.isfinite([float(v) for v in self.row()]).all())


def combine(reports: Sequence[EvalReport]) -> EvalReport:
    """Pool per-scene reports: EPE weighted by point counts, object errors by TPs, ego by scenes."""
    if not reports:
        raise ValueError("nothing to combine")
    n_fg = sum(r.n_fg for r in reports)
    n_bg = sum(r.n_bg for r in reports)
    tp = sum(r.tp for r in reports)
    scenes = sum(r.n_scenes for r in reports)

    def wavg(attr, weight):
        total = sum(weight(r) for r in reports)
        return sum(getattr(r, attr) * weight(r) for r in reports) / total if total else 0.0

    return EvalReport(
        epe_fg=wavg("epe_fg", lambda r: r.n_fg),
        epe_bg=wavg("epe_bg", lambda r: r.n_bg),
        epe_all=wavg("epe_all", lambda r: r.n_fg + r.n_bg),
        obj_rot=wavg("obj_rot", lambda r: r.tp),
        obj_tr=wavg("obj_tr", lambda r: r.tp),
        ego_rot=wavg("ego_rot", lambda r: r.n_scenes),
        ego_tr=wavg("ego_tr", lambda r: r.n_scenes),
        tp=tp,
        fp=sum(r.fp for r in reports),
        fn=sum(r.fn for r in reports),
        n_fg=n_fg,
        n_bg=n_bg,
        n_scenes=scenes,
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def epe(pred, gt, fg_mask) -> tuple[float, float, float]:
    """Mean endpoint error over foreground, background and all points (0.0 for an empty subset)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    fg = np.asarray(fg_mask, dtype=bool).reshape(-1)
    if pred.shape != gt.shape or pred.ndim != 2 or len(fg) != len(pred):
        raise ValueError(f"misaligned flow fields: {pred.shape}, {gt.shape}, mask {fg.shape}")
    err = np.linalg.norm(pred - gt, axis=1)

    def mean(x):
        return float(x.mean()) if len(x) else 0.0

    return mean(err[fg]), mean(err[~fg]), mean(err)


@dataclass
class ObjectMotionErrors:
    rot: float
    trans: float
    tp: int
    fp: int
    fn: int
    matches: list[tuple[int, int]]


def greedy_match(pred_boxes, gt_boxes, tp_iou: float = 0.5) -> list[tuple[int, int]]:
    """Pairs ``(pred, gt)`` taken in order of decreasing IoU while both are free and IoU >= ``tp_iou``."""
    if not len(pred_boxes) or not len(gt_boxes):
        return []
    iou = iou_matrix(pred_boxes, gt_boxes)
    order = np.argsort(-iou, axis=None, kind="stable")
    used_p, used_g, out = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), iou.shape[1])
        if iou[i, j] < tp_iou:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j))
    return out


def object_motion_errors(
    pred_boxes: Sequence[OrientedBox],
    pred_motions: Sequence[PlanarRigidMotion],
    gt_boxes: Sequence[OrientedBox],
    gt_motions: Sequence[PlanarRigidMotion],
    tp_iou: float = 0.5,
) -> ObjectMotionErrors:
    """Mean wrapped rotation error and translation error over true-positive detections.

    Errors are averaged per object; with no true positive both are 0.0.
    """
    matches = greedy_match(pred_boxes, gt_boxes, tp_iou)
    rot, tr = [], []
    for i, j in matches:
        a, b = pred_motions[i], gt_motions[j]
        rot.append(abs(float(wrap_angle(a.theta - b.theta))))
        tr.append(float(np.linalg.norm(a.tvec - b.tvec)))
    tp = len(matches)
    return ObjectMotionErrors(
        float(np.mean(rot)) if tp else 0.0,
        float(np.mean(tr)) if tp else 0.0,
        tp,
        len(pred_boxes) - tp,
        len(gt_boxes) - tp,
        matches,
    )


def ego_errors(pred: PlanarRigidMotion, gt: PlanarRigidMotion) -> tuple[float, float]:
    if not (pred.is_world and gt.is_world):
        raise ValueError("ego errors expect world-frame motions")
    return abs(float(wrap_angle(pred.theta - gt.theta))), float(np.linalg.norm(pred.tvec - gt.tvec))


# ---------------------------------------------------------------------------
# decoding a field into predictions
# ---------------------------------------------------------------------------


@dataclass
class Decoded:
    boxes: list[OrientedBox]
    apparent: list[PlanarRigidMotion]
    motions: list[PlanarRigidMotion]
    ego: PlanarRigidMotion
    flow: np.ndarray


def decode(field: MotionField, boxes: Sequence[OrientedBox], points) -> Decoded:
    """Pool the field inside each box and over the background, then paint per-point flow.

    A box with no occupied cell falls back to the background motion.
    """
    bg = background_mask(field, boxes)
    if not bg.any():
        raise NoMotionError("no background cell outside the given boxes")
    background = pool_motion(field.theta[bg], field.t[bg])
    ego = background.inverse()
    apparent = []
    for b in boxes:
        try:
            apparent.append(pool_object_motion(field, b))
        except NoMotionError:
            log.warning("box at %s has no occupied cell; treated as static", b.center[:2])
            apparent.append(background)
    motions = [ego.compose(m) for m in apparent]
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    labels, _ = assign_boxes(pts[:, :2], boxes)
    flow = np.zeros_like(pts)
    for k in range(-1, len(boxes)):
        sel = labels == k
        if sel.any():
            m = background if k < 0 else apparent[k]
            flow[sel] = m.apply(pts[sel]) - pts[sel]
    return Decoded(list(boxes), apparent, motions, ego, flow)


@dataclass(frozen=True)
class FieldPerturbation:
    """Offsets added to ground-truth field entries: inside boxes, outside, or both."""

    theta: float = 0.0
    t: tuple[float, float] = (0.0, 0.0)
    target: str = "objects"

    def apply(self, field: MotionField, boxes) -> MotionField:
        out = field.copy()
        bg = background_mask(field, boxes)
        sel = {"objects": ~bg, "background": bg, "all": np.ones_like(bg)}[self.target]
        out.theta[sel] = wrap_angle(out.theta[sel] + self.theta)
        out.t[sel] += np.asarray(self.t, dtype=np.float64)
        return out


def _in_footprint(points, box: OrientedBox, margin: float = 0.0) -> np.ndarray:
    grown = OrientedBox(box.center, (box.size[0] + 2 * margin, box.size[1] + 2 * margin, box.size[2]), box.yaw)
    return grown.contains_xy(points[:, :2])


def icp_field(pair: AugmentedScenePair, cfg: Config, rng_seed: int = 0):
    """Per-cell motion field from ICP: one registration for the scene, one per box.

    Boxes are the ground-truth boxes (the baseline does no detection). The
    scene registration runs on a random subsample of frame t and gives the
    background motion. Each box registers its frame-t points against the
    whole frame-t+1 scan (or only points within ``icp_search_margin`` of the
    box when set), starting from the background estimate. Points less than
    ``icp_floor_clearance`` above the box floor are left out on both sides
    so the road surface does not pin the object in place.
    """
    ec: EvalConfig = cfg.eval
    grid = cfg.grid
    src_all = pair.scan_t.points
    dst_all = pair.scan_t1.points
    rng = np.random.default_rng(rng_seed)
    pick = rng.choice(len(src_all), min(ec.icp_subsample, len(src_all)), replace=False)
    scene = icp(src_all[np.sort(pick)], dst_all, ec.icp_max_iter, ec.icp_tol)
    background = scene.motion.to_planar()
    apparent = []
    for b in pair.boxes:
        floor = b.center[2] - b.size[2] / 2 + ec.icp_floor_clearance
        src = src_all[_in_footprint(src_all, b) & (src_all[:, 2] > floor)]
        near = dst_all[:, 2] > floor
        if ec.icp_search_margin is not None:
            near &= _in_footprint(dst_all, b, ec.icp_search_margin)
        dst = dst_all[near]
        if len(src) < 3 or len(dst) < 3:
            apparent.append(background)
            continue
        apparent.append(icp(src, dst, ec.icp_max_iter, ec.icp_tol, init=background.to_3d()).motion.to_planar())
    gt = synthesize_gt(pair.objects, pair.ego, pair.scan_t, grid)
    cells = gt.field.cells
    labels, _ = assign_boxes(grid.ground_center(cells), pair.boxes)
    motions = [background if k < 0 else apparent[k] for k in labels]
    return MotionField.from_motions(grid, cells, motions), apparent, background


def run_pipeline(
    pair: AugmentedScenePair,
    config: Config | None = None,
    method: str = "gt",
    perturb: FieldPerturbation | None = None,
    rng_seed: int = 0,
) -> EvalReport:
    """Decode a motion field for ``pair`` and score it against the pair's ground truth.

    ``method="gt"`` uses the ground-truth field (optionally perturbed);
    ``method="icp"`` builds the field with the ICP baseline.
    """
    cfg = config or Config()
    # The reference is rebuilt from the boxes and motions: the stored flow file is float32.
    gt = synthesize_gt(pair.objects, pair.ego, pair.scan_t, cfg.grid)
    if method == "gt":
        field = gt.field
        if perturb is not None:
            field = perturb.apply(field, pair.boxes)
    elif method == "icp":
        field, _, _ = icp_field(pair, cfg, rng_seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    dec = decode(field, pair.boxes, pair.scan_t.points)
    fg = gt.fg_mask
    e_fg, e_bg, e_all = epe(dec.flow, gt.flow, fg)
    obj = object_motion_errors(dec.boxes, dec.motions, pair.boxes, pair.motions, cfg.eval.tp_iou)
    er, et = ego_errors(dec.ego, pair.ego)
    return EvalReport(
        e_fg, e_bg, e_all, obj.rot, obj.trans, er, et, obj.tp, obj.fp, obj.fn,
        int(fg.sum()), int((~fg).sum()), 1, {"method": method},
    )
