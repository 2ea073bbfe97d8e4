"""Detection quality and pseudo-label quality metrics.

Average precision uses greedy score-descending matching (each ground-truth
box matchable once, IoU >= threshold) and the all-points interpolated
precision-recall area. The bias audit counts pseudo labels against ground
truth per class; its dispersion (max/min count ratio) is 1 for perfectly
unbiased labeling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .boxes import BBox, ClassCatalog, GroundTruthBox, ScoredBox, boxes_to_array
from .nms import PseudoBox

MATCH_IOU = 0.5


@dataclass(frozen=True)
class Detection:
    """A minimal scored detection, the evaluation-side currency."""

    class_id: int
    box: BBox
    score: float


def detections_from_scored(boxes: Sequence[ScoredBox]) -> list[Detection]:
    return [Detection(class_id=b.class_id, box=b.box, score=b.score) for b in boxes]


def detections_from_pseudo(labels: Sequence[PseudoBox]) -> list[Detection]:
    return [Detection(class_id=p.survivor.class_id, box=p.survivor.box, score=p.survivor.score)
            for p in labels]


@dataclass(frozen=True)
class ClassCounts:
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True, eq=False)
class APResult:
    per_class_ap: Mapping[int, float]
    map_50: float
    counts: Mapping[int, ClassCounts]

    def to_json_dict(self, catalog: ClassCatalog) -> dict:
        return {
            "map_50": self.map_50,
            "per_class_ap": {catalog.names[c]: ap for c, ap in sorted(self.per_class_ap.items())},
            "counts": {catalog.names[c]: {"tp": v.tp, "fp": v.fp, "fn": v.fn}
                       for c, v in sorted(self.counts.items())},
        }


@dataclass(frozen=True)
class ClassAuditRow:
    class_id: int
    pseudo_count: int
    gt_count: int
    ratio: float  # pseudo/gt; nan when gt == 0
    tp: int
    fp: int
    fn: int

    @property
    def recall(self) -> float:
        return self.tp / self.gt_count if self.gt_count > 0 else float("nan")


@dataclass(frozen=True, eq=False)
class BiasAudit:
    rows: tuple[ClassAuditRow, ...]
    dispersion: float  # max/min count ratio over classes with GT; >= 1 when defined

    def row(self, class_id: int) -> ClassAuditRow:
        return self.rows[class_id]

    def to_json_dict(self, catalog: ClassCatalog) -> dict:
        if np.isnan(self.dispersion):
            dispersion = None
        elif np.isinf(self.dispersion):
            dispersion = "inf"
        else:
            dispersion = self.dispersion
        return {
            "dispersion": dispersion,
            "per_class": {
                catalog.names[r.class_id]: {
                    "pseudo_count": r.pseudo_count,
                    "gt_count": r.gt_count,
                    "ratio": None if np.isnan(r.ratio) else r.ratio,
                    "tp": r.tp, "fp": r.fp, "fn": r.fn,
                } for r in self.rows
            },
        }


def _class_matches(predictions: Sequence[Sequence[Detection]],
                   ground_truth: Sequence[Sequence[GroundTruthBox]],
                   class_id: int, iou_threshold: float):
    """Pooled (score, is_tp) pairs for one class, in greedy match order.

    Matching is frame-local, so processing each frame's predictions in
    descending score order reproduces the global greedy result.
    """
    scores: list[float] = []
    flags: list[bool] = []
    n_gt = 0
    for f_idx, (preds, gts) in enumerate(zip(predictions, ground_truth)):
        gt_boxes = [g.box for g in gts if g.class_id == class_id]
        n_gt += len(gt_boxes)
        rows = [(i, p) for i, p in enumerate(preds) if p.class_id == class_id]
        if not rows:
            continue
        order = sorted(range(len(rows)), key=lambda k: (-rows[k][1].score, rows[k][0]))
        pred_arr = boxes_to_array([rows[k][1].box for k in order])
        gt_arr = boxes_to_array(gt_boxes)
        matched = kernels.match_greedy(pred_arr, gt_arr, float(iou_threshold))
        for pos, k in enumerate(order):
            scores.append(rows[k][1].score)
            flags.append(bool(matched[pos] >= 0))
    return scores, flags, n_gt


def _ap_from_pr(tp_flags: np.ndarray, n_gt: int) -> float:
    """All-points interpolated area under the precision-recall curve."""
    tp = np.cumsum(tp_flags.astype(np.float64))
    fp = np.cumsum((~tp_flags).astype(np.float64))
    recall = tp / n_gt
    precision = tp / (tp + fp)
    # precision envelope, monotonically non-increasing from the right
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return float(ap)


def average_precision(predictions: Sequence[Sequence[Detection]],
                      ground_truth: Sequence[Sequence[GroundTruthBox]],
                      class_id: int, iou_threshold: float = MATCH_IOU) -> float:
    """AP of one class; raises when the class never occurs in ground truth."""
    if len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth must align per frame")
    scores, flags, n_gt = _class_matches(predictions, ground_truth, class_id, iou_threshold)
    if n_gt == 0:
        raise ValueError(f"class {class_id} absent from ground truth; AP undefined")
    if not scores:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="stable")
    return _ap_from_pr(np.asarray(flags, dtype=bool)[order], n_gt)


def mean_ap(predictions: Sequence[Sequence[Detection]],
            ground_truth: Sequence[Sequence[GroundTruthBox]],
            catalog: ClassCatalog, iou_threshold: float = MATCH_IOU) -> APResult:
    """Mean AP over the classes present in ground truth."""
    if len(predictions) != len(ground_truth):
        raise ValueError("predictions and ground truth must align per frame")
    present = {g.class_id for gts in ground_truth for g in gts}
    if not present:
        raise ValueError("ground truth is empty; mAP undefined")
    per_class = {}
    counts = {}
    for cid in sorted(present):
        scores, flags, n_gt = _class_matches(predictions, ground_truth, cid, iou_threshold)
        order = np.argsort(-np.asarray(scores), kind="stable") if scores else np.zeros(0, dtype=int)
        flag_arr = np.asarray(flags, dtype=bool)[order]
        per_class[cid] = _ap_from_pr(flag_arr, n_gt) if scores else 0.0
        tp = int(flag_arr.sum())
        counts[cid] = ClassCounts(tp=tp, fp=len(flags) - tp, fn=n_gt - tp)
    map_50 = float(np.mean([per_class[c] for c in sorted(present)]))
    return APResult(per_class_ap=per_class, map_50=map_50, counts=counts)


def pr_curve(predictions: Sequence[Sequence[Detection]],
             ground_truth: Sequence[Sequence[GroundTruthBox]],
             class_id: int, iou_threshold: float = MATCH_IOU):
    """(recall, precision, score) points of one class's PR curve."""
    scores, flags, n_gt = _class_matches(predictions, ground_truth, class_id, iou_threshold)
    if not scores or n_gt == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    order = np.argsort(-np.asarray(scores), kind="stable")
    flag_arr = np.asarray(flags, dtype=bool)[order]
    tp = np.cumsum(flag_arr.astype(np.float64))
    fp = np.cumsum((~flag_arr).astype(np.float64))
    return tp / n_gt, tp / (tp + fp), np.asarray(scores)[order]


def audit_pseudo_labels(pseudo: Sequence[Sequence[Detection]],
                        ground_truth: Sequence[Sequence[GroundTruthBox]],
                        class_count: int, iou_threshold: float = MATCH_IOU) -> BiasAudit:
    """Per-class pseudo-label counts vs ground truth, plus dispersion."""
    if len(pseudo) != len(ground_truth):
        raise ValueError("pseudo labels and ground truth must align per frame")
    rows = []
    ratios = []
    for cid in range(class_count):
        scores, flags, n_gt = _class_matches(pseudo, ground_truth, cid, iou_threshold)
        tp = int(sum(flags))
        n_pseudo = len(flags)
        if n_gt > 0:
            ratio = n_pseudo / n_gt
            ratios.append(ratio)
        else:
            ratio = float("nan")
        rows.append(ClassAuditRow(class_id=cid, pseudo_count=n_pseudo, gt_count=n_gt,
                                  ratio=ratio, tp=tp, fp=n_pseudo - tp, fn=n_gt - tp))
    if ratios:
        mx = max(ratios)
        mn = min(ratios)
        if mx == 0.0:
            dispersion = float("nan")  # no pseudo labels at all: ratio 0/0
        elif mn == 0.0:
            dispersion = float("inf")
        else:
            dispersion = mx / mn
    else:
        dispersion = float("nan")
    return BiasAudit(rows=tuple(rows), dispersion=dispersion)
