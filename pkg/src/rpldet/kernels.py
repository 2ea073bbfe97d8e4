"""Hot numeric kernels: pairwise IoU, grouped greedy NMS, greedy box matching.

Every kernel exists twice: a loop-based version compiled with numba's ``@njit``
and a vectorized pure-numpy fallback. Both perform identical elementwise
arithmetic, so results agree bit for bit. The active backend is chosen at
import time from the ``RPLDET_NUMBA`` environment variable:

    RPLDET_NUMBA=0    force the numpy fallback
    RPLDET_NUMBA=1    require numba (ImportError if unavailable)
    unset / auto      use numba when importable, numpy otherwise

``benchmarks/bench_kernels.py`` times the two backends against each other.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "pairwise_iou",
    "nms_assign",
    "match_greedy",
    "pairwise_iou_numpy",
    "nms_assign_numpy",
    "match_greedy_numpy",
]


# ---------------------------------------------------------------------------
# loop-based implementations (numba-compilable, also valid pure python)
# ---------------------------------------------------------------------------

def _pairwise_iou_loops(boxes_a, boxes_b):
    n = boxes_a.shape[0]
    m = boxes_b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        ax1 = boxes_a[i, 0]
        ay1 = boxes_a[i, 1]
        ax2 = boxes_a[i, 2]
        ay2 = boxes_a[i, 3]
        area_a = (ax2 - ax1) * (ay2 - ay1)
        for j in range(m):
            bx1 = boxes_b[j, 0]
            by1 = boxes_b[j, 1]
            bx2 = boxes_b[j, 2]
            by2 = boxes_b[j, 3]
            iw = min(ax2, bx2) - max(ax1, bx1)
            if iw <= 0.0:
                continue
            ih = min(ay2, by2) - max(ay1, by1)
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_a + (bx2 - bx1) * (by2 - by1) - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def _nms_assign_loops(boxes, areas, order, class_ids, iou_threshold):
    # owner[i] == i marks a survivor; otherwise the index of the survivor
    # that suppressed i. owner_iou[i] is IoU(box_i, owner box) for suppressed
    # boxes and 1.0 (unused) for survivors.
    n = boxes.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    owner_iou = np.ones(n, dtype=np.float64)
    for oi in range(n):
        i = order[oi]
        if owner[i] >= 0:
            continue
        owner[i] = i
        ax1 = boxes[i, 0]
        ay1 = boxes[i, 1]
        ax2 = boxes[i, 2]
        ay2 = boxes[i, 3]
        area_i = areas[i]
        for oj in range(oi + 1, n):
            j = order[oj]
            if owner[j] >= 0 or class_ids[j] != class_ids[i]:
                continue
            iw = min(ax2, boxes[j, 2]) - max(ax1, boxes[j, 0])
            if iw <= 0.0:
                continue
            ih = min(ay2, boxes[j, 3]) - max(ay1, boxes[j, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            union = area_i + areas[j] - inter
            if union <= 0.0:
                continue
            iou = inter / union
            if iou > iou_threshold:
                owner[j] = i
                owner_iou[j] = iou
    return owner, owner_iou


def _match_greedy_loops(pred_boxes, gt_boxes, iou_threshold):
    # pred_boxes must already be sorted by descending score; each GT box is
    # matched at most once. Per prediction: best unmatched GT by IoU, ties
    # broken by the lowest GT index; a match requires IoU >= iou_threshold.
    n = pred_boxes.shape[0]
    m = gt_boxes.shape[0]
    matched = np.full(n, -1, dtype=np.int64)
    gt_taken = np.zeros(m, dtype=np.bool_)
    for k in range(n):
        px1 = pred_boxes[k, 0]
        py1 = pred_boxes[k, 1]
        px2 = pred_boxes[k, 2]
        py2 = pred_boxes[k, 3]
        area_p = (px2 - px1) * (py2 - py1)
        best_iou = -1.0
        best_g = -1
        for g in range(m):
            if gt_taken[g]:
                continue
            iw = min(px2, gt_boxes[g, 2]) - max(px1, gt_boxes[g, 0])
            if iw <= 0.0:
                continue
            ih = min(py2, gt_boxes[g, 3]) - max(py1, gt_boxes[g, 1])
            if ih <= 0.0:
                continue
            inter = iw * ih
            gw = gt_boxes[g, 2] - gt_boxes[g, 0]
            gh = gt_boxes[g, 3] - gt_boxes[g, 1]
            union = area_p + gw * gh - inter
            if union <= 0.0:
                continue
            iou = inter / union
            if iou > best_iou:
                best_iou = iou
                best_g = g
        if best_g >= 0 and best_iou >= iou_threshold:
            matched[k] = best_g
            gt_taken[best_g] = True
    return matched


# ---------------------------------------------------------------------------
# vectorized numpy fallbacks
# ---------------------------------------------------------------------------

def pairwise_iou_numpy(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """IoU matrix of shape (len(a), len(b)); degenerate unions give 0."""
    a = boxes_a[:, None, :]
    b = boxes_b[None, :, :]
    iw = np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0])
    ih = np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1])
    inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
    area_a = (boxes_a[:, 2] - boxes_a[:, 0]) * (boxes_a[:, 3] - boxes_a[:, 1])
    area_b = (boxes_b[:, 2] - boxes_b[:, 0]) * (boxes_b[:, 3] - boxes_b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def nms_assign_numpy(boxes, areas, order, class_ids, iou_threshold):
    """Numpy fallback of the grouped-NMS owner assignment."""
    n = boxes.shape[0]
    owner = np.full(n, -1, dtype=np.int64)
    owner_iou = np.ones(n, dtype=np.float64)
    for oi in range(n):
        i = order[oi]
        if owner[i] >= 0:
            continue
        owner[i] = i
        rest = order[oi + 1:]
        rest = rest[(owner[rest] < 0) & (class_ids[rest] == class_ids[i])]
        if rest.size == 0:
            continue
        iw = np.minimum(boxes[i, 2], boxes[rest, 2]) - np.maximum(boxes[i, 0], boxes[rest, 0])
        ih = np.minimum(boxes[i, 3], boxes[rest, 3]) - np.maximum(boxes[i, 1], boxes[rest, 1])
        inter = np.where((iw > 0.0) & (ih > 0.0), iw * ih, 0.0)
        union = areas[i] + areas[rest] - inter
        iou = np.zeros_like(inter)
        np.divide(inter, union, out=iou, where=union > 0.0)
        hit = iou > iou_threshold
        owner[rest[hit]] = i
        owner_iou[rest[hit]] = iou[hit]
    return owner, owner_iou


def match_greedy_numpy(pred_boxes, gt_boxes, iou_threshold):
    """Numpy fallback of the greedy prediction-to-GT matcher."""
    n = pred_boxes.shape[0]
    m = gt_boxes.shape[0]
    matched = np.full(n, -1, dtype=np.int64)
    if m == 0 or n == 0:
        return matched
    iou = pairwise_iou_numpy(pred_boxes, gt_boxes)
    gt_taken = np.zeros(m, dtype=bool)
    for k in range(n):
        row = np.where(gt_taken, -1.0, iou[k])
        best_g = int(np.argmax(row))
        if row[best_g] > 0.0 and row[best_g] >= iou_threshold:
            matched[k] = best_g
            gt_taken[best_g] = True
    return matched


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

def _resolve_backend() -> bool:
    env = os.environ.get("RPLDET_NUMBA", "auto").strip().lower()
    if env in {"0", "off", "false", "no"}:
        return False
    if env in {"1", "on", "true", "yes", "force"}:
        import numba  # noqa: F401  -- fail loudly when forced

        return True
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


NUMBA_ENABLED = _resolve_backend()

if NUMBA_ENABLED:
    from numba import njit

    pairwise_iou_numba = njit(cache=True)(_pairwise_iou_loops)
    nms_assign_numba = njit(cache=True)(_nms_assign_loops)
    match_greedy_numba = njit(cache=True)(_match_greedy_loops)

    pairwise_iou = pairwise_iou_numba
    nms_assign = nms_assign_numba
    match_greedy = match_greedy_numba
else:
    pairwise_iou_numba = None
    nms_assign_numba = None
    match_greedy_numba = None

    pairwise_iou = pairwise_iou_numpy
    nms_assign = nms_assign_numpy
    match_greedy = match_greedy_numpy


def nms_order(scores: np.ndarray) -> np.ndarray:
    """Descending-score traversal order, ties broken by lower index."""
    return np.argsort(-scores, kind="stable")
