"""Grouped non-maximum suppression with a localization-variance statistic.

Each NMS survivor keeps the boxes it suppressed; the mean IoU between the
survivor and its group measures how tightly the network localized that
object. Survivors with no neighbors get a configurable default (1.0: zero
observed regression variance, the optimistic reading).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .boxes import ScoredBox, boxes_to_array, iou

DEFAULT_NMS_IOU = 0.5
LONE_BOX_MEAN_IOU = 1.0


@dataclass(frozen=True, eq=False)
class PseudoBox:
    """An NMS survivor, its suppressed group, and the group mean IoU."""

    survivor: ScoredBox
    suppressed: tuple[ScoredBox, ...]
    mean_iou: float

    def __post_init__(self):
        object.__setattr__(self, "suppressed", tuple(self.suppressed))

    @property
    def group_size(self) -> int:
        return 1 + len(self.suppressed)


def mean_iou(survivor: ScoredBox, suppressed: Sequence[ScoredBox],
             lone_box_default: float = LONE_BOX_MEAN_IOU) -> float:
    """Mean IoU between a survivor and its suppressed group."""
    if not suppressed:
        return lone_box_default
    total = 0.0
    for s in suppressed:
        total += iou(survivor.box, s.box)
    return total / len(suppressed)


def group_nms(boxes: Sequence[ScoredBox], nms_iou_threshold: float = DEFAULT_NMS_IOU,
              lone_box_mean_iou: float = LONE_BOX_MEAN_IOU) -> list[PseudoBox]:
    """Greedy per-class NMS that keeps each survivor's suppressed group.

    Boxes are visited in descending score order (ties: lower input index
    first); a box is claimed by the first survivor of the same class with
    IoU strictly above the threshold. Different classes never interact.
    Returns survivors in descending score order.
    """
    if not 0.0 < nms_iou_threshold < 1.0:
        raise ValueError(f"nms_iou_threshold must lie in (0, 1), got {nms_iou_threshold}")
    boxes = list(boxes)
    if not boxes:
        return []

    arr = boxes_to_array([b.box for b in boxes])
    areas = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    scores = np.array([b.score for b in boxes], dtype=np.float64)
    class_ids = np.array([b.class_id for b in boxes], dtype=np.int64)
    order = kernels.nms_order(scores)
    owner, owner_iou = kernels.nms_assign(arr, areas, order, class_ids, float(nms_iou_threshold))

    groups: dict[int, list[int]] = {}
    survivors: list[int] = []
    for idx in order:
        idx = int(idx)
        if owner[idx] == idx:
            survivors.append(idx)
            groups[idx] = []
        else:
            groups[int(owner[idx])].append(idx)

    out = []
    for s in survivors:
        members = groups[s]
        if members:
            total = 0.0
            for m in members:
                total += float(owner_iou[m])
            m_iou = total / len(members)
        else:
            m_iou = lone_box_mean_iou
        out.append(PseudoBox(survivor=boxes[s],
                             suppressed=tuple(boxes[m] for m in members),
                             mean_iou=m_iou))
    return out
