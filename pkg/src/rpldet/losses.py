"""Loss stack for self-training: hard detection loss on certain labels,
soft distribution-matching loss on the proposals of uncertain labels, and
their sum. Uncertain labels contribute no regression term.

Probabilities are clamped to [1e-12, 1] inside every log. The per-equation
functions return raw sums; batch normalization (mean over label counts) is
applied once when assembling the total, controlled by ``reduction``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .assignment import ProposalMatch
from .boxes import BBox, ClassDistribution

PROB_EPS = 1e-12
LOGSIZE_CLIP = 8.0


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: float
    l_reg: float
    l_det: float
    l_u: float
    l_sl: float

    def __post_init__(self):
        for name in ("l_cls", "l_reg", "l_det", "l_u", "l_sl"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"non-finite loss component {name}={v}")

    @classmethod
    def build(cls, l_cls: float, l_reg: float, l_u: float) -> "LossBreakdown":
        l_det = l_cls + l_reg
        return cls(l_cls=l_cls, l_reg=l_reg, l_det=l_det, l_u=l_u, l_sl=l_det + l_u)

    @classmethod
    def zero(cls) -> "LossBreakdown":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, eq=False)
class RegressionTarget:
    """Center/log-size offsets between an anchor box and a target box."""

    offsets: np.ndarray  # (4,): dx, dy, dlog_w, dlog_h

    def __post_init__(self):
        o = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", o)
        if o.shape != (4,):
            raise ValueError(f"offsets must have shape (4,), got {o.shape}")
        if not np.all(np.isfinite(o)):
            raise ValueError("offsets must be finite")


def encode_offsets(anchor: BBox, target: BBox) -> RegressionTarget:
    """Offsets that map the anchor onto the target box."""
    aw, ah = anchor.width, anchor.height
    tw, th = target.width, target.height
    if aw <= 0 or ah <= 0 or tw <= 0 or th <= 0:
        raise ValueError("offset encoding requires positive box sizes")
    acx = 0.5 * (anchor.x_min + anchor.x_max)
    acy = 0.5 * (anchor.y_min + anchor.y_max)
    tcx = 0.5 * (target.x_min + target.x_max)
    tcy = 0.5 * (target.y_min + target.y_max)
    return RegressionTarget(offsets=np.array(
        [(tcx - acx) / aw, (tcy - acy) / ah, math.log(tw / aw), math.log(th / ah)]))


def decode_offsets(anchor: BBox, offsets: np.ndarray) -> BBox:
    """Apply center/log-size offsets to an anchor box.

    Log-size terms are clipped to +-LOGSIZE_CLIP so a wild regressor output
    still yields a finite box (the clip is far outside any sane range).
    """
    aw, ah = anchor.width, anchor.height
    if aw <= 0 or ah <= 0:
        raise ValueError("offset decoding requires a non-degenerate anchor")
    dx, dy, dw, dh = (float(v) for v in offsets)
    cx = 0.5 * (anchor.x_min + anchor.x_max) + dx * aw
    cy = 0.5 * (anchor.y_min + anchor.y_max) + dy * ah
    w = aw * math.exp(min(max(dw, -LOGSIZE_CLIP), LOGSIZE_CLIP))
    h = ah * math.exp(min(max(dh, -LOGSIZE_CLIP), LOGSIZE_CLIP))
    return BBox(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)


def cls_loss(pred: ClassDistribution, target_class: int) -> float:
    """Negative log likelihood of the target class."""
    if not 0 <= target_class < pred.class_count:
        raise ValueError(f"target_class {target_class} outside catalog of size {pred.class_count}")
    p = min(max(float(pred.probs[target_class]), PROB_EPS), 1.0)
    return -math.log(p)


def smooth_l1(error: float) -> float:
    e = abs(error)
    return 0.5 * e * e if e < 1.0 else e - 0.5


def reg_loss(pred_offsets: RegressionTarget, target_offsets: RegressionTarget) -> float:
    """Smooth-L1 summed over the four offset components."""
    total = 0.0
    for e in (pred_offsets.offsets - target_offsets.offsets):
        total += smooth_l1(float(e))
    return total


def soft_ce(teacher_probs: np.ndarray, student_probs: np.ndarray) -> float:
    """Cross entropy of the student under the teacher's soft distribution."""
    s = np.minimum(np.maximum(student_probs, PROB_EPS), 1.0)
    return float(-(teacher_probs * np.log(s)).sum())


def uncertain_loss(matches: Sequence[ProposalMatch],
                   student_dists: Sequence[ClassDistribution]) -> float:
    """Soft distillation loss summed over every proposal of every match.

    ``student_dists`` must align one-to-one with the matches' flattened
    proposal lists; teacher distributions are used as-is (no sharpening).
    """
    n_p = sum(m.n_p for m in matches)
    if n_p != len(student_dists):
        raise ValueError(f"{n_p} proposals but {len(student_dists)} student distributions")
    total = 0.0
    k = 0
    for m in matches:
        for t in m.teacher_dists:
            s = student_dists[k]
            if s.class_count != t.class_count:
                raise ValueError("teacher/student class counts differ")
            total += soft_ce(t.probs, s.probs)
            k += 1
    return total


def total_loss(certain_terms: Sequence[tuple[float, float]],
               uncertain_terms: Sequence[float],
               reduction: str = "mean") -> LossBreakdown:
    """Combine per-label loss terms into the full breakdown.

    ``certain_terms`` holds (cls, reg) per certain label, ``uncertain_terms``
    one soft-CE value per uncertain proposal. ``reduction="mean"`` divides
    each part by its own label/proposal count; ``"sum"`` keeps raw sums.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    l_cls = sum(t[0] for t in certain_terms)
    l_reg = sum(t[1] for t in certain_terms)
    l_u = sum(uncertain_terms)
    if reduction == "mean":
        if certain_terms:
            l_cls /= len(certain_terms)
            l_reg /= len(certain_terms)
        if uncertain_terms:
            l_u /= len(uncertain_terms)
    return LossBreakdown.build(l_cls=l_cls, l_reg=l_reg, l_u=l_u)
