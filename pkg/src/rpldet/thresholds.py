"""Category-aware adaptive confidence thresholds.

Per-class cutoffs are read off each class's own score distribution: with
``n_i`` boxes of class ``i`` among ``n_f`` foreground boxes, the threshold
is the ascending score list indexed at ``floor(n_i * n_i / n_f)`` (clamped
to the list). Majority classes therefore get high cutoffs and minority
classes low ones, which counteracts the label bias a single fixed
threshold produces on long-tailed data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .boxes import ClassCatalog, Frame, ScoredBox
from .nms import PseudoBox

DEFAULT_FALLBACK_THRESHOLD = 0.5
DEFAULT_OBJECTNESS_FLOOR = 0.05


@dataclass(frozen=True, eq=False)
class CategoryStats:
    """Score statistics of one class within a foreground sample."""

    class_id: int
    sorted_scores: np.ndarray  # ascending
    n_f: int

    def __post_init__(self):
        s = np.asarray(self.sorted_scores, dtype=np.float64)
        object.__setattr__(self, "sorted_scores", s)
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ValueError("sorted_scores must be non-decreasing")

    @property
    def n_i(self) -> int:
        return int(self.sorted_scores.size)

    @property
    def p_i(self) -> float:
        return self.n_i / self.n_f if self.n_f > 0 else 0.0


@dataclass(frozen=True, eq=False)
class ThresholdTable:
    """Per-class thresholds; NaN marks a class absent from the sample."""

    deltas: np.ndarray  # (C,) float64, NaN for absent classes
    n_f: int
    estimated_at: int
    fallback: float

    def __post_init__(self):
        d = np.asarray(self.deltas, dtype=np.float64)
        object.__setattr__(self, "deltas", d)

    @property
    def class_count(self) -> int:
        return int(self.deltas.size)

    def is_absent(self, class_id: int) -> bool:
        return bool(np.isnan(self.deltas[class_id]))

    def threshold_for(self, class_id: int) -> float:
        if not 0 <= class_id < self.class_count:
            raise ValueError(f"class_id {class_id} outside table of size {self.class_count}")
        d = float(self.deltas[class_id])
        return self.fallback if math.isnan(d) else d

    def to_json_dict(self, catalog: Optional[ClassCatalog] = None) -> dict:
        names = catalog.names if catalog is not None else tuple(str(i) for i in range(self.class_count))
        per_class = {}
        for i, name in enumerate(names):
            per_class[name] = None if self.is_absent(i) else float(self.deltas[i])
        return {
            "thresholds": per_class,
            "n_f": self.n_f,
            "estimated_at": self.estimated_at,
            "fallback": self.fallback,
        }


def fixed_table(delta: float, class_count: int, estimated_at: int = 0) -> ThresholdTable:
    """A table applying one fixed threshold to every class (ablation arm)."""
    return ThresholdTable(deltas=np.full(class_count, float(delta)),
                          n_f=0, estimated_at=estimated_at, fallback=float(delta))


FrameLike = Union[Frame, Sequence[ScoredBox]]


def collect_foreground(frames: Iterable[FrameLike],
                       objectness_floor: float = DEFAULT_OBJECTNESS_FLOOR) -> list[tuple[int, float]]:
    """(argmax class, its probability) for every box judged foreground."""
    out: list[tuple[int, float]] = []
    for frame in frames:
        boxes = frame.boxes if isinstance(frame, Frame) else frame
        for sb in boxes:
            if sb.dist.objectness >= objectness_floor:
                cid = sb.dist.argmax_class()
                out.append((cid, float(sb.dist.probs[cid])))
    return out


def estimate_thresholds(foreground: Sequence[tuple[int, float]], catalog: ClassCatalog,
                        fallback: float = DEFAULT_FALLBACK_THRESHOLD,
                        estimated_at: int = 0) -> ThresholdTable:
    """Estimate the per-class threshold table from foreground scores.

    For a class with ``n_i > 0`` observations the cutoff is the ascending
    score list indexed (0-based) at ``floor(n_i * P_i)``, clamped to
    ``[0, n_i - 1]``; classes never observed are marked absent and filter
    through the fallback value.
    """
    C = catalog.class_count
    per_class: list[list[float]] = [[] for _ in range(C)]
    for cid, score in foreground:
        if not 0 <= cid < C:
            raise ValueError(f"class_id {cid} outside catalog of size {C}")
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score {score} outside [0, 1]")
        per_class[cid].append(score)

    n_f = len(foreground)
    deltas = np.full(C, np.nan)
    for cid in range(C):
        scores = per_class[cid]
        n_i = len(scores)
        if n_i == 0:
            continue
        ascending = sorted(scores)
        p_i = n_i / n_f
        idx = min(max(int(math.floor(n_i * p_i)), 0), n_i - 1)
        deltas[cid] = ascending[idx]
    return ThresholdTable(deltas=deltas, n_f=n_f, estimated_at=estimated_at, fallback=fallback)


def category_stats(foreground: Sequence[tuple[int, float]], catalog: ClassCatalog) -> list[CategoryStats]:
    """The per-class sorted score lists behind a threshold estimate."""
    C = catalog.class_count
    per_class: list[list[float]] = [[] for _ in range(C)]
    for cid, score in foreground:
        per_class[cid].append(score)
    n_f = len(foreground)
    return [CategoryStats(class_id=cid, sorted_scores=np.sort(np.asarray(per_class[cid], dtype=np.float64)),
                          n_f=n_f)
            for cid in range(C)]


def filter_by_threshold(pseudo_boxes: Sequence[PseudoBox], table: ThresholdTable) -> list[PseudoBox]:
    """Keep pseudo boxes whose survivor score reaches its class threshold.

    The comparison is ``score >= delta`` so the top box of a class always
    survives its own estimate; order is preserved.
    """
    kept = []
    for pb in pseudo_boxes:
        cid = pb.survivor.class_id
        if not 0 <= cid < table.class_count:
            raise ValueError(f"class_id {cid} outside table of size {table.class_count}")
        if pb.survivor.score >= table.threshold_for(cid):
            kept.append(pb)
    return kept


def should_refresh(iteration: int, interval: int) -> bool:
    """True at iterations 0, interval, 2*interval, ..."""
    if interval <= 0:
        raise ValueError(f"refresh interval must be positive, got {interval}")
    if iteration < 0:
        raise ValueError(f"iteration must be nonnegative, got {iteration}")
    return iteration % interval == 0
