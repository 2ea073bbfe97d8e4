"""Axis-aligned box geometry and the shared data vocabulary.

All types are immutable values (arrays are treated as frozen by convention);
they can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels

PROB_TOL = 1e-9


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in continuous scene units, corner convention."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"inverted box: {self}")
        if not all(np.isfinite(v) for v in self.as_tuple()):
            raise ValueError(f"non-finite box: {self}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


def area(b: BBox) -> float:
    """Box area; 0 exactly when the box is degenerate."""
    return (b.x_max - b.x_min) * (b.y_max - b.y_min)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union; 0 when the union has zero area."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    if iw <= 0.0:
        return 0.0
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (n, 4) float64 array for the kernels."""
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)


def pairwise_iou(boxes_a: Sequence[BBox], boxes_b: Sequence[BBox]) -> np.ndarray:
    """IoU matrix between two box lists (backend-selected kernel)."""
    return kernels.pairwise_iou(boxes_to_array(boxes_a), boxes_to_array(boxes_b))


@dataclass(frozen=True)
class ClassCatalog:
    """Foreground class names; background is not a catalog entry."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.names) < 1:
            raise ValueError("catalog needs at least one class")
        if len(set(self.names)) != len(self.names):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def class_count(self) -> int:
        return len(self.names)

    def __len__(self) -> int:
        return len(self.names)


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """Foreground class probabilities plus a separate objectness.

    ``probs`` covers foreground classes only and sums to 1; the background
    probability is carried implicitly as ``1 - objectness``.
    """

    probs: np.ndarray
    objectness: float

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("probs must be a non-empty 1-d vector")
        if np.any(p < -PROB_TOL) or np.any(p > 1.0 + PROB_TOL):
            raise ValueError("probabilities outside [0, 1]")
        if abs(float(p.sum()) - 1.0) > PROB_TOL:
            raise ValueError(f"probs sum to {p.sum()}, expected 1")
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness {self.objectness} outside [0, 1]")

    @property
    def class_count(self) -> int:
        return int(self.probs.size)

    def argmax_class(self) -> int:
        return int(np.argmax(self.probs))


@dataclass(frozen=True, eq=False)
class ScoredBox:
    """A box with its class decision, confidence and full distribution.

    ``proposal_index`` records which proposal of the frame produced this
    box, so a student network can re-score the identical proposal later.
    """

    box: BBox
    class_id: int
    score: float
    dist: ClassDistribution
    proposal_index: int = -1

    def __post_init__(self):
        if not 0 <= self.class_id < self.dist.class_count:
            raise ValueError(f"class_id {self.class_id} outside catalog of size {self.dist.class_count}")
        if abs(self.score - float(self.dist.probs[self.class_id])) > PROB_TOL:
            raise ValueError("score must equal dist.probs[class_id]")

    @classmethod
    def from_dist(cls, box: BBox, dist: ClassDistribution, proposal_index: int = -1,
                  class_id: Optional[int] = None) -> "ScoredBox":
        cid = dist.argmax_class() if class_id is None else class_id
        return cls(box=box, class_id=cid, score=float(dist.probs[cid]),
                   dist=dist, proposal_index=proposal_index)


@dataclass(frozen=True, eq=False)
class Frame:
    """One scene: proposal boxes plus a feature vector per proposal."""

    frame_id: str
    boxes: tuple[ScoredBox, ...]
    features: np.ndarray  # (n, d) float64

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2:
            raise ValueError("features must be (n, d)")
        if f.shape[0] != len(self.boxes):
            raise ValueError(f"{len(self.boxes)} boxes but {f.shape[0]} feature rows")

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class GroundTruthBox:
    class_id: int
    box: BBox


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered frames over one catalog; ground truth is optional."""

    frames: tuple[Frame, ...]
    catalog: ClassCatalog
    ground_truth: Optional[tuple[tuple[GroundTruthBox, ...], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        ids = [f.frame_id for f in self.frames]
        if len(set(ids)) != len(ids):
            raise ValueError("frame_ids must be unique")
        dims = {f.feature_dim for f in self.frames}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature dims: {sorted(dims)}")
        for f in self.frames:
            for sb in f.boxes:
                if sb.class_id >= self.catalog.class_count:
                    raise ValueError(f"frame {f.frame_id}: class_id {sb.class_id} outside catalog")
        if self.ground_truth is not None:
            gt = tuple(tuple(g) for g in self.ground_truth)
            object.__setattr__(self, "ground_truth", gt)
            if len(gt) != len(self.frames):
                raise ValueError("ground_truth must align with frames")
            for per_frame in gt:
                for g in per_frame:
                    if not 0 <= g.class_id < self.catalog.class_count:
                        raise ValueError(f"gt class_id {g.class_id} outside catalog")

    @property
    def has_ground_truth(self) -> bool:
        return self.ground_truth is not None

    def __len__(self) -> int:
        return len(self.frames)

    def without_ground_truth(self) -> "Dataset":
        return Dataset(frames=self.frames, catalog=self.catalog, ground_truth=None)
