"""Localization-aware pseudo-label assignment.

Pseudo boxes whose NMS group shows low regression variance (mean IoU above
the split threshold) become certain labels and receive the full detection
loss; the rest are uncertain and are trained classification-only, through
the soft distributions of the proposals that produced them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .boxes import BBox, ClassDistribution
from .nms import PseudoBox

DEFAULT_CERTAINTY_BETA = 0.85


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    """Certain/uncertain split of one frame's filtered pseudo boxes."""

    certain: tuple[PseudoBox, ...]
    uncertain: tuple[PseudoBox, ...]
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "certain", tuple(self.certain))
        object.__setattr__(self, "uncertain", tuple(self.uncertain))

    def __len__(self) -> int:
        return len(self.certain) + len(self.uncertain)


@dataclass(frozen=True, eq=False)
class ProposalMatch:
    """The proposals behind one uncertain label, with teacher distributions.

    ``proposal_indices`` point back into the frame's proposal list so the
    student can re-score the identical boxes on its own view.
    """

    frame_id: str
    boxes: tuple[BBox, ...]
    teacher_dists: tuple[ClassDistribution, ...]
    proposal_indices: tuple[int, ...]

    def __post_init__(self):
        if not (len(self.boxes) == len(self.teacher_dists) == len(self.proposal_indices)):
            raise ValueError("boxes, teacher_dists and proposal_indices must align")
        if len(self.boxes) < 1:
            raise ValueError("a proposal match needs at least one proposal")

    @property
    def n_p(self) -> int:
        return len(self.boxes)


def partition(pseudo_boxes: Sequence[PseudoBox], beta: float = DEFAULT_CERTAINTY_BETA) -> PseudoLabelSet:
    """Split pseudo boxes into certain (mean_iou > beta) and uncertain."""
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta}")
    certain = []
    uncertain = []
    for pb in pseudo_boxes:
        if pb.mean_iou > beta:
            certain.append(pb)
        else:
            uncertain.append(pb)
    return PseudoLabelSet(certain=tuple(certain), uncertain=tuple(uncertain), beta=beta)


def all_certain(pseudo_boxes: Sequence[PseudoBox]) -> PseudoLabelSet:
    """Treat every pseudo box as certain (the no-split ablation arm)."""
    return PseudoLabelSet(certain=tuple(pseudo_boxes), uncertain=(), beta=0.0)


def match_proposals(uncertain: Sequence[PseudoBox], frame_id: str = "") -> list[ProposalMatch]:
    """One ProposalMatch per uncertain label: survivor plus its group."""
    matches = []
    for pb in uncertain:
        members = (pb.survivor,) + pb.suppressed
        matches.append(ProposalMatch(
            frame_id=frame_id,
            boxes=tuple(m.box for m in members),
            teacher_dists=tuple(m.dist for m in members),
            proposal_indices=tuple(m.proposal_index for m in members),
        ))
    return matches
