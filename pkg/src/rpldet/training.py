"""Mean-teacher self-training loop.

Each iteration: the teacher scores a weak-noise view of the batch, its
predictions pass per-class threshold filtering and grouped NMS, surviving
pseudo labels are split by localization certainty, the student takes a
gradient step on its strong-noise view, and the teacher follows the
student by exponential moving average. Thresholds are re-estimated on a
fixed cadence; the teacher is evaluated at every refresh point.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .assignment import PseudoLabelSet, all_certain, match_proposals, partition
from .boxes import ClassCatalog, Dataset, Frame
from .detector import (DetectorParams, FrameSupervision, ema_update, loss_and_grad,
                       predict, predicted_frame, student_step)
from .evaluation import (APResult, BiasAudit, Detection, audit_pseudo_labels,
                         detections_from_pseudo, mean_ap)
from .losses import LossBreakdown, encode_offsets
from .nms import group_nms
from .rng import substream
from .thresholds import (ThresholdTable, collect_foreground, estimate_thresholds,
                         filter_by_threshold, fixed_table, should_refresh)


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss or gradient turns non-finite mid-training."""

    def __init__(self, iteration: int, detail: str):
        self.iteration = iteration
        self.detail = detail
        super().__init__(f"non-finite value at iteration {iteration}: {detail}")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.99               # EMA coefficient
    gamma: float = 0.001              # student learning rate
    beta: float = 0.85                # certainty split on group mean IoU
    refresh_interval: int = 500
    nms_iou_threshold: float = 0.5
    objectness_floor: float = 0.05
    fallback_threshold: float = 0.5
    iterations: int = 1500
    batch_size: int = 4
    rng_seed: int = 0
    weak_noise_sigma: float = 0.05
    strong_noise_sigma: float = 0.25
    estimation_frames: int = 0        # 0 = full pass over the target split
    lone_box_mean_iou: float = 1.0
    reduction: str = "mean"
    use_cate: bool = True             # adaptive per-class thresholds
    fixed_delta: float = 0.9          # threshold used when use_cate is off
    use_lpla: bool = True             # certain/uncertain split
    debug_trace: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be a positive integer")
        if self.batch_size < 1:
            raise ValueError("batch_size must be a positive integer")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")
        if self.weak_noise_sigma > self.strong_noise_sigma:
            raise ValueError("weak_noise_sigma must not exceed strong_noise_sigma")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


@dataclass(frozen=True)
class IterationTrace:
    """Checksums of the pre-branch pipeline state, for ablation diffing."""

    iteration: int
    batch: tuple[int, ...]
    weak_checksum: float
    strong_checksum: float
    n_pseudo: int
    n_kept: int
    n_certain: int
    n_uncertain: int


@dataclass(frozen=True, eq=False)
class TrainReport:
    losses: tuple[tuple[int, LossBreakdown], ...]
    threshold_history: tuple[tuple[int, ThresholdTable], ...]
    eval_history: tuple[tuple[int, APResult], ...]
    audit_history: tuple[tuple[int, BiasAudit], ...]
    final_teacher: DetectorParams
    final_student: DetectorParams
    trace: tuple[IterationTrace, ...] = field(default=())

    def __post_init__(self):
        its = [it for it, _ in self.losses]
        if any(b <= a for a, b in zip(its, its[1:])):
            raise ValueError("loss iterations must be strictly increasing")

    @property
    def final_map(self) -> float:
        if not self.eval_history:
            return float("nan")
        return self.eval_history[-1][1].map_50

    @property
    def initial_map(self) -> float:
        if not self.eval_history:
            return float("nan")
        return self.eval_history[0][1].map_50


@dataclass(frozen=True, eq=False)
class FrameLabels:
    """Every intermediate stage of one frame's labeling pass."""

    pseudo: tuple
    kept: tuple
    labels: PseudoLabelSet
    matches: tuple


def pseudo_label_frame(params: DetectorParams, frame: Frame, table: ThresholdTable,
                       config: TrainConfig) -> FrameLabels:
    """Teacher predictions -> grouped NMS -> threshold filter -> split."""
    preds = predict(params, frame)
    pseudo = group_nms(preds, config.nms_iou_threshold,
                       lone_box_mean_iou=config.lone_box_mean_iou)
    kept = filter_by_threshold(pseudo, table)
    labels = partition(kept, config.beta) if config.use_lpla else all_certain(kept)
    matches = match_proposals(labels.uncertain, frame.frame_id)
    return FrameLabels(pseudo=tuple(pseudo), kept=tuple(kept),
                       labels=labels, matches=tuple(matches))


def build_supervision(frame: Frame, student_features: np.ndarray,
                      labels: PseudoLabelSet, matches: Sequence,
                      class_count: int) -> FrameSupervision:
    """Resolve pseudo labels to proposal-indexed training targets."""
    cert_idx = []
    cert_cls = []
    cert_off = []
    for pb in labels.certain:
        k = pb.survivor.proposal_index
        cert_idx.append(k)
        cert_cls.append(pb.survivor.class_id)
        cert_off.append(encode_offsets(frame.boxes[k].box, pb.survivor.box).offsets)
    unc_idx = []
    unc_teacher = []
    for m in matches:
        for k, dist in zip(m.proposal_indices, m.teacher_dists):
            unc_idx.append(k)
            unc_teacher.append(dist.probs)
    return FrameSupervision(
        features=student_features,
        certain_indices=np.asarray(cert_idx, dtype=np.int64),
        certain_classes=np.asarray(cert_cls, dtype=np.int64),
        certain_offsets=np.asarray(cert_off, dtype=np.float64).reshape(len(cert_idx), 4),
        uncertain_indices=np.asarray(unc_idx, dtype=np.int64),
        uncertain_teacher=np.asarray(unc_teacher, dtype=np.float64).reshape(len(unc_idx), class_count),
    )


def evaluate_teacher(params: DetectorParams, dataset: Dataset, config: TrainConfig) -> APResult:
    """mAP of the teacher on a labeled split (NMS'd, objectness-gated)."""
    if dataset.ground_truth is None:
        raise ValueError("evaluation needs ground truth")
    per_frame: list[list[Detection]] = []
    for frame in dataset.frames:
        preds = [p for p in predict(params, frame)
                 if p.dist.objectness >= config.objectness_floor]
        survivors = group_nms(preds, config.nms_iou_threshold,
                              lone_box_mean_iou=config.lone_box_mean_iou) if preds else []
        per_frame.append(detections_from_pseudo(survivors))
    return mean_ap(per_frame, dataset.ground_truth, dataset.catalog)


def audit_teacher(params: DetectorParams, dataset: Dataset, table: ThresholdTable,
                  config: TrainConfig) -> BiasAudit:
    """Bias audit of the full labeling pipeline against retained GT."""
    if dataset.ground_truth is None:
        raise ValueError("audit needs ground truth")
    per_frame: list[list[Detection]] = []
    for frame in dataset.frames:
        out = pseudo_label_frame(params, frame, table, config)
        per_frame.append(detections_from_pseudo(out.kept))
    return audit_pseudo_labels(per_frame, dataset.ground_truth, dataset.catalog.class_count)


def estimate_table(params: DetectorParams, frames: Sequence[Frame], catalog: ClassCatalog,
                   config: TrainConfig, iteration: int) -> ThresholdTable:
    """One threshold refresh: adaptive estimate or the fixed-delta arm."""
    if config.use_cate:
        fg = collect_foreground((predicted_frame(params, f) for f in frames),
                                config.objectness_floor)
        return estimate_thresholds(fg, catalog, fallback=config.fallback_threshold,
                                   estimated_at=iteration)
    return fixed_table(config.fixed_delta, catalog.class_count, estimated_at=iteration)


def self_train(config: TrainConfig, target: Dataset, source_params: DetectorParams,
               eval_dataset: Optional[Dataset] = None,
               audit_dataset: Optional[Dataset] = None) -> TrainReport:
    """Run the self-training loop from a source-pretrained detector.

    ``target`` must be unlabeled (its ground truth, if any, is ignored);
    mAP evaluation and the pseudo-label audit run only when the optional
    labeled splits are supplied. Deterministic given the config seed.
    """
    if not source_params.is_finite():
        raise ValueError("source parameters must be finite")
    if len(target.frames) == 0:
        raise ValueError("target dataset is empty")
    catalog = target.catalog
    teacher = source_params
    student = source_params

    rng_batch = substream(config.rng_seed, "batch")
    rng_weak = substream(config.rng_seed, "noise-weak")
    rng_strong = substream(config.rng_seed, "noise-strong")

    if config.estimation_frames > 0:
        est_frames = target.frames[:config.estimation_frames]
    else:
        est_frames = target.frames

    table: Optional[ThresholdTable] = None
    loss_rows = []
    thr_hist = []
    eval_hist = []
    audit_hist = []
    trace_rows = []

    for it in range(config.iterations):
        if should_refresh(it, config.refresh_interval):
            table = estimate_table(teacher, est_frames, catalog, config, it)
            thr_hist.append((it, table))
            if eval_dataset is not None:
                eval_hist.append((it, evaluate_teacher(teacher, eval_dataset, config)))
            if audit_dataset is not None:
                audit_hist.append((it, audit_teacher(teacher, audit_dataset, table, config)))

        batch = [int(i) for i in rng_batch.integers(0, len(target.frames), size=config.batch_size)]
        sups = []
        n_pseudo = n_kept = n_certain = n_uncertain = 0
        weak_sum = strong_sum = 0.0
        for fi in batch:
            frame = target.frames[fi]
            weak = frame.features + config.weak_noise_sigma * rng_weak.standard_normal(frame.features.shape)
            strong = frame.features + config.strong_noise_sigma * rng_strong.standard_normal(frame.features.shape)
            if config.debug_trace:
                weak_sum += float(weak.sum())
                strong_sum += float(strong.sum())
            teacher_view = replace(frame, features=weak)
            out = pseudo_label_frame(teacher, teacher_view, table, config)
            n_pseudo += len(out.pseudo)
            n_kept += len(out.kept)
            n_certain += len(out.labels.certain)
            n_uncertain += len(out.labels.uncertain)
            sups.append(build_supervision(frame, strong, out.labels, out.matches,
                                          catalog.class_count))

        try:
            breakdown, grad = loss_and_grad(student, sups, reduction=config.reduction)
        except ValueError as exc:
            raise TrainingDivergenceError(it, str(exc)) from exc
        if not grad.is_finite():
            raise TrainingDivergenceError(it, "gradient")

        student = student_step(student, grad, config.gamma)
        teacher = ema_update(teacher, student, config.alpha)
        loss_rows.append((it, breakdown))
        if config.debug_trace:
            trace_rows.append(IterationTrace(
                iteration=it, batch=tuple(batch),
                weak_checksum=weak_sum, strong_checksum=strong_sum,
                n_pseudo=n_pseudo, n_kept=n_kept,
                n_certain=n_certain, n_uncertain=n_uncertain))

    if config.iterations > 0 and eval_dataset is not None:
        eval_hist.append((config.iterations, evaluate_teacher(teacher, eval_dataset, config)))

    return TrainReport(losses=tuple(loss_rows),
                       threshold_history=tuple(thr_hist),
                       eval_history=tuple(eval_hist),
                       audit_history=tuple(audit_hist),
                       final_teacher=teacher,
                       final_student=student,
                       trace=tuple(trace_rows))
