"""Synthetic long-tailed detection scenes and source-domain pretraining.

Scenes are desk-scale stand-ins for real detection data: class frequencies
follow a Zipf-like skew, every object spawns a handful of jittered
proposals, and each proposal carries a feature vector that linearly
encodes class identity, true regression offsets and foregroundness. The
target domain adds a fixed feature shift plus extra noise, so a detector
pretrained on the source degrades on the target in a way self-training
can partly repair.

A configurable fraction of objects is "hard": their offset features are
corrupted, which makes the teacher's refined boxes scatter and gives the
localization-variance statistic something to separate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import kernels
from .boxes import (BBox, ClassCatalog, ClassDistribution, Dataset, Frame,
                    GroundTruthBox, ScoredBox)
from .detector import (DetectorParams, SupervisedFrame, init_params, student_step,
                       supervised_loss_and_grad)
from .losses import encode_offsets
from .rng import substream

FG_GAIN = 1.5
PRETRAIN_MATCH_IOU = 0.5


@dataclass(frozen=True)
class SceneConfig:
    class_count: int = 6
    zipf_exponent: float = 1.1        # class-frequency skew; 0 = uniform
    scene_extent: float = 100.0
    min_boxes: int = 2
    max_boxes: int = 6
    base_box_size: float = 12.0
    box_size_spread: float = 0.2      # lognormal sigma of object sizes
    proposals_per_object: int = 4
    proposal_jitter: float = 0.12     # geometric jitter, fraction of size
    hard_fraction: float = 0.35       # objects with degraded features
    easy_offset_noise: float = 0.02
    hard_offset_noise: float = 0.18
    hard_class_gain: float = 0.55     # class-signal multiplier for hard objects
    hard_class_noise: float = 0.8     # extra class-dim noise for hard objects
    background_proposals: int = 3
    feature_dim: int = 16
    class_gain: float = 2.4           # magnitude of the class-identity signal
    feature_noise: float = 0.55       # iid feature noise, source domain
    domain_shift: float = 2.0         # L2 norm of the shift on non-class dims
    tail_shift_bias: float = 2.2      # how strongly the shift hides rare-class evidence
    target_extra_noise: float = 0.25
    source_frames: int = 120
    target_frames: int = 150
    heldout_frames: int = 60
    rng_seed: int = 0

    def __post_init__(self):
        if self.class_count < 1:
            raise ValueError("class_count must be at least 1")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be nonnegative")
        if self.min_boxes < 1 or self.max_boxes < self.min_boxes:
            raise ValueError("need 1 <= min_boxes <= max_boxes")
        if self.feature_dim < self.class_count + 5:
            raise ValueError("feature_dim must be at least class_count + 5")
        if not 0.0 <= self.hard_fraction <= 1.0:
            raise ValueError("hard_fraction must lie in [0, 1]")
        for name in ("scene_extent", "base_box_size", "class_gain"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("box_size_spread", "proposal_jitter", "easy_offset_noise",
                     "hard_offset_noise", "feature_noise", "domain_shift",
                     "tail_shift_bias", "target_extra_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if min(self.source_frames, self.target_frames, self.heldout_frames) < 1:
            raise ValueError("every split needs at least one frame")

    @property
    def class_probs(self) -> np.ndarray:
        w = (np.arange(self.class_count) + 1.0) ** (-self.zipf_exponent)
        return w / w.sum()

    def catalog(self) -> ClassCatalog:
        return ClassCatalog(names=tuple(f"class_{i:02d}" for i in range(self.class_count)))

    def to_json_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Source/target bundle; the training view of the target hides GT."""

    source_labeled: Dataset
    target_unlabeled: Dataset
    target_eval: Dataset
    target_heldout: Dataset
    config: SceneConfig

    def __post_init__(self):
        if self.target_unlabeled.ground_truth is not None:
            raise ValueError("the training view of the target must not carry ground truth")


def _class_size(config: SceneConfig, cid: int) -> float:
    if config.class_count == 1:
        return config.base_box_size
    return config.base_box_size * (0.75 + 0.7 * cid / (config.class_count - 1))


def _clip_box(cx: float, cy: float, w: float, h: float, extent: float) -> BBox:
    x1 = min(max(cx - 0.5 * w, 0.0), extent)
    y1 = min(max(cy - 0.5 * h, 0.0), extent)
    x2 = min(max(cx + 0.5 * w, 0.0), extent)
    y2 = min(max(cy + 0.5 * h, 0.0), extent)
    return BBox(x1, y1, x2, y2)


def _make_frame(frame_id: str, config: SceneConfig, rng: np.random.Generator,
                shift: Optional[np.ndarray]) -> tuple[Frame, tuple[GroundTruthBox, ...]]:
    C = config.class_count
    d = config.feature_dim
    extent = config.scene_extent
    probs = config.class_probs

    n_obj = int(rng.integers(config.min_boxes, config.max_boxes + 1))
    gt: list[GroundTruthBox] = []
    prop_boxes: list[BBox] = []
    feat_rows: list[np.ndarray] = []

    for _ in range(n_obj):
        cid = int(rng.choice(C, p=probs))
        size = _class_size(config, cid)
        w = size * math.exp(config.box_size_spread * rng.standard_normal())
        h = size * math.exp(config.box_size_spread * rng.standard_normal())
        cx = rng.uniform(0.6 * w, extent - 0.6 * w)
        cy = rng.uniform(0.6 * h, extent - 0.6 * h)
        gt_box = _clip_box(cx, cy, w, h, extent)
        gt.append(GroundTruthBox(class_id=cid, box=gt_box))
        hard = rng.random() < config.hard_fraction
        offset_noise = config.hard_offset_noise if hard else config.easy_offset_noise
        class_scale = config.hard_class_gain if hard else 1.0
        class_noise = config.hard_class_noise if hard else 0.0

        for _ in range(config.proposals_per_object):
            pcx = cx + config.proposal_jitter * w * rng.standard_normal()
            pcy = cy + config.proposal_jitter * h * rng.standard_normal()
            pw = w * math.exp(config.proposal_jitter * rng.standard_normal())
            ph = h * math.exp(config.proposal_jitter * rng.standard_normal())
            pbox = _clip_box(pcx, pcy, max(pw, 1e-3), max(ph, 1e-3), extent)
            if pbox.width <= 0 or pbox.height <= 0:
                pbox = BBox(max(pbox.x_min - 0.5, 0.0), max(pbox.y_min - 0.5, 0.0),
                            min(pbox.x_max + 0.5, extent), min(pbox.y_max + 0.5, extent))
            true_off = encode_offsets(pbox, gt_box).offsets

            f = np.zeros(d)
            f[cid] = config.class_gain * class_scale
            f[:C] += class_noise * rng.standard_normal(C)
            f[C:C + 4] = true_off + offset_noise * rng.standard_normal(4)
            f[C + 4] = FG_GAIN
            f += config.feature_noise * rng.standard_normal(d)
            prop_boxes.append(pbox)
            feat_rows.append(f)

    mean_size = config.base_box_size
    for _ in range(config.background_proposals):
        w = mean_size * math.exp(config.box_size_spread * rng.standard_normal())
        h = mean_size * math.exp(config.box_size_spread * rng.standard_normal())
        cx = rng.uniform(0.6 * w, extent - 0.6 * w)
        cy = rng.uniform(0.6 * h, extent - 0.6 * h)
        prop_boxes.append(_clip_box(cx, cy, w, h, extent))
        f = np.zeros(d)
        f[C + 4] = -FG_GAIN
        f += config.feature_noise * rng.standard_normal(d)
        feat_rows.append(f)

    features = np.vstack(feat_rows)
    if shift is not None:
        features = features + shift
        features = features + config.target_extra_noise * rng.standard_normal(features.shape)

    boxes = []
    for i, pbox in enumerate(prop_boxes):
        class_part = features[i, :C]
        e = np.exp(class_part - class_part.max())
        dist = ClassDistribution(probs=e / e.sum(),
                                 objectness=float(1.0 / (1.0 + math.exp(-2.0 * features[i, C + 4]))))
        boxes.append(ScoredBox.from_dist(pbox, dist, proposal_index=i))
    return Frame(frame_id=frame_id, boxes=tuple(boxes), features=features), tuple(gt)


def _make_split(prefix: str, n_frames: int, config: SceneConfig,
                rng: np.random.Generator, shift: Optional[np.ndarray],
                catalog: ClassCatalog) -> Dataset:
    frames = []
    gts = []
    for k in range(n_frames):
        frame, gt = _make_frame(f"{prefix}-{k:04d}", config, rng, shift)
        frames.append(frame)
        gts.append(gt)
    return Dataset(frames=tuple(frames), catalog=catalog, ground_truth=tuple(gts))


def generate_dataset(config: SceneConfig) -> SyntheticDataset:
    """Deterministically generate the source/target/held-out bundle."""
    catalog = config.catalog()
    C = config.class_count
    shift_rng = substream(config.rng_seed, "data", 0)
    raw = shift_rng.standard_normal(config.feature_dim)
    raw[:C] = 0.0
    norm = float(np.linalg.norm(raw))
    shift = raw * (config.domain_shift / norm) if norm > 0 else raw
    # the shift suppresses class evidence in proportion to class rarity,
    # which is what biases a fixed confidence threshold against the tail
    if C > 1:
        shift[:C] = -config.tail_shift_bias * np.arange(C) / (C - 1)

    source = _make_split("src", config.source_frames, config,
                         substream(config.rng_seed, "data", 1), None, catalog)
    target = _make_split("tgt", config.target_frames, config,
                         substream(config.rng_seed, "data", 2), shift, catalog)
    heldout = _make_split("held", config.heldout_frames, config,
                          substream(config.rng_seed, "data", 3), shift, catalog)
    return SyntheticDataset(source_labeled=source,
                            target_unlabeled=target.without_ground_truth(),
                            target_eval=target,
                            target_heldout=heldout,
                            config=config)


def supervision_from_gt(frame: Frame, gt: tuple[GroundTruthBox, ...],
                        match_iou: float = PRETRAIN_MATCH_IOU) -> SupervisedFrame:
    """Match proposals to GT boxes to build pretraining targets."""
    n = len(frame.boxes)
    obj_targets = np.zeros(n)
    pos_idx: list[int] = []
    pos_cls: list[int] = []
    pos_off: list[np.ndarray] = []
    if gt:
        prop_arr = np.array([b.box.as_tuple() for b in frame.boxes])
        gt_arr = np.array([g.box.as_tuple() for g in gt])
        iou = kernels.pairwise_iou(prop_arr, gt_arr)
        best = np.argmax(iou, axis=1)
        for i in range(n):
            g = int(best[i])
            if iou[i, g] >= match_iou:
                obj_targets[i] = 1.0
                pos_idx.append(i)
                pos_cls.append(gt[g].class_id)
                pos_off.append(encode_offsets(frame.boxes[i].box, gt[g].box).offsets)
    return SupervisedFrame(
        features=frame.features,
        pos_indices=np.asarray(pos_idx, dtype=np.int64),
        pos_classes=np.asarray(pos_cls, dtype=np.int64),
        pos_offsets=np.asarray(pos_off, dtype=np.float64).reshape(len(pos_idx), 4),
        obj_targets=obj_targets,
    )


def pretrain_source(dataset: SyntheticDataset, epochs: int = 30,
                    learning_rate: float = 0.05) -> DetectorParams:
    """Supervised pretraining on the labeled source split.

    Frame-level SGD over the spec'd detection losses plus an objectness
    binary cross entropy; ``epochs=0`` returns the seeded random init.
    """
    if epochs < 0:
        raise ValueError("epochs must be nonnegative")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    source = dataset.source_labeled
    if source.ground_truth is None:
        raise ValueError("source split must carry ground truth")
    config = dataset.config
    params = init_params(config.class_count, config.feature_dim,
                         substream(config.rng_seed, "init"))
    sups = [supervision_from_gt(f, g) for f, g in zip(source.frames, source.ground_truth)]
    for _ in range(epochs):
        for sup in sups:
            loss, grad = supervised_loss_and_grad(params, [sup])
            if not math.isfinite(loss):
                raise RuntimeError("pretraining diverged: non-finite loss")
            params = student_step(params, grad, learning_rate)
    if not params.is_finite():
        raise RuntimeError("pretraining diverged: non-finite parameters")
    return params
