"""Source-free self-training for object detection on synthetic scenes.

Pipeline: a mean-teacher loop whose pseudo labels pass category-aware
adaptive threshold filtering and are split by localization certainty
before supervising the student.
"""

from .assignment import (PseudoLabelSet, ProposalMatch, all_certain, match_proposals,
                         partition)
from .boxes import (BBox, ClassCatalog, ClassDistribution, Dataset, Frame,
                    GroundTruthBox, ScoredBox, area, iou)
from .detector import (DetectorParams, ema_update, init_params, loss_and_grad,
                       predict, predicted_frame, student_step)
from .evaluation import (APResult, BiasAudit, Detection, audit_pseudo_labels,
                         average_precision, mean_ap)
from .losses import (LossBreakdown, RegressionTarget, cls_loss, decode_offsets,
                     encode_offsets, reg_loss, total_loss, uncertain_loss)
from .nms import PseudoBox, group_nms, mean_iou
from .synthetic import SceneConfig, SyntheticDataset, generate_dataset, pretrain_source
from .thresholds import (CategoryStats, ThresholdTable, collect_foreground,
                         estimate_thresholds, filter_by_threshold, fixed_table,
                         should_refresh)
from .training import (TrainConfig, TrainReport, TrainingDivergenceError, self_train)

__version__ = "0.1.0"

__all__ = [
    "APResult", "BBox", "BiasAudit", "CategoryStats", "ClassCatalog",
    "ClassDistribution", "Dataset", "Detection", "DetectorParams", "Frame",
    "GroundTruthBox", "LossBreakdown", "PseudoBox", "PseudoLabelSet",
    "ProposalMatch", "RegressionTarget", "SceneConfig", "ScoredBox",
    "SyntheticDataset", "ThresholdTable", "TrainConfig", "TrainReport",
    "TrainingDivergenceError", "all_certain", "area", "audit_pseudo_labels",
    "average_precision", "cls_loss", "collect_foreground", "decode_offsets",
    "ema_update", "encode_offsets", "estimate_thresholds", "filter_by_threshold",
    "fixed_table", "generate_dataset", "group_nms", "init_params", "iou",
    "loss_and_grad", "match_proposals", "mean_ap", "mean_iou", "partition",
    "predict", "predicted_frame", "pretrain_source", "reg_loss", "self_train",
    "should_refresh", "student_step", "total_loss", "uncertain_loss",
]
