"""Analytically differentiable toy detector over per-proposal features.

A linear-softmax classifier, a linear-sigmoid objectness head and a linear
box refiner stand in for a full CNN detector: they expose the same
interfaces the labeling pipeline needs (class distributions, objectness,
refined boxes) while keeping every gradient a closed-form expression.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boxes import ClassDistribution, Frame, ScoredBox
from .losses import PROB_EPS, LossBreakdown, decode_offsets


@dataclass(frozen=True, eq=False)
class DetectorParams:
    """All parameter blocks of the toy detector (immutable)."""

    W: np.ndarray       # (C, d) class-score matrix
    b: np.ndarray       # (C,) class bias
    w_obj: np.ndarray   # (d,) objectness weights
    b_obj: float        # objectness bias
    V: np.ndarray       # (4, d) regression matrix
    c: np.ndarray       # (4,) regression bias

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        b = np.asarray(self.b, dtype=np.float64)
        w_obj = np.asarray(self.w_obj, dtype=np.float64)
        V = np.asarray(self.V, dtype=np.float64)
        c = np.asarray(self.c, dtype=np.float64)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "w_obj", w_obj)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "c", c)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ValueError("W must be (C, d) with b of length C")
        if w_obj.shape != (W.shape[1],):
            raise ValueError("w_obj must have length d")
        if V.shape != (4, W.shape[1]) or c.shape != (4,):
            raise ValueError("V must be (4, d) with c of length 4")

    @property
    def class_count(self) -> int:
        return int(self.W.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.W.shape[1])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in
                   (self.W, self.b, self.w_obj, np.asarray(self.b_obj), self.V, self.c))


def init_params(class_count: int, feature_dim: int, rng: np.random.Generator,
                scale: float = 0.05) -> DetectorParams:
    return DetectorParams(
        W=scale * rng.standard_normal((class_count, feature_dim)),
        b=scale * rng.standard_normal(class_count),
        w_obj=scale * rng.standard_normal(feature_dim),
        b_obj=float(scale * rng.standard_normal()),
        V=scale * rng.standard_normal((4, feature_dim)),
        c=scale * rng.standard_normal(4),
    )


def zeros_like_params(p: DetectorParams) -> DetectorParams:
    return DetectorParams(W=np.zeros_like(p.W), b=np.zeros_like(p.b),
                          w_obj=np.zeros_like(p.w_obj), b_obj=0.0,
                          V=np.zeros_like(p.V), c=np.zeros_like(p.c))


def combine(a: DetectorParams, b: DetectorParams, ca: float, cb: float) -> DetectorParams:
    """Elementwise ca*a + cb*b across every block."""
    return DetectorParams(W=ca * a.W + cb * b.W,
                          b=ca * a.b + cb * b.b,
                          w_obj=ca * a.w_obj + cb * b.w_obj,
                          b_obj=ca * a.b_obj + cb * b.b_obj,
                          V=ca * a.V + cb * b.V,
                          c=ca * a.c + cb * b.c)


def student_step(params: DetectorParams, grad: DetectorParams, gamma: float) -> DetectorParams:
    """One gradient-descent step on the student."""
    return combine(params, grad, 1.0, -gamma)


def ema_update(teacher: DetectorParams, student: DetectorParams, alpha: float) -> DetectorParams:
    """Exponential-moving-average teacher update."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return combine(teacher, student, alpha, 1.0 - alpha)


def params_to_vector(p: DetectorParams) -> np.ndarray:
    return np.concatenate([p.W.ravel(), p.b, p.w_obj, [p.b_obj], p.V.ravel(), p.c])


def vector_to_params(vec: np.ndarray, class_count: int, feature_dim: int) -> DetectorParams:
    C, d = class_count, feature_dim
    sizes = [C * d, C, d, 1, 4 * d, 4]
    if vec.size != sum(sizes):
        raise ValueError(f"vector of size {vec.size}, expected {sum(sizes)}")
    parts = np.split(np.asarray(vec, dtype=np.float64), np.cumsum(sizes)[:-1])
    return DetectorParams(W=parts[0].reshape(C, d), b=parts[1], w_obj=parts[2],
                          b_obj=float(parts[3][0]), V=parts[4].reshape(4, d), c=parts[5])


def param_distance(a: DetectorParams, b: DetectorParams) -> float:
    return float(np.linalg.norm(params_to_vector(a) - params_to_vector(b)))


def softmax_rows(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=1, keepdims=True)
    e = np.exp(zs)
    return e / e.sum(axis=1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def predict(params: DetectorParams, frame: Frame) -> list[ScoredBox]:
    """Score and refine every proposal of a frame."""
    X = frame.features
    if X.shape[1] != params.feature_dim:
        raise ValueError(f"feature dim {X.shape[1]} does not match detector dim {params.feature_dim}")
    probs = softmax_rows(X @ params.W.T + params.b)
    obj = sigmoid(X @ params.w_obj + params.b_obj)
    offsets = X @ params.V.T + params.c
    out = []
    for i, sb in enumerate(frame.boxes):
        box = decode_offsets(sb.box, offsets[i])
        dist = ClassDistribution(probs=probs[i], objectness=float(obj[i]))
        out.append(ScoredBox.from_dist(box, dist, proposal_index=i))
    return out


def predicted_frame(params: DetectorParams, frame: Frame) -> Frame:
    """The frame with its proposals replaced by the detector's predictions."""
    return Frame(frame_id=frame.frame_id, boxes=tuple(predict(params, frame)),
                 features=frame.features)


@dataclass(frozen=True, eq=False)
class FrameSupervision:
    """Per-frame training targets resolved to proposal indices.

    Certain labels supervise classification and regression of the proposal
    they came from; uncertain entries pair a proposal with the teacher's
    soft distribution and receive no regression term.
    """

    features: np.ndarray            # (n, d) student-view features
    certain_indices: np.ndarray     # (k,) int64
    certain_classes: np.ndarray     # (k,) int64
    certain_offsets: np.ndarray     # (k, 4) target offsets
    uncertain_indices: np.ndarray   # (u,) int64
    uncertain_teacher: np.ndarray   # (u, C) teacher probabilities

    @classmethod
    def empty(cls, features: np.ndarray, class_count: int) -> "FrameSupervision":
        return cls(features=features,
                   certain_indices=np.zeros(0, dtype=np.int64),
                   certain_classes=np.zeros(0, dtype=np.int64),
                   certain_offsets=np.zeros((0, 4)),
                   uncertain_indices=np.zeros(0, dtype=np.int64),
                   uncertain_teacher=np.zeros((0, class_count)))


@dataclass(frozen=True, eq=False)
class SupervisedFrame:
    """Fully labeled targets for source-domain pretraining.

    Positives (proposals overlapping a GT box) carry a class and offset
    target; every proposal carries a binary objectness target.
    """

    features: np.ndarray        # (n, d)
    pos_indices: np.ndarray     # (k,) int64
    pos_classes: np.ndarray     # (k,) int64
    pos_offsets: np.ndarray     # (k, 4)
    obj_targets: np.ndarray     # (n,) 0/1


def supervised_loss_and_grad(params: DetectorParams, sups: Sequence[SupervisedFrame],
                             reduction: str = "mean") -> tuple[float, DetectorParams]:
    """Supervised detection loss (cls + reg + objectness BCE) and gradient."""
    C, d = params.class_count, params.feature_dim
    total_cls = total_reg = total_obj = 0.0
    n_pos = 0
    n_all = 0
    gW = np.zeros((C, d)); gb = np.zeros(C)
    gV = np.zeros((4, d)); gc = np.zeros(4)
    gw_obj = np.zeros(d); gb_obj = 0.0

    for sup in sups:
        X = sup.features
        if sup.pos_indices.size:
            Xp = X[sup.pos_indices]
            probs = softmax_rows(Xp @ params.W.T + params.b)
            rows = np.arange(len(sup.pos_classes))
            picked = np.minimum(np.maximum(probs[rows, sup.pos_classes], PROB_EPS), 1.0)
            total_cls += float(-np.log(picked).sum())
            onehot = np.zeros_like(probs)
            onehot[rows, sup.pos_classes] = 1.0
            dZ = _softct_grad(probs, onehot)
            gW += dZ.T @ Xp
            gb += dZ.sum(axis=0)

            t_pred = Xp @ params.V.T + params.c
            err = t_pred - sup.pos_offsets
            a = np.abs(err)
            total_reg += float(np.where(a < 1.0, 0.5 * err * err, a - 0.5).sum())
            dT = np.where(a < 1.0, err, np.sign(err))
            gV += dT.T @ Xp
            gc += dT.sum(axis=0)
            n_pos += int(sup.pos_indices.size)

        z = X @ params.w_obj + params.b_obj
        t = sup.obj_targets
        # stable BCE-with-logits: max(z,0) - z*t + log1p(exp(-|z|))
        total_obj += float((np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))).sum())
        dz = sigmoid(z) - t
        gw_obj += dz @ X
        gb_obj += float(dz.sum())
        n_all += int(X.shape[0])

    if reduction == "mean":
        pos_norm = 1.0 / n_pos if n_pos else 0.0
        obj_norm = 1.0 / n_all if n_all else 0.0
    else:
        pos_norm = obj_norm = 1.0
    loss = (total_cls + total_reg) * pos_norm + total_obj * obj_norm
    grad = DetectorParams(W=gW * pos_norm, b=gb * pos_norm,
                          w_obj=gw_obj * obj_norm, b_obj=gb_obj * obj_norm,
                          V=gV * pos_norm, c=gc * pos_norm)
    return loss, grad


def _softct_grad(probs: np.ndarray, teacher: np.ndarray) -> np.ndarray:
    """d/d(logits) of sum_j -teacher_j * log(clamp(probs_j)).

    Rows where some probability hits the clamp floor drop those terms,
    matching the gradient of the clamped loss exactly.
    """
    mask = probs > PROB_EPS
    tm = np.where(mask, teacher, 0.0)
    return probs * tm.sum(axis=1, keepdims=True) - tm


def loss_and_grad(params: DetectorParams, supervisions: Sequence[FrameSupervision],
                  reduction: str = "mean") -> tuple[LossBreakdown, DetectorParams]:
    """Batch loss and its analytic gradient w.r.t. every parameter block.

    The objectness head takes no part in the self-training loss, and
    uncertain labels contribute nothing to the regression blocks; both
    facts show up as exactly-zero gradient blocks.
    """
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    C, d = params.class_count, params.feature_dim

    sum_cls = 0.0
    sum_reg = 0.0
    sum_u = 0.0
    n_certain = 0
    n_proposals = 0

    gW_cert = np.zeros((C, d)); gb_cert = np.zeros(C)
    gW_unc = np.zeros((C, d)); gb_unc = np.zeros(C)
    gV = np.zeros((4, d)); gc = np.zeros(4)

    for sup in supervisions:
        X = sup.features
        if sup.certain_indices.size:
            Xc = X[sup.certain_indices]
            probs = softmax_rows(Xc @ params.W.T + params.b)
            picked = probs[np.arange(len(sup.certain_classes)), sup.certain_classes]
            sum_cls += float(-np.log(np.minimum(np.maximum(picked, PROB_EPS), 1.0)).sum())
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(sup.certain_classes)), sup.certain_classes] = 1.0
            dZ = _softct_grad(probs, onehot)
            gW_cert += dZ.T @ Xc
            gb_cert += dZ.sum(axis=0)

            t_pred = Xc @ params.V.T + params.c
            err = t_pred - sup.certain_offsets
            a = np.abs(err)
            sum_reg += float(np.where(a < 1.0, 0.5 * err * err, a - 0.5).sum())
            dT = np.where(a < 1.0, err, np.sign(err))
            gV += dT.T @ Xc
            gc += dT.sum(axis=0)
            n_certain += int(sup.certain_indices.size)

        if sup.uncertain_indices.size:
            Xu = X[sup.uncertain_indices]
            s_probs = softmax_rows(Xu @ params.W.T + params.b)
            clamped = np.minimum(np.maximum(s_probs, PROB_EPS), 1.0)
            sum_u += float(-(sup.uncertain_teacher * np.log(clamped)).sum())
            dZu = _softct_grad(s_probs, sup.uncertain_teacher)
            gW_unc += dZu.T @ Xu
            gb_unc += dZu.sum(axis=0)
            n_proposals += int(sup.uncertain_indices.size)

    if reduction == "mean":
        cert_norm = 1.0 / n_certain if n_certain else 0.0
        unc_norm = 1.0 / n_proposals if n_proposals else 0.0
    else:
        cert_norm = 1.0 if n_certain else 0.0
        unc_norm = 1.0 if n_proposals else 0.0

    breakdown = LossBreakdown.build(l_cls=sum_cls * cert_norm,
                                    l_reg=sum_reg * cert_norm,
                                    l_u=sum_u * unc_norm)
    grad = DetectorParams(
        W=gW_cert * cert_norm + gW_unc * unc_norm,
        b=gb_cert * cert_norm + gb_unc * unc_norm,
        w_obj=np.zeros(d),
        b_obj=0.0,
        V=gV * cert_norm,
        c=gc * cert_norm,
    )
    return breakdown, grad
