"""Independent reference implementations used as test oracles.

Deliberately written in a different style from the package internals:
plain Python loops, no shared helpers, no kernels.
"""

import math


def _overlap(a_lo, a_hi, b_lo, b_hi):
    lo = a_lo if a_lo > b_lo else b_lo
    hi = a_hi if a_hi < b_hi else b_hi
    return hi - lo if hi > lo else 0.0


def ref_iou(a, b):
    """IoU of two (x1, y1, x2, y2) tuples."""
    w = _overlap(a[0], a[2], b[0], b[2])
    h = _overlap(a[1], a[3], b[1], b[3])
    inter = w * h
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def ref_group_nms(boxes, scores, classes, threshold, lone_default=1.0):
    """O(n^2) grouped NMS: [(survivor_idx, [suppressed idx...], mean_iou)].

    Survivors in descending score order, ties by lower index.
    """
    n = len(boxes)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    taken = [False] * n
    results = []
    for pos, i in enumerate(order):
        if taken[i]:
            continue
        taken[i] = True
        group = []
        for j in order[pos + 1:]:
            if taken[j] or classes[j] != classes[i]:
                continue
            if ref_iou(boxes[i], boxes[j]) > threshold:
                taken[j] = True
                group.append(j)
        if group:
            m = sum(ref_iou(boxes[i], boxes[j]) for j in group) / len(group)
        else:
            m = lone_default
        results.append((i, group, m))
    return results


def ref_threshold(scores_of_class, n_f):
    """Direct evaluation of the ascending-list quantile rule."""
    lst = sorted(scores_of_class)
    n_i = len(lst)
    idx = math.floor(n_i * (n_i / n_f))
    if idx < 0:
        idx = 0
    if idx > n_i - 1:
        idx = n_i - 1
    return lst[idx]


def ref_average_precision(records, n_gt):
    """Brute-force all-points AP from (score, is_tp) records."""
    if n_gt == 0:
        raise ValueError("undefined without ground truth")
    if not records:
        return 0.0
    ordered = sorted(range(len(records)), key=lambda k: (-records[k][0], k))
    tp = 0
    fp = 0
    points = []
    for k in ordered:
        if records[k][1]:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    best = 0.0
    envelope = [0.0] * len(points)
    for k in range(len(points) - 1, -1, -1):
        if points[k][1] > best:
            best = points[k][1]
        envelope[k] = best
    ap = 0.0
    prev_recall = 0.0
    for k, (r, _) in enumerate(points):
        if r > prev_recall:
            ap += (r - prev_recall) * envelope[k]
            prev_recall = r
    return ap


def ref_match(preds, gts, threshold):
    """Greedy matcher over one frame and one class.

    ``preds``: [(score, box)], processed by descending score (ties: input
    order). Returns the is_tp flag per prediction in that order.
    """
    order = sorted(range(len(preds)), key=lambda k: (-preds[k][0], k))
    used = [False] * len(gts)
    flags = []
    for k in order:
        best = -1
        best_iou = 0.0
        for g, gt_box in enumerate(gts):
            if used[g]:
                continue
            v = ref_iou(preds[k][1], gt_box)
            if v > best_iou:
                best_iou = v
                best = g
        if best >= 0 and best_iou >= threshold:
            used[best] = True
            flags.append(True)
        else:
            flags.append(False)
    return order, flags
