"""Classification and detection metrics.

Covers micro accuracy, a ground-truth-normalized confusion matrix,
inclusive-coordinate IoU, rank-greedy detection matching, eleven-point and
continuous average precision, and a four-way false-positive diagnosis
(localization, similar-class, other-class, background).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagery import BoundingBox

AP_MODES = ("eleven-point", "continuous")
FP_CATEGORIES = ("Loc", "Sim", "Oth", "BG")
MATCH_IOU = 0.5

# Overlap below this is treated as "no relation" in the diagnosis.
DIAGNOSIS_MIN_IOU = 0.1


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union with inclusive pixel areas; 0 when disjoint."""
    ix1 = max(a.x1, b.x1)
    iy1 = max(a.y1, b.y1)
    ix2 = min(a.x2, b.x2)
    iy2 = min(a.y2, b.y2)
    iw = ix2 - ix1 + 1
    ih = iy2 - iy1 + 1
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / float(a.area + b.area - inter)


# ---------------------------------------------------------------------------
# Classification metrics

def overall_accuracy(preds, labels) -> float:
    """Fraction of exact matches over all samples (micro accuracy)."""
    p = np.asarray(preds)
    l = np.asarray(labels)
    if p.shape != l.shape or p.ndim != 1:
        raise ValueError(f"predictions and labels must be equal-length 1-D, "
                         f"got {p.shape} vs {l.shape}")
    if p.size == 0:
        raise ValueError("cannot score an empty prediction list")
    return float((p == l).mean())


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[pred][gt]; the normalized view divides each ground-truth column
    by its total, so populated columns sum to 1."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"counts must be square, got {c.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def normalized(self) -> np.ndarray:
        totals = self.counts.sum(axis=0, dtype=np.float64)
        safe = np.where(totals > 0, totals, 1.0)
        return self.counts / safe


def confusion(preds, labels, num_classes: int) -> ConfusionMatrix:
    p = np.asarray(preds, dtype=np.int64)
    l = np.asarray(labels, dtype=np.int64)
    if p.shape != l.shape or p.ndim != 1:
        raise ValueError("predictions and labels must be equal-length 1-D")
    if p.size and (p.min() < 0 or p.max() >= num_classes or
                   l.min() < 0 or l.max() >= num_classes):
        raise ValueError(f"entries must lie in [0, {num_classes})")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (p, l), 1)
    return ConfusionMatrix(counts)


# ---------------------------------------------------------------------------
# Detection matching

@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    class_index: int
    box: BoundingBox


def match_detections(detections, ground_truths, iou_threshold: float = MATCH_IOU):
    """Greedy rank-order matching; returns one TP/FP flag per detection.

    ``detections`` must be sorted by score descending. Each detection is a TP
    if its best-IoU unmatched ground truth of the same class in the same
    image reaches the threshold; that ground truth is then consumed, so
    duplicates land as FP.
    """
    dets = list(detections)
    for a, b in zip(dets, dets[1:]):
        if b.score > a.score:
            raise ValueError("detections must be sorted by score descending")
    by_image: dict[tuple, list] = {}
    for gt in ground_truths:
        by_image.setdefault((gt.image_id, gt.class_index), []).append(gt)
    matched: dict[tuple, list] = {k: [False] * len(v) for k, v in by_image.items()}

    flags = []
    for det in dets:
        key = (det.image_id, det.class_index)
        candidates = by_image.get(key, [])
        best, best_iou = -1, 0.0
        for i, gt in enumerate(candidates):
            v = iou(det.box, gt.box)
            if v > best_iou:
                best, best_iou = i, v
        if best >= 0 and best_iou >= iou_threshold and not matched[key][best]:
            matched[key][best] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


# ---------------------------------------------------------------------------
# Average precision

@dataclass(frozen=True)
class APResult:
    class_name: str
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    mode: str

    def __post_init__(self):
        r = np.asarray(self.recall, dtype=np.float64)
        p = np.asarray(self.precision, dtype=np.float64)
        if r.shape != p.shape:
            raise ValueError("recall and precision must be the same length")
        if np.any(np.diff(r) < 0):
            raise ValueError("recall must be non-decreasing")
        if not 0.0 <= self.ap <= 1.0:
            raise ValueError(f"AP {self.ap} outside [0, 1]")
        for arr in (r, p):
            arr.flags.writeable = False
        object.__setattr__(self, "recall", r)
        object.__setattr__(self, "precision", p)


def average_precision(flags, n_pos: int, mode: str = "eleven-point",
                      class_name: str = "") -> APResult:
    """AP from a rank-ordered TP/FP flag sequence.

    Eleven-point: mean of the best precision at recall 0, 0.1, ..., 1.0.
    Continuous: area under the right-monotonized precision-recall curve.
    """
    if mode not in AP_MODES:
        raise ValueError(f"mode must be one of {AP_MODES}")
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    f = np.asarray(flags, dtype=bool)
    if f.sum() > n_pos:
        raise ValueError(f"{int(f.sum())} true positives exceed n_pos = {n_pos}")
    tp = np.cumsum(f)
    fp = np.cumsum(~f)
    recall = tp / n_pos
    precision = tp / np.maximum(tp + fp, 1)

    if mode == "eleven-point":
        total = 0.0
        for t in np.linspace(0.0, 1.0, 11):
            mask = recall >= t - 1e-12  # guard the 0.1*k float grid
            total += precision[mask].max() if mask.any() else 0.0
        ap = total / 11.0
    else:
        mono = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) \
            else precision
        prev = np.concatenate([[0.0], recall[:-1]]) if len(recall) else recall
        ap = float(((recall - prev) * mono).sum())
    return APResult(class_name=class_name, recall=recall, precision=precision,
                    ap=float(ap), mode=mode)


def mean_ap(results) -> float:
    """Unweighted mean over per-class AP values (APResults or floats)."""
    values = [r.ap if isinstance(r, APResult) else float(r) for r in results]
    if not values:
        raise ValueError("mean_ap needs at least one class")
    return float(np.mean(values))


def _ranked(dets):
    return sorted(dets, key=lambda d: (-d.score, d.image_id, d.box))


def evaluate_detections(detections, ground_truths, class_names,
                        iou_threshold: float = MATCH_IOU,
                        mode: str = "eleven-point") -> dict:
    """Per-class AP over a mixed detection list; classes without ground truth
    are skipped. Returns {"per_class": {name: APResult}, "map": float}."""
    per_class = {}
    for idx, name in enumerate(class_names):
        gts = [g for g in ground_truths if g.class_index == idx]
        if not gts:
            continue
        dets = _ranked(d for d in detections if d.class_index == idx)
        flags = match_detections(dets, gts, iou_threshold)
        per_class[name] = average_precision(flags, len(gts), mode, class_name=name)
    return {"per_class": per_class,
            "map": mean_ap(per_class.values()) if per_class else 0.0}


# ---------------------------------------------------------------------------
# False-positive diagnosis

@dataclass(frozen=True)
class DiagnosisReport:
    """Loc/Sim/Oth/BG counts per similarity group over the examined FPs."""

    group_counts: dict

    @property
    def examined(self) -> int:
        return sum(sum(cat.values()) for cat in self.group_counts.values())

    def totals(self) -> dict:
        out = {c: 0 for c in FP_CATEGORIES}
        for cat in self.group_counts.values():
            for c in FP_CATEGORIES:
                out[c] += cat[c]
        return out


def _group_of(class_name, similarity_groups):
    for group, members in similarity_groups.items():
        if class_name in members:
            return group
    raise ValueError(f"class {class_name!r} is in no similarity group")


def diagnose_false_positives(detections, ground_truths, class_names,
                             similarity_groups, top_k_per_class: int = 10,
                             iou_threshold: float = MATCH_IOU) -> DiagnosisReport:
    """Categorize the top-ranked false positives of each class.

    Per FP of class c (best overlaps within its image): Loc if any same-class
    ground truth overlaps at IoU >= 0.1 (covers both poor localization and
    duplicates on an already-matched box); else Sim if a ground truth of
    another class in c's similarity group overlaps at IoU >= 0.1; else Oth
    for any other overlapping ground truth; else BG.
    """
    for name in class_names:
        _group_of(name, similarity_groups)
    gts = list(ground_truths)
    by_image: dict[str, list] = {}
    for gt in gts:
        if not 0 <= gt.class_index < len(class_names):
            raise ValueError(f"ground truth class index {gt.class_index} outside "
                             f"the {len(class_names)}-class list")
        by_image.setdefault(gt.image_id, []).append(gt)

    counts = {g: {c: 0 for c in FP_CATEGORIES} for g in similarity_groups}
    for idx, name in enumerate(class_names):
        group = _group_of(name, similarity_groups)
        members = set(similarity_groups[group])
        dets = _ranked(d for d in detections if d.class_index == idx)
        flags = match_detections(dets, [g for g in gts if g.class_index == idx],
                                 iou_threshold)
        examined = 0
        for det, is_tp in zip(dets, flags):
            if is_tp:
                continue
            if examined >= top_k_per_class:
                break
            examined += 1
            same = other_sim = other = 0.0
            for gt in by_image.get(det.image_id, []):
                v = iou(det.box, gt.box)
                gt_name = class_names[gt.class_index]
                if gt.class_index == idx:
                    same = max(same, v)
                elif gt_name in members:
                    other_sim = max(other_sim, v)
                else:
                    other = max(other, v)
            if same >= DIAGNOSIS_MIN_IOU:
                category = "Loc"
            elif other_sim >= DIAGNOSIS_MIN_IOU:
                category = "Sim"
            elif other >= DIAGNOSIS_MIN_IOU:
                category = "Oth"
            else:
                category = "BG"
            counts[group][category] += 1
    return DiagnosisReport(group_counts=counts)
