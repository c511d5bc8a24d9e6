"""Detection pipeline pieces: proposals, negatives, scoring, suppression.

Region proposals come from either a dense sliding window or a cheap
edge-density objectness (Sobel mass inside a box minus the mass in its 10%
border ring, a stand-in for counting wholly enclosed contours). Proposals
are scored by cropping, resizing to each stream's input, forwarding through
both networks and average-fusing the posteriors; greedy non-maximum
suppression then thins the per-class results.

Both streams are expected to be trained with an extra background class as
the final entry of their class list; background is suppressed, never
emitted as a detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluate import iou
from .fusion import fuse_average
from .imagery import BoundingBox, Image, crop, resize_bilinear
from .nnet import TrainedModel, forward
from .synth import sobel_magnitude

DEFAULT_NMS_IOU = 0.3
DEFAULT_STRIDE_FRACTION = 0.25
EDGE_RING_FRACTION = 0.1
MIN_EDGE_IMAGE_SIDE = 16


@dataclass(frozen=True)
class Proposal:
    box: BoundingBox
    objectness: float

    def __post_init__(self):
        if not math.isfinite(self.objectness):
            raise ValueError("objectness must be finite")


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_index: int
    score: float
    box: BoundingBox

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        if self.class_index < 0:
            raise ValueError("class_index must be >= 0")


# ---------------------------------------------------------------------------
# Proposal generation

def sliding_window_proposals(image, scales, aspect_ratios,
                             stride_fraction: float = DEFAULT_STRIDE_FRACTION):
    """Dense grid of windows, objectness 1, deterministic order.

    Window dims per (scale, ratio): w = scale*sqrt(ratio), h = scale/sqrt(ratio),
    rounded; windows larger than the image are clipped to it. Stride is
    ``stride_fraction`` of the window dims per axis, at least 1 px.
    """
    if not scales or not aspect_ratios:
        raise ValueError("scales and aspect_ratios must be non-empty")
    if stride_fraction <= 0:
        raise ValueError("stride_fraction must be positive")
    W, H = image.width, image.height
    proposals = []
    for scale in scales:
        for ratio in aspect_ratios:
            w = min(W, max(1, int(round(scale * math.sqrt(ratio)))))
            h = min(H, max(1, int(round(scale / math.sqrt(ratio)))))
            sx = max(1, int(round(stride_fraction * w)))
            sy = max(1, int(round(stride_fraction * h)))
            for y1 in range(0, H - h + 1, sy):
                for x1 in range(0, W - w + 1, sx):
                    proposals.append(Proposal(
                        BoundingBox(x1, y1, x1 + w - 1, y1 + h - 1), 1.0))
    return proposals


def _integral(mag: np.ndarray) -> np.ndarray:
    ii = np.zeros((mag.shape[0] + 1, mag.shape[1] + 1))
    ii[1:, 1:] = mag.cumsum(axis=0).cumsum(axis=1)
    return ii


def _edge_mass(ii, box: BoundingBox, height: int, width: int) -> float:
    # The gradient map covers interior pixels only: map cell (i, j) is image
    # pixel (i+1, j+1).
    a = max(0, box.y1 - 1)
    b = min(height - 1, box.y2 - 1)
    c = max(0, box.x1 - 1)
    d = min(width - 1, box.x2 - 1)
    if b < a or d < c:
        return 0.0
    return float(ii[b + 1, d + 1] - ii[a, d + 1] - ii[b + 1, c] + ii[a, c])


def edge_density_proposals(image, max_proposals: int = 100):
    """Grid candidates ranked by interior edge mass minus border-ring mass.

    The ring is 10% of the box dims per side; edge mass fully inside the
    shrunken box counts positively, mass in the ring counts against, so
    boxes that cut through contours rank below boxes that enclose them.
    """
    if image.width < MIN_EDGE_IMAGE_SIDE or image.height < MIN_EDGE_IMAGE_SIDE:
        raise ValueError(f"image must be at least {MIN_EDGE_IMAGE_SIDE}px per side")
    if max_proposals < 1:
        raise ValueError("max_proposals must be >= 1")
    mag = sobel_magnitude(image)
    ii = _integral(mag)
    he, we = mag.shape
    side = min(image.width, image.height)
    candidates = sliding_window_proposals(
        image, scales=[side * f for f in (0.25, 0.5, 0.75)],
        aspect_ratios=(0.5, 1.0, 2.0))
    scored = []
    for cand in candidates:
        box = cand.box
        rx = max(1, int(round(EDGE_RING_FRACTION * box.width)))
        ry = max(1, int(round(EDGE_RING_FRACTION * box.height)))
        whole = _edge_mass(ii, box, he, we)
        if box.x2 - rx >= box.x1 + rx and box.y2 - ry >= box.y1 + ry:
            inner = _edge_mass(ii, BoundingBox(box.x1 + rx, box.y1 + ry,
                                               box.x2 - rx, box.y2 - ry), he, we)
        else:
            inner = 0.0
        scored.append(Proposal(box, inner - (whole - inner)))
    order = np.argsort([-p.objectness for p in scored], kind="stable")
    return [scored[i] for i in order[:max_proposals]]


# ---------------------------------------------------------------------------
# Proposals file format: "image_id x1 y1 x2 y2 objectness" per line

def write_proposals(proposals_by_image: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for image_id in proposals_by_image:
            for p in proposals_by_image[image_id]:
                f.write(f"{image_id} {p.box.x1} {p.box.y1} {p.box.x2} {p.box.y2} "
                        f"{p.objectness:.6f}\n")


def load_proposals(path, dims: dict | None = None) -> dict:
    """Parse a proposals file into {image_id: [Proposal, ...]}.

    ``dims`` optionally maps image_id to (width, height) for bounds checking.
    Duplicate boxes are preserved.
    """
    out: dict[str, list] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            image_id = parts[0]
            try:
                x1, y1, x2, y2 = (int(v) for v in parts[1:5])
                objectness = float(parts[5])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed numeric field") from None
            box = BoundingBox(x1, y1, x2, y2)
            if dims is not None:
                if image_id not in dims:
                    raise ValueError(f"{path}:{lineno}: unknown image {image_id!r}")
                w, h = dims[image_id]
                if not box.inside(w, h):
                    raise ValueError(f"{path}:{lineno}: box outside {w}x{h} image")
            out.setdefault(image_id, []).append(Proposal(box, objectness))
    return out


# ---------------------------------------------------------------------------
# Negative sampling

def sample_negatives(corpus, count: int, size: int,
                     rng: np.random.Generator) -> list:
    """Uniformly random fixed-size square crops from random corpus images."""
    corpus = list(corpus)
    if count < 0 or size < 1:
        raise ValueError("count must be >= 0 and size >= 1")
    if count and not corpus:
        raise ValueError("empty corpus")
    for img in corpus:
        if img.width < size or img.height < size:
            raise ValueError(f"corpus image {img.width}x{img.height} smaller "
                             f"than crop size {size}")
    crops = []
    for _ in range(count):
        src = corpus[int(rng.integers(len(corpus)))]
        x = int(rng.integers(src.width - size + 1))
        y = int(rng.integers(src.height - size + 1))
        crops.append(crop(src, BoundingBox(x, y, x + size - 1, y + size - 1)))
    return crops


# ---------------------------------------------------------------------------
# Scoring

def _prepare_batch(image, boxes, model: TrainedModel) -> np.ndarray:
    h, w, c = model.spec.input_shape
    batch = np.empty((len(boxes), h, w, c))
    for i, box in enumerate(boxes):
        patch = crop(image, box)
        patch = patch.as_rgb() if c == 3 else patch.as_gray()
        batch[i] = resize_bilinear(patch, w, h).data
    return batch


def score_proposals(model_texture: TrainedModel, model_shape: TrainedModel,
                    image, proposals, score_threshold: float,
                    image_id: str = "") -> list:
    """Fuse both streams on every proposal crop; emit per-class detections.

    Both models must share one class list whose last entry is the background
    class. For each foreground class with fused probability >= threshold one
    Detection is produced; background is never emitted.
    """
    if model_texture.class_names != model_shape.class_names:
        raise ValueError("streams disagree on the class list: "
                         f"{model_texture.class_names} vs {model_shape.class_names}")
    if len(model_texture.class_names) < 2:
        raise ValueError("need at least one foreground class plus background")
    boxes = [p.box for p in proposals]
    if not boxes:
        return []
    for box in boxes:
        if not box.inside(image.width, image.height):
            raise ValueError(f"proposal {box} outside {image.width}x{image.height}")
    _, post_t = forward(model_texture, _prepare_batch(image, boxes, model_texture))
    _, post_s = forward(model_shape, _prepare_batch(image, boxes, model_shape))
    n_foreground = len(model_texture.class_names) - 1
    detections = []
    for box, pt, ps in zip(boxes, post_t, post_s):
        fused = fuse_average(pt, ps)
        for j in range(n_foreground):
            if fused[j] >= score_threshold:
                detections.append(Detection(image_id, j, float(fused[j]), box))
    return detections


# ---------------------------------------------------------------------------
# Non-maximum suppression

def nms(detections, iou_threshold: float = DEFAULT_NMS_IOU) -> list:
    """Greedy suppression over one class in one image.

    Detections are ordered by score descending (ties by box coordinates);
    each kept detection discards every remaining one overlapping it at
    IoU > threshold. The kept list keeps that order.
    """
    dets = list(detections)
    if not dets:
        return []
    if len({(d.image_id, d.class_index) for d in dets}) > 1:
        raise ValueError("nms expects detections of a single class and image")
    dets.sort(key=lambda d: (-d.score, d.box))
    kept = []
    alive = dets
    while alive:
        best = alive[0]
        kept.append(best)
        alive = [d for d in alive[1:] if iou(best.box, d.box) <= iou_threshold]
    return kept


def nms_grouped(detections, iou_threshold: float = DEFAULT_NMS_IOU) -> list:
    """Apply :func:`nms` per (image, class) group; groups in sorted order."""
    groups: dict[tuple, list] = {}
    for d in detections:
        groups.setdefault((d.image_id, d.class_index), []).append(d)
    out = []
    for key in sorted(groups):
        out.extend(nms(groups[key], iou_threshold))
    return out


# ---------------------------------------------------------------------------
# Detections file format: "image_id class_name score x1 y1 x2 y2" per line

def write_detections(detections, class_names, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for d in detections:
            f.write(f"{d.image_id} {class_names[d.class_index]} {d.score:.6f} "
                    f"{d.box.x1} {d.box.y1} {d.box.x2} {d.box.y2}\n")


def load_detections(path, class_names) -> list:
    index = {name: i for i, name in enumerate(class_names)}
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
            if parts[1] not in index:
                raise ValueError(f"{path}:{lineno}: unknown class {parts[1]!r}")
            try:
                score = float(parts[2])
                x1, y1, x2, y2 = (int(v) for v in parts[3:7])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: malformed numeric field") from None
            out.append(Detection(parts[0], index[parts[1]], score,
                                 BoundingBox(x1, y1, x2, y2)))
    return out
