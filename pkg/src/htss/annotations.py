"""Conversion of annotations into per-pixel pseudo-label canvases.

A canvas stores, per pixel, a categorical vector of length L + 1: the
first L slots follow the semantic classes of one label space (slot j is
class index j + 1), the last slot marks the pixel as unlabeled. Pixels
that are unlabeled are excluded from every loss.

Bounding boxes vote: each box adds one integer vote for its class at
every pixel it covers (half-open extents, [x_min, x_max) by
[y_min, y_max)), and the votes are normalized afterwards. Image-level
tags are handled as full-image boxes, which makes the two paths
bit-identical by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeMismatch


@dataclass(frozen=True)
class StrongLabel:
    """Dense per-pixel class ids over one label space (0 = void)."""

    class_ids: np.ndarray
    num_classes: int

    def __post_init__(self):
        ids = self.class_ids
        if ids.ndim != 2:
            raise ShapeMismatch(f"class id grid must be 2-d, got {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise DataError("class ids must be integers")
        if self.num_classes < 1:
            raise DataError("need at least one semantic class")
        if ids.size and (ids.min() < 0 or ids.max() > self.num_classes):
            raise DataError(
                f"class ids must lie in [0, {self.num_classes}], "
                f"found [{ids.min()}, {ids.max()}]")


@dataclass(frozen=True)
class WeakLabel:
    """Boxes (class_index, x_min, y_min, x_max, y_max) and tag class indices."""

    boxes: tuple[tuple[int, int, int, int, int], ...] = ()
    tags: tuple[int, ...] = ()

    def __post_init__(self):
        for box in self.boxes:
            if len(box) != 5:
                raise DataError(f"box record must have 5 fields, got {box!r}")
            cls, x0, y0, x1, y1 = box
            if cls < 1:
                raise DataError(f"box class index must be non-void (>= 1), got {cls}")
            if x0 >= x1 or y0 >= y1:
                raise DataError(f"box {box!r} has non-positive extent")
            if x0 < 0 or y0 < 0:
                raise DataError(f"box {box!r} has negative coordinates")
        for t in self.tags:
            if t < 1:
                raise DataError(f"tag class index must be non-void (>= 1), got {t}")
        # canonical order, duplicates collapsed
        object.__setattr__(self, "tags", tuple(sorted(set(self.tags))))


@dataclass(frozen=True)
class PseudoCanvas:
    """Per-pixel categorical vectors of length L + 1; slot L = unlabeled."""

    probs: np.ndarray

    def __post_init__(self):
        p = self.probs
        if p.ndim != 3 or p.shape[2] < 2:
            raise ShapeMismatch(f"canvas must be (H, W, L+1) with L >= 1, got {p.shape}")
        if np.any(p < 0.0):
            raise DataError("canvas has negative entries")
        if np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-6):
            raise DataError("canvas rows must sum to 1 within 1e-6")

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2] - 1

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def unlabeled(self) -> np.ndarray:
        return self.probs[:, :, self.num_classes]

    @property
    def supervised_mask(self) -> np.ndarray:
        return self.unlabeled < 0.5


def canvas_from_boxes(label: WeakLabel, height: int, width: int,
                      num_classes: int) -> PseudoCanvas:
    """Accumulate one unity vote per box over the pixels it covers, then
    normalize over the class slots. Pixels with zero votes get the
    unlabeled vector."""
    if height < 1 or width < 1 or num_classes < 1:
        raise DataError("canvas dimensions and class count must be positive")
    votes = np.zeros((height, width, num_classes), dtype=np.int64)
    for cls, x0, y0, x1, y1 in label.boxes:
        if cls > num_classes:
            raise DataError(f"box class index {cls} outside label space of size {num_classes}")
        if x1 > width or y1 > height:
            raise DataError(f"box ({x0}, {y0}, {x1}, {y1}) exceeds {width}x{height} image")
        votes[y0:y1, x0:x1, cls - 1] += 1
    total = votes.sum(axis=2)
    covered = total > 0
    probs = np.zeros((height, width, num_classes + 1), dtype=np.float64)
    np.divide(votes, total[:, :, None], out=probs[:, :, :num_classes],
              where=covered[:, :, None])
    probs[:, :, num_classes] = np.where(covered, 0.0, 1.0)
    return PseudoCanvas(probs)


def canvas_from_tags(label: WeakLabel, height: int, width: int,
                     num_classes: int) -> PseudoCanvas:
    """Tags are full-image boxes; delegates to the box path."""
    as_boxes = WeakLabel(boxes=tuple((t, 0, 0, width, height) for t in label.tags))
    return canvas_from_boxes(as_boxes, height, width, num_classes)


def strong_to_canvas(label: StrongLabel, num_classes: int) -> PseudoCanvas:
    """One-hot canvas from dense ids; void pixels become unlabeled."""
    if num_classes != label.num_classes:
        raise ShapeMismatch(
            f"label has {label.num_classes} classes, canvas asked for {num_classes}")
    ids = label.class_ids
    slots = np.where(ids > 0, ids - 1, num_classes)
    probs = np.eye(num_classes + 1, dtype=np.float64)[slots]
    return PseudoCanvas(probs)


def refine_canvas(canvas: PseudoCanvas, predicted_probs: np.ndarray,
                  threshold: float) -> PseudoCanvas:
    """Keep a pixel's canvas vector only where the prediction agrees.

    A labeled pixel survives iff the argmax of predicted_probs equals
    the argmax of the canvas class slots and the predicted probability
    of that class is >= threshold; every other pixel becomes unlabeled.
    Argmax ties resolve to the lowest class index on both sides.
    """
    if not 0.0 <= threshold <= 1.0:
        raise DataError(f"refine threshold must lie in [0, 1], got {threshold}")
    num = canvas.num_classes
    if predicted_probs.shape != (canvas.height, canvas.width, num):
        raise ShapeMismatch(
            f"predictions {predicted_probs.shape} do not match canvas "
            f"({canvas.height}, {canvas.width}, {num})")
    pred_arg = predicted_probs.argmax(axis=2)
    pseudo_arg = canvas.probs[:, :, :num].argmax(axis=2)
    conf = np.take_along_axis(predicted_probs, pred_arg[:, :, None], axis=2)[:, :, 0]
    keep = canvas.supervised_mask & (pred_arg == pseudo_arg) & (conf >= threshold)
    probs = np.zeros_like(canvas.probs)
    probs[keep] = canvas.probs[keep]
    probs[:, :, num] = np.where(keep, canvas.probs[:, :, num], 1.0)
    return PseudoCanvas(probs)
