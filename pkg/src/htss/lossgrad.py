"""Group-accumulated cross-entropy over semantic atoms, with exact gradients.

The classifier outputs one logit per semantic atom. For a dataset whose
class m covers the atom group G_m, the class probability is the plain
sum of the atom softmax over G_m (no renormalization: atom mass outside
every group is simply not credited to any class). The loss is
cross-entropy between the pseudo-label canvas and those accumulated
class probabilities, averaged over supervised pixels.

The gradient of that loss with respect to atom logit j at a supervised
pixel with target class m* is

    sigma_j - sigma_j * [j in G_{m*}] / s_{m*}

(extended as a convex combination over classes for soft targets). Note
this is not the simplified indicator form sigma_j - [j in G_{m*}]; the
two only coincide when every group is a singleton, where the expression
degenerates to the familiar softmax cross-entropy gradient. Finite
differences are the authority used by the test suite.

All math runs in float64; log arguments are clamped at 1e-12.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .annotations import PseudoCanvas
from .errors import (
    IndexOutOfRange,
    MissingChildren,
    NonFiniteInput,
    NoSupervisedPixels,
    ShapeMismatch,
)
from .taxonomy import PIXEL_KINDS, SUPERVISION_KINDS, AtomPartition

LOG_EPS = 1e-12

# Shape conventions: a logit raster and an atom distribution are both
# (H, W, A) float arrays; a group map is a sequence of frozensets of
# zero-based atom indices, one entry per non-void class slot.
GroupMap = Sequence[frozenset]


def softmax_atoms(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the trailing atom axis, max-shifted for
    stability. Softmax is invariant under per-pixel constant shifts."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def group_matrix(groups: GroupMap, atom_count: int) -> np.ndarray:
    """Indicator matrix (L, A) of a group map."""
    mat = np.zeros((len(groups), atom_count), dtype=np.float64)
    for m, g in enumerate(groups):
        for a in g:
            if not 0 <= a < atom_count:
                raise IndexOutOfRange(
                    f"group {m} references atom {a}, have {atom_count} atoms")
            mat[m, a] = 1.0
    return mat


def accumulate_groups(probs: np.ndarray, groups: GroupMap) -> np.ndarray:
    """Per-class probabilities as plain sums of atom probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    mat = group_matrix(groups, probs.shape[-1])
    return probs @ mat.T


def _pixel_terms(target: PseudoCanvas, probs: np.ndarray, groups: GroupMap):
    """Unscaled per-pixel losses, gradients and the supervised mask."""
    num = target.num_classes
    if len(groups) != num:
        raise ShapeMismatch(f"{len(groups)} groups for {num} class slots")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[:2] != (target.height, target.width):
        raise ShapeMismatch(
            f"distribution grid {probs.shape[:2]} vs canvas "
            f"({target.height}, {target.width})")
    mat = group_matrix(groups, probs.shape[-1])
    y = target.probs[:, :, :num]
    s = probs @ mat.T
    s_safe = np.maximum(s, LOG_EPS)
    mask = target.supervised_mask
    losses = -(y * np.log(s_safe)).sum(axis=2)
    losses[~mask] = 0.0
    ratio = y / s_safe
    back = ratio @ mat
    grads = probs * (y.sum(axis=2)[:, :, None] - back)
    grads[~mask] = 0.0
    return losses, grads, mask


def ce_loss_image(target: PseudoCanvas, probs: np.ndarray, groups: GroupMap) -> float:
    """Cross-entropy between canvas and accumulated class probabilities,
    averaged over supervised pixels."""
    losses, _, mask = _pixel_terms(target, probs, groups)
    n = int(mask.sum())
    if n == 0:
        raise NoSupervisedPixels()
    return float(losses.sum() / n)


def grad_logits(target: PseudoCanvas, probs: np.ndarray, groups: GroupMap) -> np.ndarray:
    """Exact gradient of ce_loss_image with respect to the atom logits."""
    _, grads, mask = _pixel_terms(target, probs, groups)
    n = int(mask.sum())
    if n == 0:
        raise NoSupervisedPixels()
    return grads / n


def batch_loss(items: Sequence[tuple]) -> tuple[float, list[np.ndarray]]:
    """Mixed-batch loss with per-population normalizers.

    Each item is (target canvas, atom distribution, group map,
    supervision kind). Pixel-supervised items share one normalizer (the
    total count of their supervised pixels across the batch), box/tag
    items share the other; the loss is the sum of both normalized
    populations. Returns the scalar loss and the per-item logit
    gradients of that scalar. A population that contributes no
    supervised pixels simply drops out; if both are empty the batch is
    rejected.
    """
    per_item = []
    strong_count = 0
    weak_count = 0
    for target, probs, groups, kind in items:
        if kind not in SUPERVISION_KINDS:
            raise ShapeMismatch(f"unknown supervision kind {kind!r}")
        losses, grads, mask = _pixel_terms(target, probs, groups)
        n = int(mask.sum())
        strong = kind in PIXEL_KINDS
        if strong:
            strong_count += n
        else:
            weak_count += n
        per_item.append((losses, grads, strong))
    if strong_count + weak_count == 0:
        raise NoSupervisedPixels()

    total = 0.0
    out_grads = []
    for losses, grads, strong in per_item:
        denom = strong_count if strong else weak_count
        if denom == 0:
            out_grads.append(np.zeros_like(grads))
            continue
        total += losses.sum() / denom
        out_grads.append(grads / denom)
    return float(total), out_grads


def merge_subclass_predictions(ap_probs: np.ndarray, s_probs: np.ndarray,
                               part: AtomPartition) -> np.ndarray:
    """Final per-pixel atom ids from the two prediction heads.

    Argmax over the a+p head; wherever the winner is a parent atom it is
    replaced by the argmax over that parent's subclass atoms on the s
    head. Returns 1-based atom indices into the partition universe.
    """
    ap_order = part.ap_atoms
    s_order = part.s_atoms
    if ap_probs.ndim != 3 or ap_probs.shape[2] != len(ap_order):
        raise ShapeMismatch(
            f"a+p head has {ap_probs.shape} for {len(ap_order)} atoms")
    if part.p_set and (s_probs.ndim != 3 or s_probs.shape[2] != len(s_order)):
        raise ShapeMismatch(f"s head has {s_probs.shape} for {len(s_order)} atoms")
    children = {}
    for p in sorted(part.p_set):
        kids = part.children_of(p)
        if not kids:
            raise MissingChildren(part.atom_name(p))
        children[p] = kids

    s_pos = part.s_local()
    atom_ids = np.asarray(ap_order, dtype=np.int64)[ap_probs.argmax(axis=2)]
    for p, kids in children.items():
        where = atom_ids == p
        if not where.any():
            continue
        cols = [s_pos[k] for k in kids]
        sub = s_probs[where][:, cols]
        atom_ids[where] = np.asarray(kids, dtype=np.int64)[sub.argmax(axis=1)]
    return atom_ids
