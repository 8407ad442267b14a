"""Per-pixel classifier over atoms, its exact backward pass, and training.

The network is deliberately tiny: two 3x3 same-padding convolutions with
ReLU, then a 1x1 linear head producing one logit per output atom. All
parameters and activations are float64 and every pass is a fixed
sequence of numpy operations, so a training run is bitwise reproducible
for a given seed.

When an atom partition with weak-only subclasses is active, the head
emits logits for the a+p atoms followed by the s atoms; the two
segments are softmaxed separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import formats
from .annotations import (
    PseudoCanvas,
    StrongLabel,
    WeakLabel,
    canvas_from_boxes,
    canvas_from_tags,
    refine_canvas,
    strong_to_canvas,
)
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NonFiniteLoss,
    ShapeMismatch,
    StaleCache,
    UnsatisfiableQuota,
)
from .lossgrad import accumulate_groups, batch_loss, softmax_atoms
from .taxonomy import (
    BBOX,
    PIXEL_KINDS,
    AtomPartition,
    DatasetGroups,
    LabelSpace,
    Taxonomy,
    dataset_heads,
)

INIT_SCALE = 0.05


@dataclass
class MicroNetParams:
    """Weights of the two-conv-plus-head network.

    version counts in-place updates; forward caches remember the version
    they saw so a backward pass against mutated weights is rejected.
    """

    w1: np.ndarray  # (3, 3, in_ch, width)
    b1: np.ndarray  # (width,)
    w2: np.ndarray  # (3, 3, width, width)
    b2: np.ndarray  # (width,)
    wh: np.ndarray  # (width, out_ch)
    bh: np.ndarray  # (out_ch,)
    version: int = 0

    @property
    def in_channels(self) -> int:
        return self.w1.shape[2]

    @property
    def width(self) -> int:
        return self.w1.shape[3]

    @property
    def out_channels(self) -> int:
        return self.wh.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.wh, self.bh]


@dataclass
class MicroNetGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    wh: np.ndarray
    bh: np.ndarray

    @classmethod
    def zeros_like(cls, params: MicroNetParams) -> "MicroNetGrads":
        return cls(*(np.zeros_like(a) for a in params.arrays()))

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.wh, self.bh]

    def iadd(self, other: "MicroNetGrads") -> None:
        for mine, theirs in zip(self.arrays(), other.arrays()):
            mine += theirs


def init_micronet(in_channels: int, width: int, out_channels: int,
                  seed: int) -> MicroNetParams:
    """Seeded uniform init in [-0.05, 0.05], drawn in a fixed order."""
    if min(in_channels, width, out_channels) < 1:
        raise ConfigError("network dimensions must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))

    def draw(*shape):
        return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)

    return MicroNetParams(
        w1=draw(3, 3, in_channels, width), b1=draw(width),
        w2=draw(3, 3, width, width), b2=draw(width),
        wh=draw(width, out_channels), bh=draw(out_channels))


def _im2col(x: np.ndarray) -> np.ndarray:
    """(H, W, C) -> (H*W, 9*C) patches for a 3x3 same-padding conv."""
    h, w, c = x.shape
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((h, w, 3, 3, c), dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            cols[:, :, dy, dx, :] = padded[dy:dy + h, dx:dx + w, :]
    return cols.reshape(h * w, 9 * c)


def _col2im(dcols: np.ndarray, h: int, w: int, c: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the image."""
    dpadded = np.zeros((h + 2, w + 2, c), dtype=np.float64)
    d5 = dcols.reshape(h, w, 3, 3, c)
    for dy in range(3):
        for dx in range(3):
            dpadded[dy:dy + h, dx:dx + w, :] += d5[:, :, dy, dx, :]
    return dpadded[1:-1, 1:-1, :]


@dataclass
class ForwardCache:
    params: MicroNetParams
    version: int
    shape: tuple[int, int]
    cols1: np.ndarray
    z1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray
    a2: np.ndarray


def forward(params: MicroNetParams, image: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Logit raster (H, W, out_channels) plus the cache for backward."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != params.in_channels:
        raise ShapeMismatch(
            f"image {x.shape} vs network expecting (H, W, {params.in_channels})")
    h, w, _ = x.shape
    cols1 = _im2col(x)
    z1 = (cols1 @ params.w1.reshape(-1, params.width)
          + params.b1).reshape(h, w, params.width)
    a1 = np.maximum(z1, 0.0)
    cols2 = _im2col(a1)
    z2 = (cols2 @ params.w2.reshape(-1, params.width)
          + params.b2).reshape(h, w, params.width)
    a2 = np.maximum(z2, 0.0)
    logits = a2 @ params.wh + params.bh
    cache = ForwardCache(params=params, version=params.version, shape=(h, w),
                         cols1=cols1, z1=z1, cols2=cols2, z2=z2, a2=a2)
    return logits, cache


def backward(cache: ForwardCache, upstream: np.ndarray) -> MicroNetGrads:
    """Exact parameter gradients for an upstream d(loss)/d(logits)."""
    params = cache.params
    if params.version != cache.version:
        raise StaleCache()
    h, w = cache.shape
    if upstream.shape != (h, w, params.out_channels):
        raise ShapeMismatch(
            f"upstream {upstream.shape} vs logits ({h}, {w}, {params.out_channels})")
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, params.out_channels)
    a2 = cache.a2.reshape(-1, params.width)

    dwh = a2.T @ up
    dbh = up.sum(axis=0)
    da2 = (up @ params.wh.T).reshape(h, w, params.width)
    dz2 = (da2 * (cache.z2 > 0.0)).reshape(-1, params.width)

    dw2 = (cache.cols2.T @ dz2).reshape(params.w2.shape)
    db2 = dz2.sum(axis=0)
    dcols2 = dz2 @ params.w2.reshape(-1, params.width).T
    da1 = _col2im(dcols2, h, w, params.width)
    dz1 = (da1 * (cache.z1 > 0.0)).reshape(-1, params.width)

    dw1 = (cache.cols1.T @ dz1).reshape(params.w1.shape)
    db1 = dz1.sum(axis=0)
    return MicroNetGrads(w1=dw1, b1=db1, w2=dw2, b2=db2, wh=dwh, bh=dbh)


@dataclass
class OptimizerState:
    """Classic momentum SGD: v <- momentum * v + g; p <- p - lr * v."""

    learning_rate: float
    momentum: float = 0.0
    velocity: MicroNetGrads | None = None

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params: MicroNetParams, grads: MicroNetGrads,
             state: OptimizerState) -> None:
    if state.velocity is None:
        state.velocity = MicroNetGrads.zeros_like(params)
    for p, g, v in zip(params.arrays(), grads.arrays(), state.velocity.arrays()):
        v *= state.momentum
        v += g
        p -= state.learning_rate * v
    params.version += 1


def save_checkpoint(path, params: MicroNetParams) -> None:
    formats.write_array_file(path, params.arrays())


def load_checkpoint(path) -> MicroNetParams:
    arrays = formats.read_array_file(path)
    if len(arrays) != 6:
        raise FormatError(path, f"checkpoint holds {len(arrays)} arrays, expected 6")
    params = MicroNetParams(*arrays)
    if params.w1.shape[:2] != (3, 3) or params.w2.shape[:2] != (3, 3):
        raise FormatError(path, "checkpoint kernel shapes are not 3x3")
    if (params.w1.shape[3] != params.width or params.w2.shape[2] != params.width
            or params.wh.shape[0] != params.width):
        raise FormatError(path, "checkpoint widths are inconsistent")
    return params


@dataclass(frozen=True)
class BatchPlan:
    """Per-dataset image quotas per step plus the run seed."""

    quotas: dict[str, int]
    seed: int

    def __post_init__(self):
        if not self.quotas:
            raise ConfigError("batch plan needs at least one dataset quota")
        for ds, q in self.quotas.items():
            if q < 1:
                raise ConfigError(f"quota for {ds!r} must be >= 1, got {q}")


def derive_train_seeds(seed: int) -> tuple[int, int]:
    """Split the run seed into (init_seed, sampler_seed)."""
    state = np.random.SeedSequence(seed).generate_state(2, dtype=np.uint64)
    return int(state[0]), int(state[1])


class BatchSampler:
    """Seeded shuffled cyclic draws of image indices, one stream per dataset.

    Each pass over a dataset is a fresh permutation; a tail shorter than
    the quota is discarded so one draw never repeats an index.
    """

    def __init__(self, quotas: dict[str, int], sizes: dict[str, int], seed: int):
        self.ids = sorted(quotas)
        for ds in self.ids:
            if ds not in sizes:
                raise UnsatisfiableQuota(f"dataset {ds!r} not among loaded datasets")
            if quotas[ds] > sizes[ds]:
                raise UnsatisfiableQuota(
                    f"quota {quotas[ds]} exceeds the {sizes[ds]} images of {ds!r}")
        self.quotas = dict(quotas)
        self.sizes = dict(sizes)
        children = np.random.SeedSequence(seed).spawn(len(self.ids))
        self._rngs = {ds: np.random.Generator(np.random.PCG64(child))
                      for ds, child in zip(self.ids, children)}
        self._perms = {ds: self._rngs[ds].permutation(self.sizes[ds])
                       for ds in self.ids}
        self._pos = {ds: 0 for ds in self.ids}

    @property
    def steps_per_epoch(self) -> int:
        return max(math.ceil(self.sizes[ds] / self.quotas[ds]) for ds in self.ids)

    def next_batch(self) -> dict[str, list[int]]:
        picks = {}
        for ds in self.ids:
            q = self.quotas[ds]
            if self._pos[ds] + q > self.sizes[ds]:
                self._perms[ds] = self._rngs[ds].permutation(self.sizes[ds])
                self._pos[ds] = 0
            start = self._pos[ds]
            picks[ds] = [int(i) for i in self._perms[ds][start:start + q]]
            self._pos[ds] = start + q
        return picks


@dataclass
class LoadedDataset:
    """One dataset held in memory for training or evaluation."""

    space: LabelSpace
    images: list[np.ndarray]
    labels: list  # StrongLabel or WeakLabel entries, parallel to images

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise DataError(
                f"dataset {self.space.dataset_id!r}: {len(self.images)} images "
                f"vs {len(self.labels)} labels")
        if not self.images:
            raise DataError(f"dataset {self.space.dataset_id!r} is empty")

    @property
    def dataset_id(self) -> str:
        return self.space.dataset_id

    @property
    def supervision(self) -> str:
        return self.space.supervision


def _dataset_predictions(ap_probs: np.ndarray, groups) -> np.ndarray:
    """Prediction over one dataset's classes: accumulated atom mass,
    renormalized so it is a proper distribution over that label space.
    Pixels whose covered mass vanishes get all-zero confidence."""
    s = accumulate_groups(ap_probs, groups)
    total = s.sum(axis=2, keepdims=True)
    out = np.zeros_like(s)
    np.divide(s, total, out=out, where=total > 1e-12)
    return out


def _refine_with_parent(canvas: PseudoCanvas, ap_probs: np.ndarray,
                        parent_slots: Sequence[int], threshold: float) -> PseudoCanvas:
    """Refinement for weak-only subclasses: a pixel survives when the
    a+p head's argmax is the parent of the pseudo-label class and that
    parent's probability clears the threshold. Subclass identity stays
    with the box votes; only localization is gated."""
    num = canvas.num_classes
    pseudo_arg = canvas.probs[:, :, :num].argmax(axis=2)
    pcol = np.asarray(parent_slots, dtype=np.int64)[pseudo_arg]
    ap_arg = ap_probs.argmax(axis=2)
    conf = np.take_along_axis(ap_probs, pcol[:, :, None], axis=2)[:, :, 0]
    keep = canvas.supervised_mask & (ap_arg == pcol) & (conf >= threshold)
    probs = np.zeros_like(canvas.probs)
    probs[keep] = canvas.probs[keep]
    probs[:, :, num] = np.where(keep, canvas.probs[:, :, num], 1.0)
    return PseudoCanvas(probs)


def _weak_canvas(label: WeakLabel, kind: str, height: int, width: int,
                 num_classes: int) -> PseudoCanvas:
    if kind == BBOX:
        return canvas_from_boxes(label, height, width, num_classes)
    return canvas_from_tags(label, height, width, num_classes)


@dataclass
class TrainResult:
    params: MicroNetParams
    losses: list[float]
    steps_per_epoch: int


def train_loop(datasets: Sequence[LoadedDataset], taxonomy: Taxonomy,
               partition: AtomPartition | None, plan: BatchPlan,
               optimizer: OptimizerState, epochs: int, refine_threshold: float,
               feature_width: int = 8, out_dir=None,
               checkpoint_every: int = 0) -> TrainResult:
    """Deterministic joint training over heterogeneous datasets.

    Every step draws each dataset's quota of images, runs the forward
    pass, converts labels to canvases (weak ones refined against the
    current predictions), applies the mixed-batch loss, backpropagates
    and takes one momentum-SGD step. An epoch is the number of steps the
    largest dataset needs for a full pass.
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if not 0.0 <= refine_threshold <= 1.0:
        raise ConfigError(f"refine threshold must lie in [0, 1], got {refine_threshold}")
    part = partition if partition is not None else AtomPartition.trivial(taxonomy)
    by_id = {ds.dataset_id: ds for ds in datasets}
    if len(by_id) != len(datasets):
        raise DataError("duplicate dataset ids among loaded datasets")
    heads: dict[str, DatasetGroups] = {
        ds.dataset_id: dataset_heads(taxonomy, part, ds.space) for ds in datasets}

    n_ap = len(part.ap_atoms)
    n_s = len(part.s_atoms)
    in_ch = datasets[0].images[0].shape[2]
    init_seed, sample_seed = derive_train_seeds(plan.seed)
    params = init_micronet(in_ch, feature_width, n_ap + n_s, init_seed)
    sampler = BatchSampler(plan.quotas, {d: len(by_id[d].images) for d in by_id},
                           sample_seed)

    losses: list[float] = []
    total_steps = epochs * sampler.steps_per_epoch
    for step in range(total_steps):
        picks = sampler.next_batch()
        items = []
        routes = []
        for ds_id in sampler.ids:
            ds = by_id[ds_id]
            dg = heads[ds_id]
            num = ds.space.num_classes
            for idx in picks[ds_id]:
                logits, cache = forward(params, ds.images[idx])
                ap_probs = softmax_atoms(logits[:, :, :n_ap])
                if ds.supervision in PIXEL_KINDS:
                    target = strong_to_canvas(ds.labels[idx], num)
                    head_probs = ap_probs
                else:
                    h, w = ds.images[idx].shape[:2]
                    canvas = _weak_canvas(ds.labels[idx], ds.supervision, h, w, num)
                    if dg.head == "s":
                        target = _refine_with_parent(canvas, ap_probs,
                                                     dg.parent_slots, refine_threshold)
                        head_probs = softmax_atoms(logits[:, :, n_ap:])
                    else:
                        predicted = _dataset_predictions(ap_probs, dg.loss_groups)
                        target = refine_canvas(canvas, predicted, refine_threshold)
                        head_probs = ap_probs
                items.append((target, head_probs, dg.loss_groups, ds.supervision))
                routes.append((cache, dg.head))
        loss, grads = batch_loss(items)
        if not np.isfinite(loss):
            raise NonFiniteLoss(step)
        total = MicroNetGrads.zeros_like(params)
        for (cache, head), g in zip(routes, grads):
            h, w = cache.shape
            upstream = np.zeros((h, w, n_ap + n_s), dtype=np.float64)
            if head == "ap":
                upstream[:, :, :n_ap] = g
            else:
                upstream[:, :, n_ap:] = g
            total.iadd(backward(cache, upstream))
        sgd_step(params, total, optimizer)
        losses.append(loss)
        if out_dir is not None and checkpoint_every > 0 and (step + 1) % checkpoint_every == 0:
            save_checkpoint(f"{out_dir}/ckpt_{step + 1:06d}.ckpt", params)

    if out_dir is not None:
        save_checkpoint(f"{out_dir}/final.ckpt", params)
        with open(f"{out_dir}/losses.csv", "w", encoding="utf-8") as fh:
            fh.write("step,loss\n")
            for i, value in enumerate(losses):
                fh.write(f"{i},{value!r}\n")
    return TrainResult(params=params, losses=losses,
                       steps_per_epoch=sampler.steps_per_epoch)
