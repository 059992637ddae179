"""Patch extraction, Adam training, tiled inference and external map ingestion."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .image import as_array
from .network import (
    Model,
    RegressorConfig,
    dice_loss,
    forward,
    init_model,
    loss_and_gradients,
)

log = logging.getLogger(__name__)

MIN_PATCH = 64
CROP_SIZE = 320


@dataclass(frozen=True)
class PatchSet:
    images: np.ndarray  # (N, p, p)
    targets: np.ndarray  # (N, p, p)
    patch: int
    stride: int
    anchors: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.images.shape != self.targets.shape:
            raise DataError(f"image/target patch shapes differ: {self.images.shape} vs {self.targets.shape}")
        if self.patch < MIN_PATCH:
            raise ParameterError(f"patch size must be >= {MIN_PATCH}, got {self.patch}")

    def __len__(self):
        return len(self.images)

    @classmethod
    def concatenate(cls, sets: list["PatchSet"]) -> "PatchSet":
        if not sets:
            raise DataError("no patch sets to concatenate")
        patch = {s.patch for s in sets}
        if len(patch) != 1:
            raise ParameterError(f"patch sets have different patch sizes {sorted(patch)}")
        p = sets[0].patch
        imgs = np.concatenate([s.images.reshape(-1, p, p) for s in sets])
        tgts = np.concatenate([s.targets.reshape(-1, p, p) for s in sets])
        anchors = tuple(a for s in sets for a in s.anchors)
        return cls(imgs, tgts, p, sets[0].stride, anchors)


def grid_anchors(size: int, patch: int, stride: int) -> list[int]:
    """Top-left offsets along one axis; the last window is shifted inward to fit."""
    if patch > size:
        raise ParameterError(f"patch {patch} larger than image dimension {size}")
    if stride <= 0:
        raise ParameterError(f"stride must be > 0, got {stride}")
    anchors = list(range(0, size - patch + 1, stride))
    if anchors[-1] + patch < size:
        anchors.append(size - patch)
    return anchors


def extract_patches(image, target, patch: int = 512, stride: int = 480, require_positive: bool = True) -> PatchSet:
    img = as_array(image)
    tgt = np.asarray(target, dtype=np.float64)
    if img.shape != tgt.shape:
        raise ParameterError(f"image {img.shape} and target {tgt.shape} differ in shape")
    if patch < MIN_PATCH:
        raise ParameterError(f"patch size must be >= {MIN_PATCH}, got {patch}")
    ys = grid_anchors(img.shape[0], patch, stride)
    xs = grid_anchors(img.shape[1], patch, stride)
    imgs, tgts, anchors = [], [], []
    for y in ys:
        for x in xs:
            t = tgt[y : y + patch, x : x + patch]
            if require_positive and not (t > 0).any():
                continue
            imgs.append(img[y : y + patch, x : x + patch])
            tgts.append(t)
            anchors.append((y, x))
    shape = (0, patch, patch)
    return PatchSet(
        np.array(imgs).reshape(-1, patch, patch) if imgs else np.zeros(shape),
        np.array(tgts).reshape(-1, patch, patch) if tgts else np.zeros(shape),
        patch,
        stride,
        tuple(anchors),
    )


def augment_pair(image: np.ndarray, target: np.ndarray, rng: np.random.Generator, crop: int = CROP_SIZE):
    """Random flips, brightness, gamma and crop; geometric steps hit both arrays alike."""
    img, tgt = image, target
    if rng.random() < 0.5:
        img, tgt = img[:, ::-1], tgt[:, ::-1]
    if rng.random() < 0.5:
        img, tgt = img[::-1, :], tgt[::-1, :]
    img = np.clip(img * rng.uniform(0.9, 1.1), 0.0, 1.0)
    img = img ** rng.uniform(0.9, 1.1)
    if img.shape[0] > crop:
        y = int(rng.integers(0, img.shape[0] - crop + 1))
        x = int(rng.integers(0, img.shape[1] - crop + 1))
        img, tgt = img[y : y + crop, x : x + crop], tgt[y : y + crop, x : x + crop]
    return np.ascontiguousarray(img), np.ascontiguousarray(tgt)


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            # keep weights exactly representable in the float32 checkpoint format
            p[...] = p.astype(np.float32)


def patch_iou(model: Model, patches: PatchSet, p_thr: float = 0.5, batch: int = 8) -> float:
    """Average per-patch IoU of thresholded predictions against ``target > 0``."""
    scores = []
    for start in range(0, len(patches), batch):
        pred = forward(model, patches.images[start : start + batch]) >= p_thr
        ref = patches.targets[start : start + batch] > 0
        for a, b in zip(pred, ref):
            union = np.count_nonzero(a | b)
            scores.append(1.0 if union == 0 else np.count_nonzero(a & b) / union)
    return float(np.mean(scores))


@dataclass
class TrainResult:
    model: Model
    losses: list[float]
    val_iou: list[float]
    best_epoch: int


def train(
    patches: PatchSet,
    config: RegressorConfig | None = None,
    augment: bool = False,
    validation: PatchSet | None = None,
) -> TrainResult:
    """Mini-batch Adam on the soft Dice loss.

    Shuffling, initialization and augmentation all draw from one generator
    seeded by ``config.rng_seed``. When ``validation`` is given, the epoch with
    the best mean patch IoU is returned; otherwise the final model.
    """
    config = config or RegressorConfig()
    if len(patches) == 0:
        raise DataError("cannot train on an empty patch set")
    size = CROP_SIZE if (augment and patches.patch > CROP_SIZE) else patches.patch
    if size % config.multiple:
        raise ParameterError(f"training patch size {size} is not divisible by {config.multiple}")
    rng = np.random.default_rng(config.rng_seed)
    model = init_model(config, rng)
    opt = Adam(model.params, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    losses, val_scores = [], []
    best, best_epoch = model.copy(), -1
    best_score = -np.inf
    n = len(patches)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batch_losses, weights = [], []
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            if augment:
                pairs = [augment_pair(patches.images[i], patches.targets[i], rng) for i in idx]
                x = np.stack([p[0] for p in pairs])
                t = np.stack([p[1] for p in pairs])
            else:
                x, t = patches.images[idx], patches.targets[idx]
            loss, grads = loss_and_gradients(model, x, t)
            opt.step(model.params, grads)
            batch_losses.append(loss)
            weights.append(len(idx))
        losses.append(float(np.average(batch_losses, weights=weights)))
        if validation is not None and len(validation):
            score = patch_iou(model, validation)
            val_scores.append(score)
            if score > best_score:
                best_score, best, best_epoch = score, model.copy(), epoch
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    if validation is None or not len(validation):
        best, best_epoch = model, config.epochs - 1
    return TrainResult(best, losses, val_scores, best_epoch)


def evaluate_loss(model: Model, patches: PatchSet, batch: int = 8) -> float:
    """Mean per-patch Dice loss without parameter updates."""
    vals = []
    for start in range(0, len(patches), batch):
        pred = forward(model, patches.images[start : start + batch])
        vals += [
            dice_loss(p, t, model.config.dice_epsilon)
            for p, t in zip(pred, patches.targets[start : start + batch])
        ]
    return float(np.mean(vals))


def predict_full(model: Model, image, tile: int = 512, overlap: int = 32, threads: int = 1) -> np.ndarray:
    """Tiled whole-image prediction; overlapping tiles are averaged."""
    mult = model.config.multiple
    if tile < mult or tile % mult:
        raise ParameterError(f"tile {tile} must be a positive multiple of {mult}")
    if not 0 <= overlap < tile:
        raise ParameterError(f"overlap must lie in [0, tile), got {overlap}")
    img = as_array(image)
    h, w = img.shape
    ph, pw = max(h, tile), max(w, tile)
    padded = np.pad(img, ((0, ph - h), (0, pw - w)), mode="symmetric") if (ph, pw) != (h, w) else img
    step = tile - overlap
    tiles = [(y, x) for y in grid_anchors(ph, tile, step) for x in grid_anchors(pw, tile, step)]

    def run(anchor):
        y, x = anchor
        return forward(model, padded[y : y + tile, x : x + tile])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outputs = list(pool.map(run, tiles))
    else:
        outputs = [run(a) for a in tiles]
    acc = np.zeros((ph, pw))
    cnt = np.zeros((ph, pw))
    for (y, x), out in zip(tiles, outputs):
        acc[y : y + tile, x : x + tile] += out
        cnt[y : y + tile, x : x + tile] += 1.0
    return (acc / cnt)[:h, :w]


def load_external_proximity(path):
    """Read a proximity map produced elsewhere; values are clamped to [0, 1].

    Returns ``(map, clamped_count)``.
    """
    from .io import read_mcf1

    values, _spacing = read_mcf1(path)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: proximity map contains non-finite values")
    bad = int(np.count_nonzero((values < 0) | (values > 1)))
    if bad:
        log.warning("%s: clamped %d proximity values into [0, 1]", path, bad)
    return np.clip(values, 0.0, 1.0), bad
