"""Hessian-constrained segmentation of DoG blob candidates."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import ParameterError
from .image import as_array
from .scale_space import (
    Blob,
    ScaleSequence,
    build_scale_sequence,
    detect_blobs,
    dog_stack,
    prune_overlaps,
)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
SNAP_RADIUS = 2.0


@dataclass(frozen=True)
class HessianField:
    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray

    @property
    def trace(self) -> np.ndarray:
        return self.hxx + self.hyy

    @property
    def det(self) -> np.ndarray:
        return self.hxx * self.hyy - self.hxy * self.hxy


@dataclass(frozen=True)
class HDoGParams:
    sigma_min: float = 1.18
    sigma_max: float = 3.1
    n_scales: int = 8
    t_dog: float = 0.006
    o_dog: float = 1.0
    h_thr: float = 1.4

    def __post_init__(self):
        if not 0.0 <= self.o_dog <= 1.0:
            raise ParameterError(f"o_dog must lie in [0, 1], got {self.o_dog}")
        if not self.h_thr >= 0:
            raise ParameterError(f"h_thr must be >= 0, got {self.h_thr}")
        if not self.t_dog >= 0:
            raise ParameterError(f"t_dog must be >= 0, got {self.t_dog}")

    def scales(self) -> ScaleSequence:
        return build_scale_sequence(self.sigma_min, self.sigma_max, self.n_scales)


def hessian_field(plane) -> HessianField:
    """Second derivatives by central differences (x = columns, y = rows)."""
    f = np.pad(np.asarray(plane, dtype=np.float64), 1, mode="symmetric")
    c = f[1:-1, 1:-1]
    hxx = f[1:-1, 2:] - 2.0 * c + f[1:-1, :-2]
    hyy = f[2:, 1:-1] - 2.0 * c + f[:-2, 1:-1]
    hxy = (f[2:, 2:] - f[:-2, 2:] - f[2:, :-2] + f[:-2, :-2]) / 4.0
    return HessianField(hxx, hxy, hyy)


def hessian_mask(field: HessianField, h_thr: float) -> np.ndarray:
    """Bright blob-like or tubular pixels: negative trace and a small positive eigenvalue at most."""
    tr = field.trace
    det = field.det
    neg = tr < 0
    ratio = np.full(tr.shape, np.inf)
    np.divide(np.abs(det), tr * tr, out=ratio, where=neg)
    return neg & ((det < 0) | (ratio <= h_thr))


def label_components(mask) -> tuple[np.ndarray, int]:
    """8-connected labels numbered 1..count in raster discovery order."""
    labels, count = ndi.label(np.asarray(mask, dtype=bool), structure=EIGHT_CONNECTED)
    return labels.astype(np.int32, copy=False), int(count)


def _snap(mask: np.ndarray, x: int, y: int, radius: float = SNAP_RADIUS):
    h, w = mask.shape
    if 0 <= y < h and 0 <= x < w and mask[y, x]:
        return y, x
    r = int(np.floor(radius))
    best = None
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            yy, xx = y + dy, x + dx
            d2 = dy * dy + dx * dx
            if d2 > radius * radius or not (0 <= yy < h and 0 <= xx < w) or not mask[yy, xx]:
                continue
            key = (d2, yy, xx)
            if best is None or key < best:
                best = key
    return None if best is None else best[1:]


def extract_blob_objects(
    blobs: list[Blob], scales: ScaleSequence, masks, snap_radius: float = SNAP_RADIUS
) -> np.ndarray:
    """Union of the Hessian-mask components that contain each blob centre."""
    masks = [np.asarray(m, dtype=bool) for m in masks]
    if not masks:
        raise ParameterError("no Hessian masks supplied")
    out = np.zeros(masks[0].shape, dtype=bool)
    picked: dict[int, set[int]] = {}
    labelled: dict[int, np.ndarray] = {}
    for blob in blobs:
        n = scales.index_of(blob.sigma)
        if n >= len(masks):
            raise ParameterError(f"blob scale index {n} has no Hessian mask")
        hit = _snap(masks[n], blob.x, blob.y, snap_radius)
        if hit is None:
            continue
        if n not in labelled:
            labelled[n] = label_components(masks[n])[0]
        picked.setdefault(n, set()).add(int(labelled[n][hit]))
    for n in sorted(picked):
        out |= np.isin(labelled[n], sorted(picked[n]))
    return out


def hessian_masks(stack: np.ndarray, h_thr: float, threads: int = 1) -> list[np.ndarray]:
    def one(plane):
        return hessian_mask(hessian_field(plane), h_thr)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, stack))
    return [one(plane) for plane in stack]


def hdog_segment(image, params: HDoGParams | None = None, threads: int = 1):
    """Full candidate stage: DoG maxima, overlap pruning, Hessian object extraction.

    Returns ``(mask, blobs)`` where ``mask`` is the merged boolean candidate
    mask and ``blobs`` the surviving scale-space maxima.
    """
    params = params or HDoGParams()
    scales = params.scales()
    arr = as_array(image)
    stack = dog_stack(arr, scales, threads=threads)
    blobs = prune_overlaps(detect_blobs(stack, scales, params.t_dog), params.o_dog)
    masks = hessian_masks(stack, params.h_thr, threads=threads)
    return extract_blob_objects(blobs, scales, masks), blobs
