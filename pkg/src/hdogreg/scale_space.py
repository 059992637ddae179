"""Gaussian / difference-of-Gaussians scale space and blob candidates.

Bright blobs produce positive responses: each DoG slice is the finer blur
minus the coarser blur, scaled by ``sigma_n / (sigma_{n+1} - sigma_n)`` so that
responses are comparable across scales.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from .errors import ParameterError
from .image import as_array


@dataclass(frozen=True)
class ScaleSequence:
    sigma_min: float
    sigma_max: float
    n_scales: int
    sigmas: tuple[float, ...]

    @property
    def ratio(self) -> float:
        return (self.sigma_max / self.sigma_min) ** (1.0 / (self.n_scales - 1))

    def index_of(self, sigma: float) -> int:
        return int(np.argmin(np.abs(np.asarray(self.sigmas) - sigma)))

    def __len__(self):
        return self.n_scales


@dataclass(frozen=True)
class Blob:
    """Scale-space maximum. ``x`` is the column, ``y`` the row."""

    x: int
    y: int
    sigma: float
    response: float

    @property
    def radius(self) -> float:
        return math.sqrt(2.0) * self.sigma


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled unit-sum Gaussian of radius ``ceil(4 sigma)``."""
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    radius = int(math.ceil(4.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma: float) -> np.ndarray:
    """Separable Gaussian smoothing with mirror-reflected borders."""
    arr = as_array(image)
    kernel = gaussian_kernel(sigma)
    out = ndi.correlate1d(arr, kernel, axis=0, mode="reflect")
    return ndi.correlate1d(out, kernel, axis=1, mode="reflect")


def build_scale_sequence(sigma_min: float, sigma_max: float, n_scales: int) -> ScaleSequence:
    if not (0 < sigma_min < sigma_max) or not math.isfinite(sigma_max):
        raise ParameterError(
            f"scale range must satisfy 0 < sigma_min < sigma_max, got ({sigma_min}, {sigma_max})"
        )
    if int(n_scales) != n_scales or n_scales < 3:
        raise ParameterError(f"n_scales must be an integer >= 3, got {n_scales}")
    n_scales = int(n_scales)
    k = (sigma_max / sigma_min) ** (1.0 / (n_scales - 1))
    sigmas = [sigma_min * k**n for n in range(n_scales)]
    # pin the end point exactly rather than trusting k**(n-1) round-off
    sigmas[-1] = float(sigma_max)
    return ScaleSequence(float(sigma_min), float(sigma_max), n_scales, tuple(sigmas))


def gaussian_stack(image, scales: ScaleSequence, threads: int = 1) -> list[np.ndarray]:
    arr = as_array(image)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda s: gaussian_blur(arr, s), scales.sigmas))
    return [gaussian_blur(arr, s) for s in scales.sigmas]


def dog_stack(image, scales: ScaleSequence, threads: int = 1) -> np.ndarray:
    """Scale-normalized DoG volume of shape (n_scales - 1, height, width)."""
    blurred = gaussian_stack(image, scales, threads=threads)
    sig = scales.sigmas
    slices = [
        (sig[n] / (sig[n + 1] - sig[n])) * (blurred[n] - blurred[n + 1])
        for n in range(len(sig) - 1)
    ]
    return np.stack(slices)


# (dn, dy, dx) offsets; tuples ordered lexicographically below zero point to
# voxels with a smaller linear index.
_NEIGHBOURS = [off for off in product((-1, 0, 1), repeat=3) if off != (0, 0, 0)]


def local_maxima(stack: np.ndarray, threshold: float) -> np.ndarray:
    """Return (n, y, x) indices of thresholded 26-neighbourhood maxima.

    A plateau yields exactly one voxel: ties against earlier (smaller linear
    index) neighbours must be strictly exceeded, later ones only matched.
    """
    stack = np.asarray(stack, dtype=np.float64)
    cand = np.argwhere(stack >= threshold)
    if len(cand) == 0:
        return cand.reshape(0, 3)
    padded = np.pad(stack, 1, mode="constant", constant_values=-np.inf)
    n, y, x = cand[:, 0] + 1, cand[:, 1] + 1, cand[:, 2] + 1
    values = padded[n, y, x]
    keep = np.ones(len(cand), dtype=bool)
    for off in _NEIGHBOURS:
        nb = padded[n + off[0], y + off[1], x + off[2]]
        if off < (0, 0, 0):
            keep &= values > nb
        else:
            keep &= values >= nb
    return cand[keep]


def detect_blobs(stack: np.ndarray, scales: ScaleSequence, t_dog: float) -> list[Blob]:
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[0] != scales.n_scales - 1:
        raise ParameterError(
            f"DoG stack with {stack.shape[0] if stack.ndim == 3 else '?'} slices does not match "
            f"{scales.n_scales} scales"
        )
    peaks = local_maxima(stack, t_dog)
    return [
        Blob(int(x), int(y), scales.sigmas[int(n)], float(stack[n, y, x]))
        for n, y, x in peaks
    ]


def disc_overlap_fraction(r1: float, r2: float, d: float) -> float:
    """Intersection area of two discs divided by the smaller disc's area."""
    small, large = min(r1, r2), max(r1, r2)
    if small <= 0:
        return 0.0
    if d >= r1 + r2:
        return 0.0
    if d <= large - small:
        return 1.0
    a1 = r1 * r1 * math.acos(min(1.0, max(-1.0, (d * d + r1 * r1 - r2 * r2) / (2 * d * r1))))
    a2 = r2 * r2 * math.acos(min(1.0, max(-1.0, (d * d + r2 * r2 - r1 * r1) / (2 * d * r2))))
    tri = 0.5 * math.sqrt(max(0.0, (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)))
    return (a1 + a2 - tri) / (math.pi * small * small)


def prune_overlaps(blobs: list[Blob], o_dog: float) -> list[Blob]:
    """Drop the smaller of any two blobs whose discs overlap by more than ``o_dog``.

    Pairs are visited in a canonical order (descending response, then raster
    position) so the result does not depend on the input order. The returned
    list follows the same canonical order.
    """
    if not 0.0 <= o_dog <= 1.0:
        raise ParameterError(f"o_dog must lie in [0, 1], got {o_dog}")
    ordered = sorted(blobs, key=lambda b: (-b.response, b.y, b.x, b.sigma))
    if o_dog >= 1.0 or len(ordered) < 2:
        return ordered
    xy = np.array([(b.x, b.y) for b in ordered], dtype=np.float64)
    reach = 2.0 * max(b.radius for b in ordered)
    # only pairs closer than the sum of the two largest radii can intersect
    pairs = sorted(cKDTree(xy).query_pairs(reach))
    alive = [True] * len(ordered)
    for i, j in pairs:
        if not (alive[i] and alive[j]):
            continue
        a, b = ordered[i], ordered[j]
        d = math.hypot(a.x - b.x, a.y - b.y)
        if disc_overlap_fraction(a.radius, b.radius, d) > o_dog:
            alive[j if _first_survives(a, b) else i] = False
    return [b for b, keep in zip(ordered, alive) if keep]


def _first_survives(a: Blob, b: Blob) -> bool:
    """True when ``b`` is the one to remove; ``a`` precedes ``b`` canonically."""
    if a.sigma != b.sigma:
        return a.sigma > b.sigma
    if a.response != b.response:
        return a.response > b.response
    return (a.y, a.x) <= (b.y, b.x)
