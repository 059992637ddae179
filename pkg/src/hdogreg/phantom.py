"""Synthetic mammogram-like phantoms with exact ground truth.

A blob of radius ``r`` is the Gaussian bump ``c * exp(-d**2 / r**2)`` (so its
standard deviation is ``r / sqrt(2)``), truncated at three standard
deviations. Its truth region is where the bump exceeds half its peak, a disc
of radius ``r * sqrt(ln 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParameterError
from .hessian_blob import label_components
from .image import GrayImage
from .scale_space import gaussian_blur

ARCHETYPES = ("diffuse", "regional", "grouped", "linear", "segmental")
MAX_ATTEMPTS = 100


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 256
    width: int = 256
    pixel_spacing_mm: float = 0.070
    background_level: float = 0.3
    background_amplitude: float = 0.05
    background_correlation_px: float = 24.0
    noise_std: float = 0.003
    n_blobs: int = 20
    radius_range: tuple[float, float] = (2.0, 6.0)
    contrast_range: tuple[float, float] = (0.1, 0.3)
    separation_factor: float = 4.0
    n_clusters: int = 0
    points_per_cluster: int = 10
    cluster_spread_px: float = 30.0
    archetype: str = "grouped"

    def __post_init__(self):
        object.__setattr__(self, "radius_range", tuple(float(v) for v in self.radius_range))
        object.__setattr__(self, "contrast_range", tuple(float(v) for v in self.contrast_range))
        rlo, rhi = self.radius_range
        clo, chi = self.contrast_range
        if self.height < 8 or self.width < 8:
            raise ParameterError("phantom must be at least 8x8 pixels")
        if not 1.0 <= rlo <= rhi:
            raise ParameterError(f"radius_range must satisfy 1 <= low <= high, got {self.radius_range}")
        if not 0 < clo <= chi:
            raise ParameterError(f"contrast_range must be positive and ordered, got {self.contrast_range}")
        # detectability floor: the faintest blob must stand above pixel noise
        if clo <= self.noise_std:
            raise ParameterError(
                f"minimum contrast {clo} must exceed noise_std {self.noise_std}"
            )
        if self.noise_std < 0 or self.background_amplitude < 0:
            raise ParameterError("noise_std and background_amplitude must be >= 0")
        if self.pixel_spacing_mm <= 0:
            raise ParameterError("pixel_spacing_mm must be > 0")
        if self.archetype not in ARCHETYPES:
            raise ParameterError(f"archetype must be one of {ARCHETYPES}, got {self.archetype!r}")
        if self.n_blobs < 0 or self.n_clusters < 0 or self.points_per_cluster < 1:
            raise ParameterError("blob and cluster counts must be non-negative")

    @property
    def blob_count(self) -> int:
        return self.n_clusters * self.points_per_cluster if self.n_clusters else self.n_blobs


@dataclass
class Phantom:
    image: GrayImage
    truth_mask: np.ndarray
    truth_labels: np.ndarray
    annotations: np.ndarray
    blobs: np.ndarray  # (n, 4): x, y, radius, contrast
    blob_cluster: np.ndarray  # (n,), -1 when not part of a cluster layout
    distribution_labels: list[str] = field(default_factory=list)

    @property
    def n_objects(self) -> int:
        return len(self.blobs)


def half_max_radius(radius: float) -> float:
    return radius * math.sqrt(math.log(2.0))


def _background(spec: PhantomSpec, rng) -> np.ndarray:
    base = np.full((spec.height, spec.width), spec.background_level)
    if spec.background_amplitude == 0:
        return base
    field_ = gaussian_blur(rng.standard_normal((spec.height, spec.width)), spec.background_correlation_px)
    std = field_.std()
    if std > 0:
        field_ = field_ / std
    return base + spec.background_amplitude * field_


def _proposal(spec: PhantomSpec, rng, margin: float, centre, direction):
    lo_y, hi_y = margin, spec.height - 1 - margin
    lo_x, hi_x = margin, spec.width - 1 - margin
    s = spec.cluster_spread_px
    kind = spec.archetype if centre is not None else None
    if kind is None or kind == "diffuse":
        return rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)
    cx, cy = centre
    if kind == "grouped":
        dx, dy = rng.normal(0, s, 2)
    elif kind == "regional":
        dx, dy = rng.normal(0, 3 * s, 2)
    elif kind == "linear":
        t = rng.uniform(-3 * s, 3 * s)
        n = rng.normal(0, s / 6)
        dx = t * direction[0] - n * direction[1]
        dy = t * direction[1] + n * direction[0]
    else:  # segmental: wedge opening away from the centre
        ang = math.atan2(direction[1], direction[0]) + rng.uniform(-0.35, 0.35)
        rad = rng.uniform(0, 4 * s)
        dx, dy = rad * math.cos(ang), rad * math.sin(ang)
    x, y = cx + dx, cy + dy
    return x, y


def _place(spec: PhantomSpec, rng, radii) -> tuple[np.ndarray, np.ndarray]:
    rmax = spec.radius_range[1]
    margin = math.ceil(3.0 * rmax / math.sqrt(2.0)) + 1
    if spec.height - 1 - 2 * margin <= 0 or spec.width - 1 - 2 * margin <= 0:
        raise DataError("phantom too small for the requested blob radius")
    min_sep = spec.separation_factor * rmax
    centres: list[tuple[float, float]] = []
    owner: list[int] = []
    groups = spec.n_clusters if spec.n_clusters else 0
    layout = []
    if groups:
        for g in range(groups):
            cx = rng.uniform(margin, spec.width - 1 - margin)
            cy = rng.uniform(margin, spec.height - 1 - margin)
            ang = rng.uniform(0, 2 * math.pi)
            layout += [(g, (cx, cy), (math.cos(ang), math.sin(ang)))] * spec.points_per_cluster
    else:
        layout = [(-1, None, None)] * len(radii)
    for k, (g, centre, direction) in enumerate(layout):
        for _attempt in range(MAX_ATTEMPTS):
            x, y = _proposal(spec, rng, margin, centre, direction)
            if not (margin <= x <= spec.width - 1 - margin and margin <= y <= spec.height - 1 - margin):
                continue
            if all((x - px) ** 2 + (y - py) ** 2 >= min_sep**2 for px, py in centres):
                centres.append((x, y))
                owner.append(g)
                break
        else:
            raise DataError(
                f"could not place blob {k + 1} of {len(layout)} after {MAX_ATTEMPTS} attempts "
                f"(min separation {min_sep:.1f} px on a {spec.width}x{spec.height} image); "
                "reduce the blob count or radius, or enlarge the image"
            )
    return np.array(centres, dtype=np.float64).reshape(-1, 2), np.array(owner, dtype=np.int64)


def generate(spec: PhantomSpec | None = None, seed: int = 0) -> Phantom:
    spec = spec or PhantomSpec()
    rng = np.random.default_rng(seed)
    h, w = spec.height, spec.width
    image = _background(spec, rng)
    n = spec.blob_count
    radii = rng.uniform(*spec.radius_range, n)
    contrasts = rng.uniform(*spec.contrast_range, n)
    centres, owner = _place(spec, rng, radii)
    truth = np.zeros((h, w), dtype=bool)
    ann = np.zeros((h, w), dtype=bool)
    for (x, y), r, c in zip(centres, radii, contrasts):
        sg = r / math.sqrt(2.0)
        ext = int(math.ceil(3 * sg)) + 1
        y0, y1 = max(0, int(y) - ext), min(h, int(y) + ext + 2)
        x0, x1 = max(0, int(x) - ext), min(w, int(x) + ext + 2)
        yy, xx = np.mgrid[y0:y1, x0:x1]
        d2 = (xx - x) ** 2 + (yy - y) ** 2
        bump = c * np.exp(-d2 / (r * r))
        bump[d2 > (3 * sg) ** 2] = 0.0
        image[y0:y1, x0:x1] += bump
        region = d2 <= half_max_radius(r) ** 2
        truth[y0:y1, x0:x1] |= region
        if r < 3.0:
            ann[int(round(y)), int(round(x))] = True
        else:
            ann[y0:y1, x0:x1] |= region
    if spec.noise_std > 0:
        image += rng.normal(0.0, spec.noise_std, (h, w))
    image = np.clip(image, 0.0, 1.0)
    labels, count = label_components(truth)
    if count != n:
        raise DataError(f"phantom truth has {count} objects for {n} blobs")
    blobs = np.column_stack([centres, radii, contrasts]) if n else np.zeros((0, 4))
    dist = [spec.archetype] if spec.n_clusters else []
    return Phantom(GrayImage(image, spec.pixel_spacing_mm), truth, labels, ann, blobs, owner, dist)
