"""Fusion of HDoG candidate objects with a proximity region mask."""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .hessian_blob import label_components
from .proximity import threshold_map

OVERLAP_MODES = ("geq", "leq")


def _check_fraction(name, value):
    if not 0.0 <= value <= 1.0:
        raise ParameterError(f"{name} must lie in [0, 1], got {value}")


def object_overlaps(candidates: np.ndarray, region) -> np.ndarray:
    """Covered fraction of each labelled object; index ``i`` holds label ``i + 1``."""
    candidates = np.asarray(candidates)
    region = np.asarray(region, dtype=bool)
    if candidates.shape != region.shape:
        raise ParameterError(f"shape mismatch: candidates {candidates.shape} vs region {region.shape}")
    n = int(candidates.max(initial=0))
    area = np.bincount(candidates.ravel(), minlength=n + 1)[1:]
    inside = np.bincount(candidates[region].ravel(), minlength=n + 1)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(area > 0, inside / np.maximum(area, 1), 0.0)


def retained_objects(overlaps: np.ndarray, o_thr: float, mode: str = "geq") -> np.ndarray:
    """Boolean keep-flag per object."""
    _check_fraction("o_thr", o_thr)
    if mode == "geq":
        return overlaps >= o_thr
    if mode == "leq":
        # complement of geq: an object sitting exactly on o_thr is dropped
        return overlaps < o_thr
    raise ParameterError(f"overlap_mode must be one of {OVERLAP_MODES}, got {mode!r}")


def combine(candidates: np.ndarray, region, o_thr: float = 0.3, mode: str = "geq") -> np.ndarray:
    """Keep whole candidate objects according to their overlap with ``region``.

    ``candidates`` is a label image (0 = background). In ``geq`` mode an object
    survives when at least ``o_thr`` of its pixels fall inside the region; ``leq``
    keeps exactly the objects ``geq`` would drop.
    """
    candidates = np.asarray(candidates)
    keep = retained_objects(object_overlaps(candidates, region), o_thr, mode)
    lut = np.concatenate([[False], keep])
    return lut[candidates]


def combine_masks(candidate_mask, proximity, p_thr: float, o_thr: float = 0.3, mode: str = "geq"):
    """Label a merged candidate mask, threshold the proximity map, and fuse."""
    candidate_mask = np.asarray(candidate_mask, dtype=bool)
    if candidate_mask.shape != np.shape(proximity):
        raise ParameterError(
            f"shape mismatch: candidates {candidate_mask.shape} vs proximity {np.shape(proximity)}"
        )
    labels, _ = label_components(candidate_mask)
    return combine(labels, threshold_map(proximity, p_thr), o_thr, mode)
