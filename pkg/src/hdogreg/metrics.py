"""Segmentation and detection metrics: IoU, object matching, FROC, bootstrap pAUC."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .combiner import retained_objects
from .errors import DataError, ParameterError
from .image import image_area_cm2


@dataclass(frozen=True)
class MatchRule:
    max_centroid_distance: float = 5.0
    min_iou: float = 0.3

    def __post_init__(self):
        if self.max_centroid_distance < 0 or self.min_iou < 0:
            raise ParameterError("match rule thresholds must be >= 0")


@dataclass(frozen=True)
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)


@dataclass(frozen=True)
class FrocPoint:
    p_thr: float
    tp: int
    fp: int
    fn: int
    tpr: float
    fp_per_cm2: float


@dataclass(frozen=True)
class FrocCurve:
    points: list[FrocPoint]
    n_images: int
    n_reference: int

    @property
    def tpr(self) -> np.ndarray:
        return np.array([p.tpr for p in self.points])

    @property
    def fp_per_cm2(self) -> np.ndarray:
        return np.array([p.fp_per_cm2 for p in self.points])


@dataclass(frozen=True)
class PaucSummary:
    pauc_mean: float
    pauc_low95: float
    pauc_high95: float
    samples: int
    seed: int
    fp_range: tuple[float, float] = (0.0, 1.0)


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ParameterError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def iou(a, b) -> float:
    """Jaccard index of two boolean masks; two empty masks agree perfectly."""
    _same_shape(a, b)
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def mean_iou_per_image(pred, ref) -> float:
    """Average of foreground and background IoU."""
    _same_shape(pred, ref)
    pred = np.asarray(pred, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    return 0.5 * (iou(pred, ref) + iou(~pred, ~ref))


# --- object geometry ------------------------------------------------------


def object_stats(labels: np.ndarray):
    """Areas and (y, x) centroids for labels 1..max; index i is label i + 1."""
    labels = np.asarray(labels)
    n = int(labels.max(initial=0))
    flat = labels.ravel()
    area = np.bincount(flat, minlength=n + 1)[1:].astype(np.float64)
    ys, xs = np.indices(labels.shape)
    sy = np.bincount(flat, weights=ys.ravel(), minlength=n + 1)[1:]
    sx = np.bincount(flat, weights=xs.ravel(), minlength=n + 1)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        centroids = np.stack([sy / area, sx / area], axis=1) if n else np.zeros((0, 2))
    return area, centroids


def intersections(pred: np.ndarray, ref: np.ndarray):
    """Sparse overlap counts as arrays (pred_label, ref_label, count)."""
    _same_shape(pred, ref)
    pred = np.asarray(pred, dtype=np.int64)
    ref = np.asarray(ref, dtype=np.int64)
    both = (pred > 0) & (ref > 0)
    nr = int(ref.max(initial=0)) + 1
    keys, counts = np.unique(pred[both] * nr + ref[both], return_counts=True)
    return keys // nr, keys % nr, counts


@dataclass
class PairGeometry:
    """Centroid distances and IoUs between every prediction and reference object."""

    pred_area: np.ndarray
    ref_area: np.ndarray
    distance: np.ndarray  # (n_pred, n_ref)
    iou: np.ndarray  # (n_pred, n_ref)

    @classmethod
    def build(cls, pred: np.ndarray, ref: np.ndarray) -> "PairGeometry":
        pa, pc = object_stats(pred)
        ra, rc = object_stats(ref)
        if len(pc) and len(rc):
            dist = np.sqrt(((pc[:, None, :] - rc[None, :, :]) ** 2).sum(axis=2))
        else:
            dist = np.zeros((len(pc), len(rc)))
        dist = np.where(np.isfinite(dist), dist, np.inf)
        inter = np.zeros((len(pa), len(ra)))
        p, r, c = intersections(pred, ref)
        inter[p - 1, r - 1] = c
        union = pa[:, None] + ra[None, :] - inter
        with np.errstate(invalid="ignore", divide="ignore"):
            jac = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
        return cls(pa, ra, dist, jac)

    def eligible_pairs(self, rule: MatchRule) -> list[tuple[int, int]]:
        """Zero-based (pred, ref) pairs satisfying the rule, in greedy order."""
        ok = (self.distance <= rule.max_centroid_distance) | (self.iou >= rule.min_iou)
        ok &= (self.pred_area[:, None] > 0) & (self.ref_area[None, :] > 0)
        p, r = np.nonzero(ok)
        order = np.lexsort((r, p, self.distance[p, r]))
        return list(zip(p[order].tolist(), r[order].tolist()))


def greedy_match(pairs, n_pred: int, n_ref: int, active=None) -> list[tuple[int, int]]:
    """One-to-one assignment walking ``pairs`` in order; ``active`` masks predictions."""
    used_p = np.zeros(n_pred, dtype=bool)
    used_r = np.zeros(n_ref, dtype=bool)
    out = []
    for p, r in pairs:
        if used_p[p] or used_r[r] or (active is not None and not active[p]):
            continue
        used_p[p] = used_r[r] = True
        out.append((p, r))
    return out


def match_objects(pred: np.ndarray, ref: np.ndarray, rule: MatchRule | None = None) -> MatchResult:
    """Count true/false positives under the centroid-distance OR IoU rule.

    Returned pairs use 1-based labels ``(pred_label, ref_label)``.
    """
    rule = rule or MatchRule()
    geo = PairGeometry.build(pred, ref)
    n_pred = int(np.count_nonzero(geo.pred_area))
    n_ref = int(np.count_nonzero(geo.ref_area))
    matched = greedy_match(geo.eligible_pairs(rule), len(geo.pred_area), len(geo.ref_area))
    tp = len(matched)
    return MatchResult(tp, n_pred - tp, n_ref - tp, [(p + 1, r + 1) for p, r in matched])


def iou_per_object(pred: np.ndarray, ref: np.ndarray):
    """Mean IoU of each multi-pixel reference object with its best-overlapping prediction.

    Returns ``(mean, per_object)``; ``mean`` is None when no reference object
    has at least two pixels.
    """
    _same_shape(pred, ref)
    pa, _ = object_stats(pred)
    ra, _ = object_stats(ref)
    p, r, c = intersections(pred, ref)
    scores = []
    for ref_label in range(1, len(ra) + 1):
        area = ra[ref_label - 1]
        if area < 2:
            continue
        sel = r == ref_label
        if not sel.any():
            scores.append(0.0)
            continue
        cand = []
        for pl, inter in zip(p[sel], c[sel]):
            j = inter / (pa[pl - 1] + area - inter)
            cand.append((-inter, -j, pl, j))
        scores.append(float(min(cand)[3]))
    if not scores:
        return None, []
    return float(np.mean(scores)), scores


# --- FROC -----------------------------------------------------------------


@dataclass
class ScoredImage:
    """One image prepared for a threshold sweep.

    ``candidates`` is the labelled HDoG candidate mask, ``proximity`` the
    predicted proximity map and ``reference`` the labelled ground truth.
    ``area_mask`` optionally restricts the false-positive area denominator.
    """

    candidates: np.ndarray
    proximity: np.ndarray
    reference: np.ndarray
    pixel_spacing_mm: float = 0.070
    area_mask: np.ndarray | None = None

    def area_cm2(self) -> float:
        if self.area_mask is None:
            return image_area_cm2(self.reference.shape, self.pixel_spacing_mm)
        return np.count_nonzero(self.area_mask) * (self.pixel_spacing_mm / 10.0) ** 2


@dataclass(frozen=True)
class DetectionTable:
    """Per-image TP/FP counts at every threshold of a sweep."""

    thresholds: np.ndarray  # (T,), descending
    tp: np.ndarray  # (I, T)
    fp: np.ndarray  # (I, T)
    n_ref: np.ndarray  # (I,)
    area_cm2: np.ndarray  # (I,)

    @property
    def n_images(self) -> int:
        return len(self.n_ref)


def default_thresholds(n: int = 101) -> np.ndarray:
    return np.linspace(1.0, 0.0, n)


def _tally_image(img: ScoredImage, thresholds, rule, o_thr, mode):
    cand = np.asarray(img.candidates)
    _same_shape(cand, img.reference)
    _same_shape(cand, img.proximity)
    geo = PairGeometry.build(cand, img.reference)
    pairs = geo.eligible_pairs(rule)
    n_ref = int(np.count_nonzero(geo.ref_area))
    n_obj = len(geo.pred_area)
    on = cand > 0
    labs = cand[on]
    vals = np.asarray(img.proximity)[on]
    area = np.maximum(geo.pred_area, 1)
    tp = np.zeros(len(thresholds), dtype=np.int64)
    fp = np.zeros(len(thresholds), dtype=np.int64)
    for t, p_thr in enumerate(thresholds):
        inside = np.bincount(labs[vals >= p_thr], minlength=n_obj + 1)[1:]
        keep = retained_objects(inside / area, o_thr, mode) & (geo.pred_area > 0)
        matched = len(greedy_match(pairs, n_obj, len(geo.ref_area), keep))
        tp[t] = matched
        fp[t] = int(np.count_nonzero(keep)) - matched
    return tp, fp, n_ref, img.area_cm2()


def detection_table(
    images: list[ScoredImage],
    thresholds=None,
    rule: MatchRule | None = None,
    o_thr: float = 0.3,
    mode: str = "geq",
    threads: int = 1,
) -> DetectionTable:
    if not images:
        raise DataError("FROC analysis needs at least one image")
    rule = rule or MatchRule()
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, float)
    thresholds = np.sort(thresholds)[::-1]
    if thresholds.size == 0 or thresholds[0] > 1 or thresholds[-1] < 0:
        raise ParameterError("thresholds must be a non-empty grid inside [0, 1]")

    def run(img):
        return _tally_image(img, thresholds, rule, o_thr, mode)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run, images))
    else:
        rows = [run(img) for img in images]
    tp = np.array([r[0] for r in rows])
    fp = np.array([r[1] for r in rows])
    n_ref = np.array([r[2] for r in rows], dtype=np.int64)
    area = np.array([r[3] for r in rows], dtype=np.float64)
    if n_ref.sum() == 0:
        raise DataError("reference masks contain no objects")
    return DetectionTable(thresholds, tp, fp, n_ref, area)


def froc_from_table(table: DetectionTable, rows=None) -> FrocCurve:
    idx = np.arange(table.n_images) if rows is None else np.asarray(rows)
    tp = table.tp[idx].sum(axis=0)
    fp = table.fp[idx].sum(axis=0)
    n_ref = int(table.n_ref[idx].sum())
    area = float(table.area_cm2[idx].sum())
    points = [
        FrocPoint(
            float(t),
            int(a),
            int(b),
            n_ref - int(a),
            a / n_ref if n_ref else 0.0,
            b / area if area > 0 else 0.0,
        )
        for t, a, b in zip(table.thresholds, tp, fp)
    ]
    return FrocCurve(points, len(idx), n_ref)


def froc_curve(images, thresholds=None, rule=None, o_thr=0.3, mode="geq", threads=1) -> FrocCurve:
    return froc_from_table(detection_table(images, thresholds, rule, o_thr, mode, threads))


def pauc(fp, tpr, fp_range=(0.0, 1.0)) -> float:
    """Normalized area under TPR(FP) over ``fp_range``.

    The curve is anchored at the origin and extended horizontally past its
    largest false-positive rate.
    """
    lo, hi = fp_range
    if not hi > lo >= 0:
        raise ParameterError(f"invalid FP range {fp_range}")
    pts = sorted(zip(np.asarray(fp, float).tolist(), np.asarray(tpr, float).tolist()))
    pts = [(0.0, 0.0)] + pts
    area = 0.0
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        a, b = max(x0, lo), min(x1, hi)
        if b <= a:
            continue
        slope = (y1 - y0) / (x1 - x0)
        ya = y0 + slope * (a - x0)
        yb = y0 + slope * (b - x0)
        area += 0.5 * (ya + yb) * (b - a)
    last_x, last_y = pts[-1]
    if last_x < hi:
        area += last_y * (hi - max(last_x, lo))
    return area / (hi - lo)


def curve_pauc(curve: FrocCurve, fp_range=(0.0, 1.0)) -> float:
    return pauc(curve.fp_per_cm2, curve.tpr, fp_range)


def pauc_bootstrap(
    table: DetectionTable, fp_range=(0.0, 1.0), samples: int = 100, seed: int = 0
) -> PaucSummary:
    """Resample images with replacement and summarize the partial AUC."""
    if table.n_images < 2:
        raise DataError("bootstrap confidence intervals need at least 2 images")
    if samples < 1:
        raise ParameterError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    values = np.empty(samples)
    for s in range(samples):
        rows = rng.integers(0, table.n_images, table.n_images)
        values[s] = curve_pauc(froc_from_table(table, rows), fp_range)
    low, high = np.percentile(values, [2.5, 97.5])
    return PaucSummary(float(values.mean()), float(low), float(high), samples, seed, tuple(fp_range))


def operating_point(curve: FrocCurve) -> FrocPoint:
    """Point nearest (TPR 1, FP 0); ties prefer higher TPR, then fewer FPs."""
    if not curve.points:
        raise DataError("empty FROC curve")
    return min(
        curve.points,
        key=lambda p: (np.hypot(1.0 - p.tpr, p.fp_per_cm2), -p.tpr, p.fp_per_cm2, -p.p_thr),
    )


def froc_svg(curve: FrocCurve, width: int = 480, height: int = 360, fp_max: float | None = None) -> str:
    """Minimal dependency-free SVG line plot of TPR against FP per cm²."""
    fp = curve.fp_per_cm2
    tpr = curve.tpr
    order = np.lexsort((tpr, fp))
    fp_max = fp_max or max(1.0, float(fp.max(initial=0.0)))
    m = 40
    sx = (width - 2 * m) / fp_max
    sy = height - 2 * m
    pts = " ".join(
        f"{m + min(fp[i], fp_max) * sx:.2f},{height - m - tpr[i] * sy:.2f}" for i in order
    )
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>\n'
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>\n'
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="12">'
        f"FP per cm2 (0 to {fp_max:g})</text>\n"
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})"'
        f' text-anchor="middle">TPR</text>\n'
        f'<polyline fill="none" stroke="steelblue" stroke-width="2" points="{pts}"/>\n'
        "</svg>\n"
    )
