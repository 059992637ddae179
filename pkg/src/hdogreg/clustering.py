"""Spatial grouping of segmented calcifications and cluster characterization.

Centroids are grouped with OPTICS, each group is summarized by 24 size,
shape and density descriptors, and the standardized descriptors are
partitioned with k-means. Agreement with reference distribution labels is
scored by homogeneity.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import cdist

from .errors import DataError, ParameterError
from .hessian_blob import label_components

FEATURE_NAMES = (
    "count",
    "hull_area_mm2",
    "hull_perimeter_mm",
    "density_per_mm2",
    "hull_circularity",
    "hull_aspect_ratio",
    "eccentricity",
    "orientation_rad",
    "nn_dist_mean_mm",
    "nn_dist_std_mm",
    "nn_dist_min_mm",
    "nn_dist_max_mm",
    "pair_dist_mean_mm",
    "pair_dist_std_mm",
    "radius_of_gyration_mm",
    "object_area_mean_mm2",
    "object_area_std_mm2",
    "object_area_min_mm2",
    "object_area_max_mm2",
    "object_circularity_mean",
    "object_circularity_std",
    "object_major_axis_mean_mm",
    "object_major_axis_std_mm",
    "core_fraction",
)


@dataclass(frozen=True)
class ReachabilityProfile:
    """OPTICS output. Arrays are indexed by point; ``order`` is the visit order."""

    order: np.ndarray
    reachability: np.ndarray
    core_distance: np.ndarray

    def ordered_reachability(self) -> np.ndarray:
        return self.reachability[self.order]


# --- OPTICS ---------------------------------------------------------------


def core_distances(dist: np.ndarray, min_samples: int, max_eps: float) -> np.ndarray:
    """Distance to the ``min_samples``-th nearest point, counting the point itself."""
    n = len(dist)
    if min_samples > n:
        return np.full(n, np.inf)
    core = np.partition(dist, min_samples - 1, axis=1)[:, min_samples - 1]
    return np.where(core <= max_eps, core, np.inf)


def optics_order(points, min_samples: int = 5, max_eps: float = 10.0) -> ReachabilityProfile:
    """Exact OPTICS ordering with (reachability, index) tie-breaking."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise DataError("OPTICS needs at least one point")
    if min_samples < 2:
        raise ParameterError(f"min_samples must be >= 2, got {min_samples}")
    if not max_eps > 0:
        raise ParameterError(f"max_eps must be > 0, got {max_eps}")
    dist = cdist(pts, pts)
    core = core_distances(dist, min_samples, max_eps)
    reach = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    order = []
    for start in range(n):
        if done[start]:
            continue
        seeds = [(np.inf, start)]
        while seeds:
            r, p = heapq.heappop(seeds)
            if done[p] or r > reach[p]:
                continue
            done[p] = True
            order.append(p)
            if not np.isfinite(core[p]):
                continue
            nbrs = np.flatnonzero((dist[p] <= max_eps) & ~done)
            new = np.maximum(core[p], dist[p, nbrs])
            better = new < reach[nbrs]
            for q, rq in zip(nbrs[better].tolist(), new[better].tolist()):
                reach[q] = rq
                heapq.heappush(seeds, (rq, q))
    return ReachabilityProfile(np.array(order, dtype=np.int64), reach, core)


def extract_clusters(profile: ReachabilityProfile, eps_cut: float) -> np.ndarray:
    """DBSCAN-equivalent labels from an OPTICS profile; -1 marks noise.

    A point whose reachability exceeds ``eps_cut`` (an undefined reachability
    always does) opens a new cluster if it is itself a core point at
    ``eps_cut``, and is noise otherwise.
    """
    if eps_cut < 0:
        raise ParameterError(f"eps_cut must be >= 0, got {eps_cut}")
    labels = np.full(len(profile.order), -1, dtype=np.int64)
    current = -1
    for p in profile.order:
        r = profile.reachability[p]
        if not np.isfinite(r) or r > eps_cut:
            core = profile.core_distance[p]
            if np.isfinite(core) and core <= eps_cut:
                current += 1
                labels[p] = current
        else:
            labels[p] = current
    return labels


# --- per-object descriptors ------------------------------------------------


@dataclass(frozen=True)
class ObjectTable:
    """Per-object geometry of a segmentation mask in physical units."""

    centroids_mm: np.ndarray  # (n, 2) as (x, y)
    areas_mm2: np.ndarray
    circularities: np.ndarray
    major_axes_mm: np.ndarray

    def __len__(self):
        return len(self.areas_mm2)

    def subset(self, idx) -> "ObjectTable":
        return ObjectTable(self.centroids_mm[idx], self.areas_mm2[idx], self.circularities[idx], self.major_axes_mm[idx])


def describe_objects(mask, pixel_spacing_mm: float = 0.070) -> ObjectTable:
    """Centroid, area, circularity (crack perimeter) and major axis of each 8-connected object."""
    labels, n = label_components(mask)
    if n == 0:
        empty = np.zeros(0)
        return ObjectTable(np.zeros((0, 2)), empty, empty, empty)
    flat = labels.ravel()
    ys, xs = np.indices(labels.shape)
    area = np.bincount(flat, minlength=n + 1)[1:].astype(np.float64)
    my = np.bincount(flat, ys.ravel(), n + 1)[1:] / area
    mx = np.bincount(flat, xs.ravel(), n + 1)[1:] / area
    dy = ys.ravel() - np.concatenate([[0.0], my])[flat]
    dx = xs.ravel() - np.concatenate([[0.0], mx])[flat]
    # pixel second moments, each pixel treated as a unit square (+1/12)
    cyy = np.bincount(flat, dy * dy, n + 1)[1:] / area + 1.0 / 12
    cxx = np.bincount(flat, dx * dx, n + 1)[1:] / area + 1.0 / 12
    cxy = np.bincount(flat, dx * dy, n + 1)[1:] / area
    lam = 0.5 * (cxx + cyy) + np.sqrt(0.25 * (cxx - cyy) ** 2 + cxy**2)
    major = 4.0 * np.sqrt(lam)
    padded = np.pad(labels, 1)
    perim = np.zeros(n + 1)
    for axis in (0, 1):
        a = padded
        b = np.roll(padded, 1, axis=axis)
        edge = a != b
        perim += np.bincount(a[edge], minlength=n + 1)
        perim += np.bincount(b[edge], minlength=n + 1)
    perim = perim[1:]
    s = pixel_spacing_mm
    circ = 4.0 * math.pi * area / perim**2
    return ObjectTable(np.column_stack([mx, my]) * s, area * s * s, circ, major * s)


# --- cluster descriptors --------------------------------------------------


def _hull(points: np.ndarray):
    """(area, perimeter, vertices); degenerate sets fall back to a flat polygon."""
    if len(points) >= 3:
        try:
            h = ConvexHull(points)
            return float(h.volume), float(h.area), points[h.vertices]
        except QhullError:
            pass
    if len(points) < 2:
        return 0.0, 0.0, points
    span = float(cdist(points, points).max())
    return 0.0, 2.0 * span, points


def _min_width(vertices: np.ndarray) -> float:
    """Minimum caliper width of a convex polygon given in order."""
    if len(vertices) < 3:
        return 0.0
    best = np.inf
    for i in range(len(vertices)):
        a, b = vertices[i], vertices[(i + 1) % len(vertices)]
        edge = b - a
        norm = np.hypot(*edge)
        if norm == 0:
            continue
        normal = np.array([-edge[1], edge[0]]) / norm
        proj = (vertices - a) @ normal
        best = min(best, proj.max() - proj.min())
    return float(best) if np.isfinite(best) else 0.0


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return (float(v.mean()), float(v.std())) if v.size else (0.0, 0.0)


def cluster_features(points_mm, objects: ObjectTable | None = None) -> np.ndarray:
    """The 24 cluster descriptors named in :data:`FEATURE_NAMES`.

    Undefined quantities of degenerate clusters (fewer than three points,
    collinear points, zero hull area) are reported as 0; the core fraction of
    a zero-area cluster counts points at the centroid.
    """
    pts = np.asarray(points_mm, dtype=np.float64).reshape(-1, 2)
    n = len(pts)
    if n == 0:
        raise DataError("a cluster needs at least one member")
    area, perim, verts = _hull(pts)
    density = n / area if area > 0 else 0.0
    circularity = 4 * math.pi * area / perim**2 if perim > 0 else 0.0
    width = _min_width(verts) if area > 0 else 0.0
    dist = cdist(pts, pts)
    diameter = float(dist.max())
    aspect = diameter / width if width > 0 else 0.0
    centre = pts.mean(axis=0)
    if n >= 2:
        cov = np.cov(pts.T, bias=True)
        evals, evecs = np.linalg.eigh(cov)
        lo, hi = evals
        ecc = (hi - lo) / (hi + lo) if hi + lo > 0 else 0.0
        v = evecs[:, 1]
        orient = math.atan2(v[1], v[0]) % math.pi if hi > lo else 0.0
        np.fill_diagonal(dist, np.inf)
        nn = dist.min(axis=1)
        np.fill_diagonal(dist, 0.0)
        pair = dist[np.triu_indices(n, 1)]
    else:
        ecc = orient = 0.0
        nn = pair = np.zeros(0)
    nn_mean, nn_std = _mean_std(nn)
    nn_min = float(nn.min()) if nn.size else 0.0
    nn_max = float(nn.max()) if nn.size else 0.0
    pair_mean, pair_std = _mean_std(pair)
    r_centre = np.hypot(*(pts - centre).T)
    gyration = float(np.sqrt(np.mean(r_centre**2)))
    core = float(np.mean(r_centre <= 0.5 * math.sqrt(area / math.pi)))
    if objects is not None and len(objects):
        a_mean, a_std = _mean_std(objects.areas_mm2)
        a_min, a_max = float(objects.areas_mm2.min()), float(objects.areas_mm2.max())
        c_mean, c_std = _mean_std(objects.circularities)
        m_mean, m_std = _mean_std(objects.major_axes_mm)
    else:
        a_mean = a_std = a_min = a_max = c_mean = c_std = m_mean = m_std = 0.0
    return np.array(
        [
            n, area, perim, density, circularity, aspect, ecc, orient,
            nn_mean, nn_std, nn_min, nn_max, pair_mean, pair_std, gyration,
            a_mean, a_std, a_min, a_max, c_mean, c_std, m_mean, m_std, core,
        ],
        dtype=np.float64,
    )


def standardize(matrix) -> np.ndarray:
    """Column z-scores with the population standard deviation; constant columns become 0."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or len(x) < 2:
        raise DataError("standardization needs a 2D matrix with at least 2 rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = np.zeros_like(x)
    ok = std > 0
    out[:, ok] = (x[:, ok] - mean[ok]) / std[ok]
    return out


# --- k-means --------------------------------------------------------------


def _kmeanspp(x: np.ndarray, k: int, rng) -> np.ndarray:
    centres = [x[rng.integers(len(x))]]
    d2 = ((x - centres[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(len(x), p=d2 / total))
        else:
            idx = int(rng.integers(len(x)))
        centres.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centres)


def _lloyd(x: np.ndarray, centres: np.ndarray, max_iter: int):
    k = len(centres)
    labels = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centres[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        counts = np.bincount(new, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # move the point farthest from its centre into the empty cluster
            far = int(np.argmax(d2[np.arange(len(x)), new]))
            new[far] = empty
            d2[far] = 0.0
            counts = np.bincount(new, minlength=k)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centres = np.array([x[labels == j].mean(axis=0) for j in range(k)])
    inertia = float(((x - centres[labels]) ** 2).sum())
    return labels, centres, inertia


def kmeans(matrix, k: int = 5, seed: int = 0, restarts: int = 10, max_iter: int = 300):
    """Lloyd's algorithm from k-means++ seeds; best of ``restarts`` runs.

    Returns ``(labels, inertia)``.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("k-means expects a 2D matrix")
    if k < 1 or len(x) < k:
        raise DataError(f"k-means needs at least k={k} rows, got {len(x)}")
    if restarts < 1:
        raise ParameterError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, _, inertia = _lloyd(x, _kmeanspp(x, k, rng), max_iter)
        if best is None or inertia < best[1]:
            best = (labels, inertia)
    return best


# --- scoring --------------------------------------------------------------


def _entropy(counts: np.ndarray) -> float:
    total = counts.sum()
    p = counts[counts > 0] / total
    return float(-(p * np.log(p)).sum())


def homogeneity(true_labels, pred_labels) -> float:
    """1 - H(C|K)/H(C) with natural-log entropies; 1 when the classes are trivial."""
    true_labels = np.asarray(true_labels)
    pred_labels = np.asarray(pred_labels)
    if true_labels.shape != pred_labels.shape or true_labels.ndim != 1:
        raise ParameterError("label arrays must be 1D and of equal length")
    if true_labels.size == 0:
        raise DataError("homogeneity needs at least one element")
    _, c = np.unique(true_labels, return_inverse=True)
    _, k = np.unique(pred_labels, return_inverse=True)
    table = np.zeros((c.max() + 1, k.max() + 1))
    np.add.at(table, (c, k), 1)
    h_c = _entropy(table.sum(axis=1))
    if h_c == 0:
        return 1.0
    n = table.sum()
    nz = table > 0
    col = table.sum(axis=0, keepdims=True)
    h_ck = float(-(table[nz] / n * np.log(table[nz] / np.broadcast_to(col, table.shape)[nz])).sum())
    return 1.0 - h_ck / h_c


def duplicate_multilabel(cluster_images, image_labels: dict) -> list[tuple[int, object]]:
    """One ``(cluster_index, label)`` row per label of the image each cluster came from."""
    rows = []
    for i, img in enumerate(cluster_images):
        labels = image_labels.get(img)
        if not labels:
            raise DataError(f"image {img!r} has no distribution label")
        rows += [(i, lab) for lab in labels]
    return rows


# --- end-to-end characterization ---------------------------------------------


@dataclass(frozen=True)
class OpticsParams:
    min_samples: int = 5
    max_eps: float = 10.0
    eps_cut: float = 5.0


@dataclass
class ClusterAnalysis:
    features: np.ndarray  # (n_clusters, 24)
    cluster_image: list  # image id per cluster
    cluster_members: list  # object indices per cluster
    groups: np.ndarray | None  # k-means group per cluster
    homogeneity: float | None
    params: OpticsParams


@dataclass
class ImageObjects:
    image_id: object
    objects: ObjectTable
    labels: tuple = ()


def clusters_for_image(objs: ObjectTable, params: OpticsParams) -> list[np.ndarray]:
    if len(objs) == 0:
        return []
    profile = optics_order(objs.centroids_mm, params.min_samples, params.max_eps)
    labels = extract_clusters(profile, params.eps_cut)
    return [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]


def characterize(
    images: list[ImageObjects],
    params: OpticsParams | None = None,
    k: int = 5,
    seed: int = 0,
    restarts: int = 10,
) -> ClusterAnalysis:
    """Cluster every image, describe each cluster, group the clusters, score them."""
    params = params or OpticsParams()
    feats, owners, members = [], [], []
    for img in images:
        for idx in clusters_for_image(img.objects, params):
            sub = img.objects.subset(idx)
            feats.append(cluster_features(sub.centroids_mm, sub))
            owners.append(img.image_id)
            members.append(idx)
    features = np.array(feats).reshape(-1, len(FEATURE_NAMES))
    groups = score = None
    if len(features) >= max(k, 2):
        groups, _ = kmeans(standardize(features), k, seed, restarts)
        label_map = {img.image_id: list(img.labels) for img in images}
        if all(label_map.get(o) for o in owners):
            rows = duplicate_multilabel(owners, label_map)
            truth = np.array([str(lab) for _, lab in rows])
            pred = np.array([groups[i] for i, _ in rows])
            score = homogeneity(truth, pred)
    return ClusterAnalysis(features, owners, members, groups, score, params)


def tune_optics(
    images: list[ImageObjects],
    trials: int = 100,
    seed: int = 0,
    k: int = 5,
    restarts: int = 10,
    min_samples_range=(2, 10),
    max_eps_range=(1.0, 20.0),
):
    """Random search over OPTICS settings maximizing homogeneity.

    Returns ``(best_analysis, history)`` where history holds
    ``(OpticsParams, score_or_None)`` per trial in draw order.
    """
    rng = np.random.default_rng(seed)
    best, history = None, []
    for _ in range(trials):
        ms = int(rng.integers(min_samples_range[0], min_samples_range[1] + 1))
        me = float(rng.uniform(*max_eps_range))
        ec = float(rng.uniform(0.1 * me, me))
        params = OpticsParams(ms, me, ec)
        result = characterize(images, params, k, seed, restarts)
        history.append((params, result.homogeneity))
        if result.homogeneity is not None and (best is None or result.homogeneity > best.homogeneity):
            best = result
    return best, history
