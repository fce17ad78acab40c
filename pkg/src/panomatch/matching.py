"""Inference-time candidate filtering and cross-view instance matching.

Candidates are thinned by a confidence threshold and NMS, projected into the
partner view through the flat-terrain geometry, gated by projected overlap,
and resolved one-to-one by minimizing a convex combination of appearance
distance and (1 - projected IoU).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .data import BoundingBox, Detection, GroundTruthBox
from .errors import AboveHorizon, ConfigError, DegenerateTarget, FeatureDimMismatch
from .geo import (
    CameraPose,
    PanoramaGeometry,
    PixelPoint,
    enu_from_geo,
    geo_from_pixel,
    ground_distance,
    ground_distance_from_pixel_row,
    pixel_from_geo,
    wrap_x,
)


@dataclass
class MatchingConfig:
    conf_threshold: float = 0.01
    nms_iou: float = 0.5
    gate_iou: float = 0.1
    feature_weight: float = 0.5  # lambda in the pair cost
    assignment_mode: str = "optimal"

    def __post_init__(self):
        if not 0.0 <= self.conf_threshold <= 1.0:
            raise ConfigError(f"conf_threshold {self.conf_threshold} outside [0, 1]")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ConfigError(f"nms_iou {self.nms_iou} outside (0, 1]")
        if not 0.0 <= self.gate_iou <= 1.0:
            raise ConfigError(f"gate_iou {self.gate_iou} outside [0, 1]")
        if not 0.0 <= self.feature_weight <= 1.0:
            raise ConfigError(f"feature_weight {self.feature_weight} outside [0, 1]")
        if self.assignment_mode not in ("optimal", "greedy"):
            raise ConfigError(f"unknown assignment_mode {self.assignment_mode!r}")


@dataclass(frozen=True)
class MatchPair:
    det_x_local_id: int
    det_y_local_id: int
    projected_iou: float
    feature_dist: float
    cost: float


@dataclass
class MatchingResult:
    pairs: list[MatchPair] = field(default_factory=list)
    unmatched_x: list[int] = field(default_factory=list)
    unmatched_y: list[int] = field(default_factory=list)

    def to_jsonable(self) -> dict:
        return {
            "pairs": [
                {
                    "x": p.det_x_local_id,
                    "y": p.det_y_local_id,
                    "iou": p.projected_iou,
                    "fdist": p.feature_dist,
                    "cost": p.cost,
                }
                for p in self.pairs
            ],
            "unmatched_x": list(self.unmatched_x),
            "unmatched_y": list(self.unmatched_y),
        }


def _interval_overlap(a0: float, a1: float, b0: float, b1: float) -> float:
    return max(0.0, min(a1, b1) - max(a0, b0))


def iou(a: BoundingBox, b: BoundingBox, wrap_width: float | None = None) -> float:
    """Jaccard index of two boxes; with wrap_width, the x axis is cyclic."""
    if wrap_width is None:
        ox = _interval_overlap(a.x_min, a.x_max, b.x_min, b.x_max)
    else:
        ox = max(
            _interval_overlap(a.x_min, a.x_max, b.x_min + s, b.x_max + s)
            for s in (-wrap_width, 0.0, wrap_width)
        )
    oy = _interval_overlap(a.y_min, a.y_max, b.y_min, b.y_max)
    inter = ox * oy
    if inter <= 0.0:
        return 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def filter_candidates(dets: list[Detection], cfg: MatchingConfig) -> list[Detection]:
    """Drop candidates below the classification confidence threshold."""
    return [d for d in dets if d.score >= cfg.conf_threshold]


def nms(dets: list[Detection], iou_threshold: float,
        wrap_width: float | None = None) -> list[Detection]:
    """Greedy non-maximum suppression.

    Returns survivors sorted by descending score; a box is suppressed when
    its IoU with an already kept, higher-scoring box exceeds the threshold.
    Equal scores break ties toward the lower local_id, making the result
    independent of the input order.
    """
    order = sorted(dets, key=lambda d: (-d.score, d.local_id))
    kept: list[Detection] = []
    for cand in order:
        if all(iou(cand.box, k.box, wrap_width) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept


def project_detection(
    det: Detection,
    cam_src: CameraPose,
    cam_dst: CameraPose,
    pano_src: PanoramaGeometry,
    pano_dst: PanoramaGeometry,
) -> BoundingBox:
    """Project a detection box into another camera's panorama.

    The box footpoint is geo-coded under the flat-terrain assumption and
    re-projected; width/height scale with the ground-distance ratio
    z_src / z_dst (apparent size is inversely proportional to distance),
    adjusted for differing image resolutions. The result is anchored at the
    projected footpoint, x wrapped into [0, W_dst), y clamped to the image.

    Raises:
        AboveHorizon: the footpoint row does not intersect the ground plane.
    """
    fx, fy = det.box.footpoint()
    geo = geo_from_pixel(cam_src, PixelPoint(fx, fy), pano_src)
    z_src = ground_distance_from_pixel_row(cam_src, fy, pano_src)
    dst = pixel_from_geo(cam_dst, geo, pano_dst)
    z_dst = ground_distance(enu_from_geo(cam_dst, geo))
    scale = z_src / z_dst
    w = det.box.width * scale * pano_dst.width_px / pano_src.width_px
    h = det.box.height * scale * pano_dst.height_px / pano_src.height_px
    cx = wrap_x(dst.x, pano_dst.width_px)
    y_max = min(float(pano_dst.height_px), dst.y)
    y_min = max(0.0, y_max - h)
    return BoundingBox(cx - w / 2.0, y_min, cx + w / 2.0, y_max)


def feature_distance(a: np.ndarray | None, b: np.ndarray | None) -> float:
    """Euclidean appearance distance; 0 when either side carries no feature."""
    if a is None or b is None:
        return 0.0
    if a.shape != b.shape:
        raise FeatureDimMismatch(f"feature lengths {a.shape[0]} vs {b.shape[0]}")
    return float(np.linalg.norm(a - b))


def pair_cost(projected_iou: float, feature_dist: float, feature_weight: float) -> float:
    """Convex combination of normalized appearance distance and 1 - IoU."""
    norm_fd = feature_dist / (1.0 + feature_dist)
    return feature_weight * norm_fd + (1.0 - feature_weight) * (1.0 - projected_iou)


def assign(cost_matrix: np.ndarray, mode: str = "optimal") -> list[tuple[int, int]]:
    """One-to-one assignment on an n x m cost matrix; +inf marks infeasible.

    optimal: maximum-cardinality feasible matching of minimum total cost
    (Jonker-Volgenant via scipy after replacing +inf with a dominating
    sentinel). greedy: repeatedly take the globally smallest remaining entry.
    """
    cost = np.asarray(cost_matrix, dtype=np.float64)
    if cost.size == 0:
        return []
    finite = np.isfinite(cost)
    if not finite.any():
        return []
    if mode == "greedy":
        work = cost.copy()
        out = []
        while np.isfinite(work).any():
            flat = np.argmin(np.where(np.isfinite(work), work, np.inf))
            i, j = np.unravel_index(flat, work.shape)
            out.append((int(i), int(j)))
            work[i, :] = np.inf
            work[:, j] = np.inf
        return sorted(out)
    if mode != "optimal":
        raise ConfigError(f"unknown assignment mode {mode!r}")
    # Sentinel large enough that any assignment using fewer infeasible cells
    # always beats one using more, so feasible cardinality is maximized first.
    big = (float(cost[finite].max()) + 1.0) * (min(cost.shape) + 1)
    rows, cols = scipy.optimize.linear_sum_assignment(np.where(finite, cost, big))
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if finite[i, j])


def _assign_optional(cost: np.ndarray, mode: str) -> list[tuple[int, int]]:
    """Assignment where leaving a detection unmatched is free.

    Maximizes total affinity (1 - cost) instead of forcing maximum
    cardinality: a grazing overlap never steals a partner just because the
    alternative is no pair at all. Solved through assign() on the standard
    dummy-augmented square matrix; pairs with non-positive affinity are
    dropped.
    """
    n, m = cost.shape
    if mode == "greedy":
        work = np.where(cost < 1.0, cost, np.inf)
        return assign(work, "greedy")
    aug = np.full((n + m, m + n), np.inf)
    aug[:n, :m] = cost - 1.0
    aug[n:, m:] = 0.0
    for i in range(n):
        aug[i, m + i] = 0.0  # x_i stays unmatched
    for j in range(m):
        aug[n + j, j] = 0.0  # y_j stays unmatched
    return [
        (i, j)
        for i, j in assign(aug, "optimal")
        if i < n and j < m and cost[i, j] < 1.0
    ]


def _projected_overlaps(
    dets_a: list[Detection],
    dets_b: list[Detection],
    cam_a: CameraPose,
    cam_b: CameraPose,
    pano_a: PanoramaGeometry,
    pano_b: PanoramaGeometry,
) -> np.ndarray:
    """IoU of each A detection projected into B against each B box."""
    out = np.zeros((len(dets_a), len(dets_b)))
    for i, da in enumerate(dets_a):
        try:
            proj = project_detection(da, cam_a, cam_b, pano_a, pano_b)
        except (AboveHorizon, DegenerateTarget):
            continue
        for j, db in enumerate(dets_b):
            out[i, j] = iou(proj, db.box, wrap_width=pano_b.width_px)
    return out


def cross_view_match(
    dets_x: list[Detection],
    dets_y: list[Detection],
    cam_x: CameraPose,
    cam_y: CameraPose,
    pano_x: PanoramaGeometry,
    pano_y: PanoramaGeometry,
    cfg: MatchingConfig | None = None,
    prefilter: bool = False,
) -> MatchingResult:
    """Match detections across two views.

    Candidate pairs must reach gate_iou in projected overlap (tested in both
    projection directions, max taken); surviving pairs are resolved
    one-to-one by minimizing cost = lambda * fdist/(1+fdist) +
    (1-lambda) * (1 - projected IoU).
    """
    cfg = cfg or MatchingConfig()
    if prefilter:
        dets_x = nms(filter_candidates(dets_x, cfg), cfg.nms_iou, pano_x.width_px)
        dets_y = nms(filter_candidates(dets_y, cfg), cfg.nms_iou, pano_y.width_px)
    if not dets_x or not dets_y:
        return MatchingResult(
            unmatched_x=sorted(d.local_id for d in dets_x),
            unmatched_y=sorted(d.local_id for d in dets_y),
        )

    iou_xy = _projected_overlaps(dets_x, dets_y, cam_x, cam_y, pano_x, pano_y)
    iou_yx = _projected_overlaps(dets_y, dets_x, cam_y, cam_x, pano_y, pano_x)
    overlap = np.maximum(iou_xy, iou_yx.T)

    n, m = len(dets_x), len(dets_y)
    cost = np.full((n, m), np.inf)
    fdist = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            fdist[i, j] = feature_distance(dets_x[i].feature, dets_y[j].feature)
            if overlap[i, j] >= cfg.gate_iou:
                cost[i, j] = pair_cost(overlap[i, j], fdist[i, j], cfg.feature_weight)

    pairs = []
    matched_x: set[int] = set()
    matched_y: set[int] = set()
    for i, j in _assign_optional(cost, cfg.assignment_mode):
        pairs.append(
            MatchPair(
                det_x_local_id=dets_x[i].local_id,
                det_y_local_id=dets_y[j].local_id,
                projected_iou=float(overlap[i, j]),
                feature_dist=float(fdist[i, j]),
                cost=float(cost[i, j]),
            )
        )
        matched_x.add(i)
        matched_y.add(j)
    pairs.sort(key=lambda p: (p.det_x_local_id, p.det_y_local_id))
    return MatchingResult(
        pairs=pairs,
        unmatched_x=sorted(dets_x[i].local_id for i in range(n) if i not in matched_x),
        unmatched_y=sorted(dets_y[j].local_id for j in range(m) if j not in matched_y),
    )


def filter_identified(gt: list[GroundTruthBox]) -> list[GroundTruthBox]:
    """Keep only boxes carrying an instance id."""
    return [g for g in gt if g.instance_id is not None]


def match_boxes_iou(
    preds: list[BoundingBox],
    gts: list[GroundTruthBox],
    iou_threshold: float = 0.5,
    wrap_width: float | None = None,
) -> list[tuple[int, int]]:
    """Greedy best-IoU one-to-one pairing of predictions to ground truth.

    Pairs below the threshold are never formed; each side is used at most
    once. Returns (pred_idx, gt_idx) tuples sorted by pred index.
    """
    scored = []
    for i, p in enumerate(preds):
        for j, g in enumerate(gts):
            v = iou(p, g.box, wrap_width)
            if v >= iou_threshold:
                scored.append((-v, i, j))
    scored.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    out = []
    for _, i, j in scored:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        out.append((i, j))
    return sorted(out)
