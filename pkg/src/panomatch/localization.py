"""Geo-coordinate estimation from one or many views.

Single-view estimates come from the flat-terrain inverse projection.
Multi-view estimates intersect bearing rays by weighted linear least squares
in a local tangent plane; a least-squares affine fit stands in for a learned
projection-refinement stage. Both are closed-form replacements for the
original dense regression components, serving the same pipeline roles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import BoundingBox, Detection, SceneDataset
from .errors import (
    AboveHorizon,
    DegenerateBearings,
    DegenerateTarget,
    InsufficientData,
)
from .geo import (
    EARTH_RADIUS_M,
    CameraPose,
    GeoCoordinate,
    PanoramaGeometry,
    PixelPoint,
    bearing_from_pixel,
    enu_from_geo,
    geo_from_pixel,
    ground_distance,
    ground_distance_from_pixel_row,
)
from .matching import MatchingConfig, MatchingResult, cross_view_match, filter_candidates, nms

MIN_BEARING_SPREAD_DEG = 2.0
# Intersections farther than this from the cameras mean near-parallel rays;
# street objects live within a few hundred meters.
MAX_INTERSECTION_RANGE_M = 1.0e6


@dataclass
class Observation:
    """One sighting of an object: camera, footpoint pixel, image geometry."""

    camera: CameraPose
    pixel: PixelPoint
    pano: PanoramaGeometry
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"observation weight must be >= 0, got {self.weight}")


@dataclass(frozen=True)
class TriangulationResult:
    geo: GeoCoordinate
    residual_m: float
    n_obs: int


def localize_single(det: Detection, camera: CameraPose, pano: PanoramaGeometry) -> GeoCoordinate:
    """Flat-terrain geo-coding of a detection's box footpoint."""
    fx, fy = det.box.footpoint()
    return geo_from_pixel(camera, PixelPoint(fx, fy), pano)


def _tangent_xy(anchor: GeoCoordinate, p: GeoCoordinate) -> tuple[float, float]:
    """Meters east/north of anchor on the local tangent plane."""
    x = (
        EARTH_RADIUS_M
        * math.cos(math.radians(anchor.lat_deg))
        * math.sin(math.radians(p.lng_deg - anchor.lng_deg))
    )
    y = EARTH_RADIUS_M * math.sin(math.radians(p.lat_deg - anchor.lat_deg))
    return x, y


def _tangent_to_geo(anchor: GeoCoordinate, x: float, y: float) -> GeoCoordinate:
    lat = anchor.lat_deg + math.degrees(math.asin(y / EARTH_RADIUS_M))
    lng = anchor.lng_deg + math.degrees(
        math.asin(x / (EARTH_RADIUS_M * math.cos(math.radians(anchor.lat_deg))))
    )
    return GeoCoordinate(lat, lng)


def bearing_spread_deg(bearings_deg: np.ndarray) -> float:
    """Largest pairwise difference between ray *directions* (mod 180)."""
    spread = 0.0
    b = np.asarray(bearings_deg) % 180.0
    for i in range(len(b)):
        for j in range(i + 1, len(b)):
            d = abs(b[i] - b[j])
            spread = max(spread, min(d, 180.0 - d))
    return spread


def triangulate_rays(
    points_xy: np.ndarray, bearings_deg: np.ndarray, weights: np.ndarray | None = None
) -> tuple[np.ndarray, float]:
    """Weighted least-squares intersection of 2-D bearing rays.

    Each ray starts at points_xy[i] with compass bearing bearings_deg[i]
    (x east, y north). Minimizes the weighted squared perpendicular distance
    sum_i w_i ||(I - d_i d_i^T)(q - p_i)||^2 via its normal equations.

    Raises:
        DegenerateBearings: all ray directions within MIN_BEARING_SPREAD_DEG.
    """
    pts = np.asarray(points_xy, dtype=np.float64)
    brs = np.asarray(bearings_deg, dtype=np.float64)
    w = np.ones(len(pts)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        w = np.ones(len(pts))
    if len(pts) < 2:
        raise DegenerateBearings("need at least 2 rays")
    if bearing_spread_deg(brs) < MIN_BEARING_SPREAD_DEG:
        raise DegenerateBearings(
            f"bearing spread below {MIN_BEARING_SPREAD_DEG} degrees"
        )
    a = np.zeros((2, 2))
    rhs = np.zeros(2)
    projs = []
    for p, b_deg, wi in zip(pts, brs, w):
        b = math.radians(b_deg)
        d = np.array([math.sin(b), math.cos(b)])
        proj = np.eye(2) - np.outer(d, d)  # projector onto the ray's normal
        a += wi * proj
        rhs += wi * proj @ p
        projs.append(proj)
    q = np.linalg.solve(a, rhs)
    if float(np.linalg.norm(q - pts.mean(axis=0))) > MAX_INTERSECTION_RANGE_M:
        raise DegenerateBearings("rays intersect unreasonably far away")
    sq = sum(wi * float((q - p) @ proj @ (q - p)) for p, proj, wi in zip(pts, projs, w))
    residual = math.sqrt(max(0.0, sq / w.sum()))
    return q, residual


def _wrap_pi(a: float) -> float:
    return (a + math.pi) % (2.0 * math.pi) - math.pi


def triangulate(observations: list[Observation]) -> TriangulationResult:
    """Intersect the bearing rays of several observations of one object.

    A linear least-squares solve in the tangent plane anchored at the camera
    centroid provides the estimate, then a few Gauss-Newton passes re-measure
    each bearing through the exact per-camera ENU model and shrink the
    weighted perpendicular residuals to numerical precision (one tangent
    plane distorts east offsets by ~tan(lat) * extent/R, meters of error at
    city latitudes are avoided this way).

    Raises:
        DegenerateBearings: fewer than 2 observations or near-parallel rays;
            callers fall back to single-view on the highest-weight observation.
    """
    if len(observations) < 2:
        raise DegenerateBearings("need at least 2 observations")
    anchor = GeoCoordinate(
        sum(o.camera.location.lat_deg for o in observations) / len(observations),
        sum(o.camera.location.lng_deg for o in observations) / len(observations),
    )
    pts = np.array([_tangent_xy(anchor, o.camera.location) for o in observations])
    bearings_rad = np.array(
        [bearing_from_pixel(o.camera, o.pixel.x, o.pano) for o in observations]
    )
    weights = np.array([o.weight for o in observations])
    if weights.sum() <= 0:
        weights = np.ones(len(observations))
    q, _ = triangulate_rays(pts, np.degrees(bearings_rad), weights)
    geo = _tangent_to_geo(anchor, float(q[0]), float(q[1]))

    normals = np.stack([np.array([math.cos(b), -math.sin(b)]) for b in bearings_rad])

    def lateral_offsets(at: GeoCoordinate) -> np.ndarray:
        out = np.zeros(len(observations))
        for i, o in enumerate(observations):
            enu = enu_from_geo(o.camera, at)
            z = ground_distance(enu)
            out[i] = z * _wrap_pi(bearings_rad[i] - math.atan2(enu.e_x, enu.e_y))
        return out

    for _ in range(4):
        laterals = lateral_offsets(geo)
        a = np.zeros((2, 2))
        rhs = np.zeros(2)
        for n, l, w in zip(normals, laterals, weights):
            a += w * np.outer(n, n)
            rhs += w * n * l
        step = np.linalg.solve(a, rhs)
        if float(np.hypot(*step)) > MAX_INTERSECTION_RANGE_M:
            raise DegenerateBearings("refinement diverged; rays nearly parallel")
        geo = _tangent_to_geo(geo, float(step[0]), float(step[1]))
        if float(np.hypot(*step)) < 1e-10:
            break
    final = lateral_offsets(geo)
    residual = math.sqrt(float(np.sum(weights * final**2) / weights.sum()))
    return TriangulationResult(geo=geo, residual_m=residual, n_obs=len(observations))


# ---------------------------------------------------------------------------
# Projection correction (closed-form stand-in for a learned refinement head)
# ---------------------------------------------------------------------------

@dataclass
class ProjectionCorrection:
    """Per-coordinate affine map applied to raw projected boxes.

    scale/offset are ordered (x_min, y_min, x_max, y_max); identity is
    scale=1, offset=0 everywhere. 4 coefficients per image axis in total.
    """

    scale: np.ndarray
    offset: np.ndarray
    rmse_before: float
    rmse_after: float
    n_pairs: int

    def apply(self, box: BoundingBox) -> BoundingBox:
        raw = np.array(box.as_list())
        corrected = self.scale * raw + self.offset
        return BoundingBox(*corrected.tolist())


def fit_projection_correction(
    train_pairs: list[tuple[BoundingBox, BoundingBox]], min_pairs: int = 8
) -> ProjectionCorrection:
    """Least-squares affine correction from (projected box, ground-truth box) pairs.

    Each coordinate gets an independent scale/offset minimizing squared pixel
    residual; the identity map is in the hypothesis class, so the fit never
    increases the training-set mean squared residual.

    Raises:
        InsufficientData: fewer than min_pairs pairs.
    """
    if len(train_pairs) < min_pairs:
        raise InsufficientData(f"need >= {min_pairs} pairs, got {len(train_pairs)}")
    raw = np.array([p.as_list() for p, _ in train_pairs])
    target = np.array([g.as_list() for _, g in train_pairs])
    scale = np.ones(4)
    offset = np.zeros(4)
    for k in range(4):
        x, t = raw[:, k], target[:, k]
        if np.ptp(x) < 1e-9:
            # Constant column: scale is unidentifiable, fit translation only.
            offset[k] = float(np.mean(t - x))
            continue
        a = np.stack([x, np.ones_like(x)], axis=1)
        coef, *_ = np.linalg.lstsq(a, t, rcond=None)
        scale[k], offset[k] = float(coef[0]), float(coef[1])
    before = float(np.sqrt(np.mean((raw - target) ** 2)))
    after = float(np.sqrt(np.mean((raw * scale + offset - target) ** 2)))
    return ProjectionCorrection(
        scale=scale, offset=offset, rmse_before=before, rmse_after=after,
        n_pairs=len(train_pairs),
    )


# ---------------------------------------------------------------------------
# Full localization pipeline
# ---------------------------------------------------------------------------

@dataclass
class TrackEstimate:
    track_id: str
    geo: GeoCoordinate | None
    n_views: int
    residual_m: float
    method: str  # "triangulated" | "single_view"
    members: list[tuple[str, int]] = field(default_factory=list)
    error: str | None = None

    def to_jsonable(self) -> dict:
        return {
            "track_id": self.track_id,
            "geo": {"lat": self.geo.lat_deg, "lng": self.geo.lng_deg} if self.geo else None,
            "n_views": self.n_views,
            "residual_m": self.residual_m,
            "method": self.method,
            "members": [list(m) for m in self.members],
            **({"error": self.error} if self.error else {}),
        }


def neighbor_pairs(dataset: SceneDataset) -> list[tuple[str, str]]:
    """Unordered, deduplicated (image, neighbor) pairs present in the dataset."""
    pairs = set()
    for image_id, img in dataset.images.items():
        for nid in img.neighbor_ids:
            if nid in dataset.images and nid != image_id:
                pairs.add((min(image_id, nid), max(image_id, nid)))
    return sorted(pairs)


def prefilter_detections(
    dataset: SceneDataset, detections: dict[str, list[Detection]], cfg: MatchingConfig
) -> dict[str, list[Detection]]:
    """Confidence-filter + NMS every image's detections once, up front."""
    out = {}
    for image_id, dets in detections.items():
        if image_id not in dataset.images:
            continue
        w = dataset.images[image_id].pano.width_px
        out[image_id] = nms(filter_candidates(dets, cfg), cfg.nms_iou, w)
    return out


def run_matching(
    dataset: SceneDataset,
    detections: dict[str, list[Detection]],
    cfg: MatchingConfig | None = None,
    prefiltered: bool = False,
) -> dict[tuple[str, str], MatchingResult]:
    """Cross-view matching over every neighbor image pair with detections."""
    cfg = cfg or MatchingConfig()
    dets = detections if prefiltered else prefilter_detections(dataset, detections, cfg)
    results = {}
    for a, b in neighbor_pairs(dataset):
        da, db = dets.get(a, []), dets.get(b, [])
        if not da and not db:
            continue
        ia, ib = dataset.images[a], dataset.images[b]
        results[(a, b)] = cross_view_match(
            da, db, ia.camera, ib.camera, ia.pano, ib.pano, cfg
        )
    return results


Node = tuple[str, int]  # (image_id, local_id)


Edge = tuple[Node, Node, float]


def _components(nodes: set[Node], edges: list[Edge]) -> list[set[Node]]:
    adj: dict[Node, set[Node]] = {n: set() for n in nodes}
    for u, v, _ in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen: set[Node] = set()
    comps = []
    for n in sorted(nodes):
        if n in seen:
            continue
        stack, comp = [n], set()
        while stack:
            cur = stack.pop()
            if cur in comp:
                continue
            comp.add(cur)
            stack.extend(adj[cur] - comp)
        seen |= comp
        comps.append(comp)
    return comps


def _split_conflicts(
    nodes: set[Node], edges: list[Edge]
) -> list[tuple[set[Node], list[Edge]]]:
    """Split components that contain two detections from one image.

    The physically impossible merge is dissolved by removing the weakest
    (highest-cost) edge until every component is conflict-free. Returns each
    component together with its surviving edges.
    """

    def has_conflict(comp: set[Node]) -> bool:
        images = [img for img, _ in comp]
        return len(images) != len(set(images))

    active = sorted(edges, key=lambda e: (e[2], e[0], e[1]))
    while True:
        comps = _components(nodes, active)
        bad = [c for c in comps if has_conflict(c)]
        if not bad:
            return [
                (comp, [e for e in active if e[0] in comp]) for comp in comps
            ]
        # Remove the highest-cost edge inside a conflicted component.
        worst = None
        for u, v, c in active:
            for comp in bad:
                if u in comp:
                    if worst is None or c > worst[2]:
                        worst = (u, v, c)
                    break
        active.remove(worst)


# A pure multi-view track of one object triangulates with sub-meter to
# few-meter residuals at street noise levels; residuals far beyond that mean
# the cluster mixes two physical objects and must be split.
MAX_TRACK_RESIDUAL_M = 5.0


def localize_pipeline(
    dataset: SceneDataset,
    detections: dict[str, list[Detection]],
    cfg: MatchingConfig | None = None,
    max_residual_m: float = MAX_TRACK_RESIDUAL_M,
) -> list[TrackEstimate]:
    """Match across neighbor pairs, cluster matches into tracks, triangulate.

    Clusters holding two detections from one image, or whose triangulation
    residual exceeds max_residual_m, are split at their weakest (highest
    cost) edge. Observations are weighted by detection score over the squared
    flat-terrain distance estimate: a bearing error displaces a distant
    object proportionally to its range, so far sightings carry less weight.
    Tracks seen from a single view (or with degenerate bearings) fall back to
    flat-terrain single-view estimates. Per-track failures are recorded on
    the estimate; the pipeline never aborts on one object.
    """
    cfg = cfg or MatchingConfig()
    dets = prefilter_detections(dataset, detections, cfg)
    results = run_matching(dataset, dets, cfg, prefiltered=True)

    det_by_node: dict[Node, Detection] = {}
    for image_id, ds_ in dets.items():
        for d in ds_:
            det_by_node[(image_id, d.local_id)] = d

    nodes: set[Node] = set(det_by_node)
    edges: list[Edge] = []
    for (a, b), res in results.items():
        for p in res.pairs:
            edges.append(((a, p.det_x_local_id), (b, p.det_y_local_id), p.cost))

    def obs_for(node: Node) -> Observation:
        image_id, _ = node
        img = dataset.images[image_id]
        det = det_by_node[node]
        fx, fy = det.box.footpoint()
        try:
            z = max(1.0, ground_distance_from_pixel_row(img.camera, fy, img.pano))
        except AboveHorizon:
            z = math.inf
        weight = det.score / (z * z) if math.isfinite(z) else 0.0
        return Observation(img.camera, PixelPoint(fx, fy), img.pano, weight=weight)

    finished: list[tuple[list[Node], TriangulationResult | None]] = []
    queue = _split_conflicts(nodes, edges)
    while queue:
        comp, comp_edges = queue.pop(0)
        members = sorted(comp)
        if len(comp) >= 2:
            obs = [obs_for(n) for n in members]
            try:
                tri = triangulate(obs)
            except DegenerateBearings:
                # degenerate geometry: keep the track together and let it
                # fall back to its best single view
                finished.append((members, None))
                continue
            if tri.residual_m <= max_residual_m or not comp_edges:
                finished.append((members, tri))
                continue
            # Geometrically inconsistent cluster (two objects merged): drop
            # the weakest edge and re-examine the pieces.
            worst = max(comp_edges, key=lambda e: (e[2], e[0], e[1]))
            remaining = [e for e in comp_edges if e != worst]
            queue.extend(_split_conflicts(comp, remaining))
            continue
        finished.append((members, None))

    finished.sort(key=lambda item: item[0][0])
    estimates: list[TrackEstimate] = []
    for ti, (members, tri) in enumerate(finished):
        track_id = f"track_{ti:04d}"
        if tri is not None:
            estimates.append(
                TrackEstimate(track_id, tri.geo, len(members), tri.residual_m,
                              "triangulated", members)
            )
            continue
        obs = [obs_for(n) for n in members]
        best = max(range(len(obs)), key=lambda i: (obs[i].weight, -i))
        node = members[best]
        img = dataset.images[node[0]]
        try:
            geo = localize_single(det_by_node[node], img.camera, img.pano)
            est = TrackEstimate(track_id, geo, len(members), 0.0, "single_view",
                                members)
        except (AboveHorizon, DegenerateTarget) as exc:
            est = TrackEstimate(track_id, None, len(members), math.inf,
                                "single_view", members, error=str(exc))
        estimates.append(est)
    return estimates


def single_view_estimates(
    dataset: SceneDataset,
    detections: dict[str, list[Detection]],
    cfg: MatchingConfig | None = None,
) -> list[GeoCoordinate]:
    """Baseline: every (filtered) detection geo-coded independently."""
    cfg = cfg or MatchingConfig()
    out = []
    for image_id, dets in sorted(prefilter_detections(dataset, detections, cfg).items()):
        img = dataset.images[image_id]
        for d in sorted(dets, key=lambda d: d.local_id):
            try:
                out.append(localize_single(d, img.camera, img.pano))
            except (AboveHorizon, DegenerateTarget):
                continue
    return out
