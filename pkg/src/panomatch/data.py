"""Annotation/detection types and dataset ingestion.

One canonical on-disk layout (documented in the README) serves both real
ingested data and simulator output:

    root/
      annotations/{image_id}.json   per-image camera metadata + GT boxes
      identities.json               instance id -> geo + appearances
      splits.json                   split name -> [image ids]
      images/{image_id}.jpg         optional; pixels are never decoded here

Mapillary GeoJSON FeatureCollections are converted into the same in-memory
model at ingest so downstream code sees a single representation.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import FeatureDimMismatch, IntegrityError, MissingProperty, ParseError
from .geo import CameraPose, GeoCoordinate, PanoramaGeometry


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box. Wrap-spanning boxes are stored as two
    fragments sharing a local id; validity (x_min < x_max, y_min < y_max)
    is checked by validate(), not the constructor."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    def footpoint(self) -> tuple[float, float]:
        """Bottom-center pixel, assumed to touch the ground plane."""
        return (0.5 * (self.x_min + self.x_max), self.y_max)

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(eq=False)
class Detection:
    box: BoundingBox
    class_label: str
    score: float
    local_id: int
    feature: np.ndarray | None = None

    def __post_init__(self):
        if self.feature is not None:
            self.feature = np.asarray(self.feature, dtype=np.float64)


@dataclass(frozen=True)
class GroundTruthBox:
    box: BoundingBox
    instance_id: str | None = None
    geo: GeoCoordinate | None = None
    distance_v: float | None = None
    heading_a: float | None = None
    class_label: str = "object"


@dataclass
class ImageRecord:
    image_id: str
    pano: PanoramaGeometry
    camera: CameraPose
    neighbor_ids: list[str] = field(default_factory=list)
    ground_truth: list[GroundTruthBox] = field(default_factory=list)


@dataclass
class Identity:
    instance_id: str
    geo: GeoCoordinate
    appearances: list[tuple[str, int]] = field(default_factory=list)  # (image_id, box index)
    altitude_m: float | None = None


@dataclass
class SceneDataset:
    images: dict[str, ImageRecord] = field(default_factory=dict)
    identities: dict[str, Identity] = field(default_factory=dict)
    split: str = "all"


@dataclass(frozen=True)
class Violation:
    where: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, where: str, message: str):
        self.violations.append(Violation(where, message))


# ---------------------------------------------------------------------------
# JSON helpers
# ---------------------------------------------------------------------------

def _read_json(path: str):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"{path}: file not found")
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}")


def _geo_from_obj(obj, where: str) -> GeoCoordinate:
    try:
        return GeoCoordinate(float(obj["lat"]), float(obj["lng"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad geo coordinate ({exc})")


def _box_from_obj(obj, where: str) -> tuple[BoundingBox, dict]:
    try:
        box = BoundingBox(
            float(obj["x_min"]), float(obj["y_min"]), float(obj["x_max"]), float(obj["y_max"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: bad box ({exc})")
    return box, obj


# ---------------------------------------------------------------------------
# Canonical layout: load / save
# ---------------------------------------------------------------------------

def load_pasadena(path: str, split: str | None = None) -> SceneDataset:
    """Load a dataset root in the canonical per-image JSON layout.

    Raises:
        ParseError: missing/malformed files.
        IntegrityError: identity references an image or box that does not exist.
    """
    ann_dir = os.path.join(path, "annotations")
    if not os.path.isdir(ann_dir):
        raise ParseError(f"{path}: no annotations/ directory")
    ann_files = sorted(f for f in os.listdir(ann_dir) if f.endswith(".json"))
    if not ann_files:
        raise ParseError(f"{ann_dir}: no annotation files")

    splits = {}
    splits_path = os.path.join(path, "splits.json")
    if os.path.exists(splits_path):
        splits = _read_json(splits_path)
    wanted: set[str] | None = None
    if split is not None:
        if split not in splits:
            raise ParseError(f"{splits_path}: unknown split {split!r}")
        wanted = set(splits[split])

    ds = SceneDataset(split=split or "all")
    for fname in ann_files:
        fpath = os.path.join(ann_dir, fname)
        obj = _read_json(fpath)
        image_id = obj.get("image_id") or os.path.splitext(fname)[0]
        if wanted is not None and image_id not in wanted:
            continue
        if image_id in ds.images:
            raise ParseError(f"{fpath}: duplicate image_id {image_id!r}")
        try:
            cam = obj["camera"]
            camera = CameraPose(
                GeoCoordinate(float(cam["lat"]), float(cam["lng"])),
                float(cam["yaw_deg"]),
                float(cam["height_m"]),
            )
            pano = PanoramaGeometry(int(obj["width"]), int(obj["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{fpath}: bad camera/geometry ({exc})")
        gts = []
        for i, b in enumerate(obj.get("boxes", [])):
            box, raw = _box_from_obj(b, f"{fpath} box {i}")
            geo = _geo_from_obj(raw["geo"], f"{fpath} box {i}") if raw.get("geo") else None
            instance_id = raw.get("instance_id")
            if instance_id is not None and geo is None:
                raise ParseError(f"{fpath} box {i}: identified box without geo coordinate")
            gts.append(
                GroundTruthBox(
                    box=box,
                    instance_id=instance_id,
                    geo=geo,
                    distance_v=raw.get("distance_m"),
                    heading_a=raw.get("heading_deg"),
                    class_label=raw.get("label", "object"),
                )
            )
        ds.images[image_id] = ImageRecord(
            image_id=image_id,
            pano=pano,
            camera=camera,
            neighbor_ids=list(obj.get("neighbors", [])),
            ground_truth=gts,
        )

    id_path = os.path.join(path, "identities.json")
    if os.path.exists(id_path):
        for instance_id, rec in sorted(_read_json(id_path).items()):
            appearances = []
            for app in rec.get("appearances", []):
                img, idx = app["image_id"], int(app["box_index"])
                if wanted is not None and img not in wanted:
                    continue
                if img not in ds.images:
                    raise IntegrityError(
                        f"identity {instance_id!r} references missing image {img!r}"
                    )
                if not 0 <= idx < len(ds.images[img].ground_truth):
                    raise IntegrityError(
                        f"identity {instance_id!r} references missing box {idx} in {img!r}"
                    )
                appearances.append((img, idx))
            if wanted is not None and not appearances:
                continue
            ds.identities[instance_id] = Identity(
                instance_id=instance_id,
                geo=_geo_from_obj(rec["geo"], f"{id_path} {instance_id}"),
                appearances=appearances,
                altitude_m=rec.get("altitude_m"),
            )
    return ds


def save_dataset(ds: SceneDataset, path: str) -> None:
    """Write a dataset in the canonical layout (inverse of load_pasadena)."""
    ann_dir = os.path.join(path, "annotations")
    os.makedirs(ann_dir, exist_ok=True)
    for image_id in sorted(ds.images):
        img = ds.images[image_id]
        boxes = []
        for gt in img.ground_truth:
            b: dict = {
                "x_min": gt.box.x_min,
                "y_min": gt.box.y_min,
                "x_max": gt.box.x_max,
                "y_max": gt.box.y_max,
            }
            if gt.class_label != "object":
                b["label"] = gt.class_label
            if gt.instance_id is not None:
                b["instance_id"] = gt.instance_id
            if gt.geo is not None:
                b["geo"] = {"lat": gt.geo.lat_deg, "lng": gt.geo.lng_deg}
            if gt.distance_v is not None:
                b["distance_m"] = gt.distance_v
            if gt.heading_a is not None:
                b["heading_deg"] = gt.heading_a
            boxes.append(b)
        obj = {
            "image_id": image_id,
            "width": img.pano.width_px,
            "height": img.pano.height_px,
            "camera": {
                "lat": img.camera.location.lat_deg,
                "lng": img.camera.location.lng_deg,
                "yaw_deg": img.camera.yaw_deg,
                "height_m": img.camera.height_m,
            },
            "neighbors": list(img.neighbor_ids),
            "boxes": boxes,
        }
        with open(os.path.join(ann_dir, f"{image_id}.json"), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    identities = {}
    for instance_id in sorted(ds.identities):
        ident = ds.identities[instance_id]
        rec: dict = {
            "geo": {"lat": ident.geo.lat_deg, "lng": ident.geo.lng_deg},
            "appearances": [
                {"image_id": img, "box_index": idx} for img, idx in ident.appearances
            ],
        }
        if ident.altitude_m is not None:
            rec["altitude_m"] = ident.altitude_m
        identities[instance_id] = rec
    with open(os.path.join(path, "identities.json"), "w", encoding="utf-8") as fh:
        json.dump(identities, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(path, "splits.json"), "w", encoding="utf-8") as fh:
        json.dump({ds.split: sorted(ds.images)}, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Mapillary GeoJSON
# ---------------------------------------------------------------------------

_DEFAULT_MAPILLARY_SIZE = (2048, 1024)
_DEFAULT_CAMERA_HEIGHT_M = 1.5


def _polygon_to_box(polygon, where: str) -> BoundingBox:
    try:
        xs = [float(p[0]) for p in polygon]
        ys = [float(p[1]) for p in polygon]
    except (TypeError, ValueError, IndexError) as exc:
        raise ParseError(f"{where}: bad polygon ({exc})")
    if not xs:
        raise ParseError(f"{where}: empty polygon")
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


def load_mapillary_geojson(path: str) -> SceneDataset:
    """Convert a Mapillary-style GeoJSON FeatureCollection to a SceneDataset.

    Each feature is one object identity. Required per-feature properties
    (aligned lists over the images the object appears in): image_keys,
    distances_m, image_geos, altitude_m, polygons; the feature geometry
    Point is the object's geo-coordinate. Optional: image_sizes,
    image_yaws_deg, camera_heights_m.

    Raises:
        ParseError / MissingProperty: malformed collection or feature.
    """
    obj = _read_json(path) if isinstance(path, str) else path
    if not isinstance(obj, dict) or obj.get("type") != "FeatureCollection" \
            or not isinstance(obj.get("features"), list):
        raise ParseError(f"{path}: not a GeoJSON FeatureCollection")

    ds = SceneDataset(split="all")
    covis: dict[str, set[str]] = {}
    for fi, feature in enumerate(obj["features"]):
        if not isinstance(feature, dict):
            raise ParseError(f"feature {fi}: not an object")
        props = feature.get("properties") or {}
        geom = feature.get("geometry") or {}
        if not isinstance(geom, dict) or geom.get("type") != "Point":
            raise MissingProperty("geometry.coordinates", fi)
        coords = geom.get("coordinates")
        if not isinstance(coords, (list, tuple)) or len(coords) < 2:
            raise MissingProperty("geometry.coordinates", fi)
        lng, lat = coords[:2]
        for prop in ("image_keys", "distances_m", "image_geos", "altitude_m", "polygons"):
            if prop not in props:
                raise MissingProperty(prop, fi)
        keys = props["image_keys"]
        n = len(keys)
        aligned = ("distances_m", "image_geos", "polygons")
        optional = ("image_sizes", "image_yaws_deg", "camera_heights_m")
        for prop in aligned + optional:
            present = prop in aligned or props.get(prop)
            if present and len(props[prop]) != n:
                raise ParseError(
                    f"feature {fi}: property {prop!r} has {len(props[prop])} entries "
                    f"for {n} image keys"
                )
        instance_id = str(feature.get("id") or props.get("instance_id") or f"feature_{fi:06d}")
        if instance_id in ds.identities:
            raise ParseError(f"feature {fi}: duplicate identity {instance_id!r}")
        geo = GeoCoordinate(float(lat), float(lng))

        sizes = props.get("image_sizes") or [_DEFAULT_MAPILLARY_SIZE] * n
        yaws = props.get("image_yaws_deg") or [0.0] * n
        heights = props.get("camera_heights_m") or [_DEFAULT_CAMERA_HEIGHT_M] * n
        appearances = []
        for k, key in enumerate(keys):
            if key not in ds.images:
                img_lng, img_lat = props["image_geos"][k][:2]
                ds.images[key] = ImageRecord(
                    image_id=key,
                    pano=PanoramaGeometry(int(sizes[k][0]), int(sizes[k][1])),
                    camera=CameraPose(
                        GeoCoordinate(float(img_lat), float(img_lng)),
                        float(yaws[k]),
                        float(heights[k]),
                    ),
                )
            box = _polygon_to_box(props["polygons"][k], f"feature {fi} image {key}")
            ds.images[key].ground_truth.append(
                GroundTruthBox(
                    box=box,
                    instance_id=instance_id,
                    geo=geo,
                    distance_v=float(props["distances_m"][k]),
                )
            )
            appearances.append((key, len(ds.images[key].ground_truth) - 1))
            covis.setdefault(key, set()).update(k2 for k2 in keys if k2 != key)
        ds.identities[instance_id] = Identity(
            instance_id=instance_id,
            geo=geo,
            appearances=appearances,
            altitude_m=float(props["altitude_m"]),
        )
    for key, neigh in covis.items():
        ds.images[key].neighbor_ids = sorted(neigh)
    return ds


# ---------------------------------------------------------------------------
# Detections
# ---------------------------------------------------------------------------

def load_detections(path: str, feature_dim: int | None = None) -> dict[str, list[Detection]]:
    """Load per-image detection lists from a detections JSON file.

    Local ids are assigned sequentially (file order) when absent. Scores must
    lie in [0, 1]; feature vectors, when present, must share one length.
    """
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: expected an object mapping image_id -> detections")
    out: dict[str, list[Detection]] = {}
    dim = feature_dim
    for image_id, entries in obj.items():
        dets = []
        seen_ids: set[int] = set()
        for i, d in enumerate(entries):
            where = f"{path} [{image_id}][{i}]"
            try:
                box = BoundingBox(*[float(v) for v in d["box"]])
                score = float(d["score"])
                label = str(d.get("label", "object"))
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{where}: {exc}")
            if not 0.0 <= score <= 1.0:
                raise ParseError(f"{where}: score {score} outside [0, 1]")
            local_id = int(d["local_id"]) if "local_id" in d else i
            if local_id in seen_ids:
                raise ParseError(f"{where}: duplicate local_id {local_id}")
            seen_ids.add(local_id)
            feature = None
            if d.get("feature") is not None:
                feature = np.asarray(d["feature"], dtype=np.float64)
                if dim is None:
                    dim = feature.shape[0]
                elif feature.shape[0] != dim:
                    raise FeatureDimMismatch(
                        f"{where}: feature length {feature.shape[0]} != expected {dim}"
                    )
            dets.append(Detection(box=box, class_label=label, score=score,
                                  local_id=local_id, feature=feature))
        out[image_id] = dets
    return out


def save_detections(dets: dict[str, list[Detection]], path: str) -> None:
    obj = {}
    for image_id in sorted(dets):
        obj[image_id] = [
            {
                "box": d.box.as_list(),
                "label": d.class_label,
                "score": d.score,
                "local_id": d.local_id,
                **({"feature": [float(v) for v in d.feature]} if d.feature is not None else {}),
            }
            for d in dets[image_id]
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(ds: SceneDataset) -> ValidationReport:
    """Check dataset invariants; violations are data, not exceptions."""
    report = ValidationReport()
    for image_id, img in ds.images.items():
        if img.image_id != image_id:
            report.add(image_id, f"image record id {img.image_id!r} mismatches key")
        for nid in img.neighbor_ids:
            if nid not in ds.images:
                report.add(image_id, f"neighbor {nid!r} not in dataset")
        for i, gt in enumerate(img.ground_truth):
            where = f"{image_id}.boxes[{i}]"
            b = gt.box
            if not (b.x_min < b.x_max and b.y_min < b.y_max):
                report.add(where, f"degenerate box {b.as_list()}")
            if b.x_min < 0 or b.y_min < 0 or b.x_max > img.pano.width_px or \
                    b.y_max > img.pano.height_px:
                report.add(where, "box outside image bounds")
            if gt.instance_id is not None:
                if gt.geo is None:
                    report.add(where, "identified box missing geo coordinate")
                if gt.instance_id not in ds.identities:
                    report.add(where, f"unknown identity {gt.instance_id!r}")
            if gt.distance_v is not None and gt.distance_v < 0:
                report.add(where, f"negative distance {gt.distance_v}")
    for instance_id, ident in ds.identities.items():
        where = f"identity {instance_id}"
        if not ident.appearances:
            report.add(where, "no appearances")
        seen_images = set()
        for img, idx in ident.appearances:
            if img not in ds.images:
                report.add(where, f"appearance in missing image {img!r}")
                continue
            if not 0 <= idx < len(ds.images[img].ground_truth):
                report.add(where, f"appearance box index {idx} out of range in {img!r}")
                continue
            gt = ds.images[img].ground_truth[idx]
            if gt.instance_id != instance_id:
                report.add(where, f"box {img!r}[{idx}] labeled {gt.instance_id!r}")
            if img in seen_images:
                report.add(where, f"multiple appearances in image {img!r}")
            seen_images.add(img)
    return report


def dataset_to_jsonable(ds: SceneDataset) -> dict:
    """Canonical JSON-able form, used for round-trip and equality checks."""
    return {
        "split": ds.split,
        "images": {
            image_id: {
                "width": img.pano.width_px,
                "height": img.pano.height_px,
                "camera": [
                    img.camera.location.lat_deg,
                    img.camera.location.lng_deg,
                    img.camera.yaw_deg,
                    img.camera.height_m,
                ],
                "neighbors": list(img.neighbor_ids),
                "boxes": [
                    [
                        gt.box.as_list(),
                        gt.instance_id,
                        [gt.geo.lat_deg, gt.geo.lng_deg] if gt.geo else None,
                        gt.distance_v,
                        gt.heading_a,
                        gt.class_label,
                    ]
                    for gt in img.ground_truth
                ],
            }
            for image_id, img in sorted(ds.images.items())
        },
        "identities": {
            iid: {
                "geo": [ident.geo.lat_deg, ident.geo.lng_deg],
                "appearances": [list(a) for a in ident.appearances],
                "altitude_m": ident.altitude_m,
            }
            for iid, ident in sorted(ds.identities.items())
        },
    }


def count_boxes(ds: SceneDataset) -> int:
    return sum(len(img.ground_truth) for img in ds.images.values())

