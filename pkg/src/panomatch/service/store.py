"""File-backed document store for the annotation workflow.

Two collections (per-image annotation documents, identity documents) are kept
in memory and persisted through an append-only JSON-lines log. Every mutation
validates and applies under one lock, appends the *resulting* document state
to the log (flush + fsync), and bumps a per-box or per-document revision, so
replaying the log reproduces the store byte-identically and concurrent
writers resolve conflicts through optimistic revision checks.
"""
from __future__ import annotations

import io
import json
import os
import threading
import zipfile
from dataclasses import dataclass, field
from xml.etree import ElementTree as ET

from ..data import (
    BoundingBox,
    GroundTruthBox,
    Identity,
    ImageRecord,
    SceneDataset,
    save_dataset,
)
from ..geo import GeoCoordinate


class RevisionConflict(Exception):
    def __init__(self, expected, actual):
        super().__init__(f"revision conflict: expected {expected}, store has {actual}")
        self.expected = expected
        self.actual = actual


class NotFound(Exception):
    pass


class UnprocessableEntity(Exception):
    pass


@dataclass
class AnnotationBox:
    box_id: str
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: str = "object"
    author: str = "anonymous"
    revision: int = 1

    def to_jsonable(self) -> dict:
        return {
            "box_id": self.box_id,
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "label": self.label,
            "author": self.author,
            "revision": self.revision,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "AnnotationBox":
        return cls(**obj)


@dataclass
class IdentityDocument:
    instance_id: str
    lat: float
    lng: float
    links: dict[str, str] = field(default_factory=dict)  # image_id -> box_id
    status: str = "open"
    revision: int = 1

    def to_jsonable(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "geo": {"lat": self.lat, "lng": self.lng},
            "links": [
                {"image_id": k, "box_id": v} for k, v in sorted(self.links.items())
            ],
            "status": self.status,
            "revision": self.revision,
        }


class DocumentStore:
    """Append-only, revision-checked store for boxes and identities."""

    def __init__(self, log_path: str | None = None):
        self._lock = threading.RLock()
        self._boxes: dict[str, dict[str, AnnotationBox]] = {}  # image -> box_id -> box
        self._identities: dict[str, IdentityDocument] = {}
        self._counters: dict[str, int] = {}
        self._log_path = log_path
        self._log_fh = None
        if log_path:
            if os.path.exists(log_path):
                self._replay(log_path)
            os.makedirs(os.path.dirname(os.path.abspath(log_path)), exist_ok=True)
            self._log_fh = open(log_path, "a", encoding="utf-8")

    # -- persistence --------------------------------------------------------

    def _replay(self, log_path: str):
        with open(log_path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
        # A torn final line is the footprint of a crash mid-append; that
        # mutation was never acknowledged, so drop it and truncate the log.
        # Corruption anywhere else is real damage and must fail loudly.
        if lines and not _parses(lines[-1]):
            good = "".join(lines[:-1])
            with open(log_path, "w", encoding="utf-8") as fh:
                fh.write(good)
            lines = lines[:-1]
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{log_path}:{lineno}: corrupt store log ({exc.msg})"
                )
            self._apply(rec)

    def _apply(self, rec: dict):
        if rec["op"] == "upsert_box":
            box = AnnotationBox.from_jsonable(rec["box"])
            self._boxes.setdefault(rec["image_id"], {})[box.box_id] = box
            num = _box_number(box.box_id)
            if num is not None:
                self._counters[rec["image_id"]] = max(
                    self._counters.get(rec["image_id"], 0), num + 1
                )
        elif rec["op"] == "link_identity":
            doc = rec["doc"]
            self._identities[doc["instance_id"]] = IdentityDocument(
                instance_id=doc["instance_id"],
                lat=doc["geo"]["lat"],
                lng=doc["geo"]["lng"],
                links={l["image_id"]: l["box_id"] for l in doc["links"]},
                status=doc["status"],
                revision=doc["revision"],
            )

    def _append(self, record: dict):
        if self._log_fh is None:
            return
        self._log_fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._log_fh.flush()
        os.fsync(self._log_fh.fileno())

    def close(self):
        if self._log_fh is not None:
            self._log_fh.close()
            self._log_fh = None

    # -- boxes ---------------------------------------------------------------

    def upsert_box(
        self,
        image_id: str,
        payload: dict,
        expected_revision: int | None = None,
        box_id: str | None = None,
    ) -> AnnotationBox:
        """Create or update one box under optimistic revision control.

        Creation requires expected_revision in (None, 0); updates must carry
        the box's current revision or fail with RevisionConflict.
        """
        with self._lock:
            boxes = self._boxes.setdefault(image_id, {})
            if box_id is None:
                n = self._counters.get(image_id, 0)
                box_id = f"b{n:06d}"
                self._counters[image_id] = n + 1
            existing = boxes.get(box_id)
            if existing is None:
                if expected_revision not in (None, 0):
                    raise RevisionConflict(expected_revision, 0)
                revision = 1
            else:
                if expected_revision != existing.revision:
                    raise RevisionConflict(expected_revision, existing.revision)
                revision = existing.revision + 1
            box = AnnotationBox(
                box_id=box_id,
                x_min=float(payload["x_min"]),
                y_min=float(payload["y_min"]),
                x_max=float(payload["x_max"]),
                y_max=float(payload["y_max"]),
                label=str(payload.get("label", "object")),
                author=str(payload.get("author", "anonymous")),
                revision=revision,
            )
            boxes[box_id] = box
            self._append({"op": "upsert_box", "image_id": image_id,
                          "box": box.to_jsonable()})
            return box

    def image_boxes(self, image_id: str) -> list[AnnotationBox]:
        with self._lock:
            return sorted(self._boxes.get(image_id, {}).values(),
                          key=lambda b: b.box_id)

    def get_box(self, image_id: str, box_id: str) -> AnnotationBox:
        with self._lock:
            box = self._boxes.get(image_id, {}).get(box_id)
            if box is None:
                raise NotFound(f"box {box_id!r} in image {image_id!r}")
            return box

    # -- identities ----------------------------------------------------------

    def link_identity(
        self,
        instance_id: str,
        geo: tuple[float, float],
        links: list[tuple[str, str]],
        status: str = "open",
    ) -> IdentityDocument:
        """Create or extend an identity; a new link in an image replaces the old.

        Raises:
            UnprocessableEntity: two payload links reference one image.
            NotFound: a link references a box that does not exist.
        """
        with self._lock:
            images = [img for img, _ in links]
            if len(images) != len(set(images)):
                raise UnprocessableEntity("payload links two boxes in one image")
            for img, box_id in links:
                if box_id not in self._boxes.get(img, {}):
                    raise NotFound(f"box {box_id!r} in image {img!r}")
            doc = self._identities.get(instance_id)
            if doc is None:
                doc = IdentityDocument(instance_id=instance_id, lat=geo[0], lng=geo[1],
                                       status=status, revision=0)
            doc.lat, doc.lng = float(geo[0]), float(geo[1])
            doc.status = status
            for img, box_id in links:
                doc.links[img] = box_id
            doc.revision += 1
            self._identities[instance_id] = doc
            self._append({"op": "link_identity", "doc": doc.to_jsonable()})
            return doc

    def get_identity(self, instance_id: str) -> IdentityDocument:
        with self._lock:
            doc = self._identities.get(instance_id)
            if doc is None:
                raise NotFound(f"identity {instance_id!r}")
            return doc

    def identities(self) -> list[IdentityDocument]:
        with self._lock:
            return [self._identities[k] for k in sorted(self._identities)]

    def next_identity_id(self) -> str:
        with self._lock:
            n = 0
            while f"id_{n:06d}" in self._identities:
                n += 1
            return f"id_{n:06d}"

    # -- bulk ------------------------------------------------------------------

    def seed_from_dataset(self, dataset: SceneDataset) -> None:
        """Import ground truth boxes and identities as store documents."""
        box_ids: dict[tuple[str, int], str] = {}
        for image_id in sorted(dataset.images):
            for idx, gt in enumerate(dataset.images[image_id].ground_truth):
                box = self.upsert_box(
                    image_id,
                    {
                        "x_min": gt.box.x_min,
                        "y_min": gt.box.y_min,
                        "x_max": gt.box.x_max,
                        "y_max": gt.box.y_max,
                        "label": gt.class_label,
                        "author": "import",
                    },
                )
                box_ids[(image_id, idx)] = box.box_id
        for instance_id in sorted(dataset.identities):
            ident = dataset.identities[instance_id]
            links = [
                (img, box_ids[(img, idx)])
                for img, idx in ident.appearances
                if (img, idx) in box_ids
            ]
            self.link_identity(
                instance_id,
                (ident.geo.lat_deg, ident.geo.lng_deg),
                links,
                status="complete",
            )

    def state_jsonable(self) -> dict:
        """Canonical snapshot used by replay/round-trip tests."""
        with self._lock:
            return {
                "images": {
                    image_id: [b.to_jsonable() for b in self.image_boxes(image_id)]
                    for image_id in sorted(self._boxes)
                    if self._boxes[image_id]
                },
                "identities": [d.to_jsonable() for d in self.identities()],
            }


def _box_number(box_id: str) -> int | None:
    if box_id.startswith("b") and box_id[1:].isdigit():
        return int(box_id[1:])
    return None


def _parses(line: str) -> bool:
    line = line.strip()
    if not line:
        return True
    try:
        json.loads(line)
        return True
    except json.JSONDecodeError:
        return False


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)  # fixed timestamp keeps archives byte-stable


def store_to_dataset(store: DocumentStore, base: SceneDataset) -> SceneDataset:
    """Materialize store documents as a SceneDataset (camera metadata from base)."""
    ds = SceneDataset(split=base.split)
    link_lookup: dict[tuple[str, str], IdentityDocument] = {}
    for doc in store.identities():
        for img, box_id in doc.links.items():
            link_lookup[(img, box_id)] = doc
    appearance_acc: dict[str, list[tuple[str, int]]] = {}
    for image_id in sorted(base.images):
        rec = base.images[image_id]
        gts = []
        for i, box in enumerate(store.image_boxes(image_id)):
            ident = link_lookup.get((image_id, box.box_id))
            gts.append(
                GroundTruthBox(
                    box=BoundingBox(box.x_min, box.y_min, box.x_max, box.y_max),
                    instance_id=ident.instance_id if ident else None,
                    geo=GeoCoordinate(ident.lat, ident.lng) if ident else None,
                    class_label=box.label,
                )
            )
            if ident is not None:
                appearance_acc.setdefault(ident.instance_id, []).append((image_id, i))
        ds.images[image_id] = ImageRecord(
            image_id=image_id,
            pano=rec.pano,
            camera=rec.camera,
            neighbor_ids=list(rec.neighbor_ids),
            ground_truth=gts,
        )
    for doc in store.identities():
        apps = appearance_acc.get(doc.instance_id, [])
        if not apps:
            continue
        ds.identities[doc.instance_id] = Identity(
            instance_id=doc.instance_id,
            geo=GeoCoordinate(doc.lat, doc.lng),
            appearances=apps,
        )
    return ds


def _zip_bytes(entries: list[tuple[str, bytes]]) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name, payload in sorted(entries):
            info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
            zf.writestr(info, payload)
    return buf.getvalue()


def export_json_archive(store: DocumentStore, base: SceneDataset) -> bytes:
    """Zip of the canonical dataset layout; loads back via load_pasadena."""
    import tempfile

    ds = store_to_dataset(store, base)
    entries = []
    with tempfile.TemporaryDirectory() as tmp:
        save_dataset(ds, tmp)
        for root, _dirs, files in os.walk(tmp):
            for fname in files:
                full = os.path.join(root, fname)
                rel = os.path.relpath(full, tmp).replace(os.sep, "/")
                with open(full, "rb") as fh:
                    entries.append((rel, fh.read()))
    return _zip_bytes(entries)


def export_voc_archive(store: DocumentStore, base: SceneDataset) -> bytes:
    """Zip of one VOC-style XML per annotated image; instance ids ride on
    the object element as an attribute."""
    link_lookup: dict[tuple[str, str], str] = {}
    for doc in store.identities():
        for img, box_id in doc.links.items():
            link_lookup[(img, box_id)] = doc.instance_id
    entries = []
    for image_id in sorted(base.images):
        boxes = store.image_boxes(image_id)
        if not boxes:
            continue
        rec = base.images[image_id]
        root = ET.Element("annotation")
        ET.SubElement(root, "filename").text = f"{image_id}.jpg"
        size = ET.SubElement(root, "size")
        ET.SubElement(size, "width").text = str(rec.pano.width_px)
        ET.SubElement(size, "height").text = str(rec.pano.height_px)
        ET.SubElement(size, "depth").text = "3"
        for box in boxes:
            attrs = {}
            instance = link_lookup.get((image_id, box.box_id))
            if instance is not None:
                attrs["instance_id"] = instance
            obj = ET.SubElement(root, "object", attrs)
            ET.SubElement(obj, "name").text = box.label
            bnd = ET.SubElement(obj, "bndbox")
            ET.SubElement(bnd, "xmin").text = repr(box.x_min)
            ET.SubElement(bnd, "ymin").text = repr(box.y_min)
            ET.SubElement(bnd, "xmax").text = repr(box.x_max)
            ET.SubElement(bnd, "ymax").text = repr(box.y_max)
        ET.indent(root)
        payload = ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"
        entries.append((f"{image_id}.xml", payload))
    return _zip_bytes(entries)
