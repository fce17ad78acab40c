"""HTTP backend for the multi-view annotation workflow.

Read endpoints serve scene/camera metadata and computed guidance markers;
write endpoints mutate the document store under optimistic revision control.
All errors use one envelope: {"code", "message", "detail"}.
"""
from __future__ import annotations

import math
import os

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response
from pydantic import BaseModel

from ..data import Detection, SceneDataset
from ..errors import DegenerateTarget
from ..geo import GeoCoordinate, haversine_distance, pixel_from_geo
from .store import (
    DocumentStore,
    NotFound,
    RevisionConflict,
    UnprocessableEntity,
    export_json_archive,
    export_voc_archive,
)

DEFAULT_MARKER_RADIUS_PX = 150.0  # at 2048 px width, scaled per image


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, detail=None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.detail = detail


class BoxPayload(BaseModel):
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    label: str = "object"
    author: str = "anonymous"
    expected_revision: int | None = None


class SelectPayload(BaseModel):
    lat: float
    lng: float


class IdentityLink(BaseModel):
    image_id: str
    box_id: str


class IdentityPayload(BaseModel):
    instance_id: str | None = None
    geo: dict
    links: list[IdentityLink]
    status: str = "open"


def create_app(
    dataset: SceneDataset,
    store: DocumentStore,
    images_dir: str | None = None,
    detections: dict[str, list[Detection]] | None = None,
    marker_radius_px: float = DEFAULT_MARKER_RADIUS_PX,
    cors_origins: list[str] | None = None,
) -> FastAPI:
    app = FastAPI(title="panomatch annotation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=cors_origins or ["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    detections = detections or {}

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(
            status_code=exc.status,
            content={"code": exc.code, "message": exc.message, "detail": exc.detail},
        )

    from fastapi.exceptions import RequestValidationError
    from starlette.exceptions import HTTPException as StarletteHTTPException

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        # keep the one error envelope even for malformed request bodies
        return JSONResponse(
            status_code=422,
            content={"code": "ValidationError", "message": "invalid request body",
                     "detail": exc.errors()},
        )

    @app.exception_handler(StarletteHTTPException)
    async def _http_error(_req: Request, exc: StarletteHTTPException):
        # router-level errors (unknown path, bad method) use the envelope too
        return JSONResponse(
            status_code=exc.status_code,
            content={"code": f"Http{exc.status_code}", "message": str(exc.detail),
                     "detail": None},
        )

    def _image_or_404(image_id: str):
        img = dataset.images.get(image_id)
        if img is None:
            raise ApiError(404, "ImageNotFound", f"unknown image {image_id!r}")
        return img

    @app.get("/health")
    def health():
        return {"status": "ok", "images": len(dataset.images)}

    @app.get("/scenes")
    def scenes():
        return {
            "images": [
                {
                    "image_id": image_id,
                    "lat": img.camera.location.lat_deg,
                    "lng": img.camera.location.lng_deg,
                    "yaw_deg": img.camera.yaw_deg,
                    "width": img.pano.width_px,
                    "height": img.pano.height_px,
                    "n_boxes": len(store.image_boxes(image_id)),
                }
                for image_id, img in sorted(dataset.images.items())
            ],
            "identities": [d.instance_id for d in store.identities()],
        }

    @app.get("/images/{image_id}")
    def image_bytes(image_id: str):
        _image_or_404(image_id)
        if images_dir:
            for ext in (".jpg", ".jpeg", ".png"):
                path = os.path.join(images_dir, image_id + ext)
                if os.path.exists(path):
                    return FileResponse(path)
        raise ApiError(404, "ImageBytesUnavailable",
                       f"no image file on disk for {image_id!r}")

    @app.get("/images/{image_id}/meta")
    def image_meta(image_id: str):
        img = _image_or_404(image_id)
        return {
            "image_id": image_id,
            "width": img.pano.width_px,
            "height": img.pano.height_px,
            "camera": {
                "lat": img.camera.location.lat_deg,
                "lng": img.camera.location.lng_deg,
                "yaw_deg": img.camera.yaw_deg,
                "height_m": img.camera.height_m,
            },
            "neighbors": img.neighbor_ids,
            "boxes": [b.to_jsonable() for b in store.image_boxes(image_id)],
        }

    @app.post("/session/select")
    def select_target(payload: SelectPayload):
        if not dataset.images:
            raise ApiError(404, "DatasetEmpty", "no panoramas loaded")
        try:
            target = GeoCoordinate(payload.lat, payload.lng)
        except ValueError as exc:
            raise ApiError(422, "InvalidCoordinate", str(exc))
        ranked = sorted(
            dataset.images.values(),
            key=lambda img: (haversine_distance(img.camera.location, target),
                             img.image_id),
        )[:4]
        panoramas = []
        for img in ranked:
            try:
                marker = pixel_from_geo(img.camera, target, img.pano)
                marker_obj = {"x": marker.x, "y": marker.y}
            except DegenerateTarget:
                marker_obj = None
            radius = marker_radius_px * img.pano.width_px / 2048.0
            proposals = []
            if marker_obj is not None:
                for det in detections.get(img.image_id, []):
                    # Distance from marker to the box itself (0 when inside),
                    # cyclic in x.
                    mx, my = marker_obj["x"], marker_obj["y"]
                    dy = max(det.box.y_min - my, 0.0, my - det.box.y_max)
                    dx = 0.0
                    if not det.box.x_min <= mx <= det.box.x_max:
                        d1 = abs(det.box.x_min - mx)
                        d2 = abs(mx - det.box.x_max)
                        dx = min(d1, d2, img.pano.width_px - d1,
                                 img.pano.width_px - d2)
                    if math.hypot(dx, dy) <= radius:
                        proposals.append(
                            {
                                "local_id": det.local_id,
                                "box": det.box.as_list(),
                                "label": det.class_label,
                                "score": det.score,
                            }
                        )
            panoramas.append(
                {
                    "image_id": img.image_id,
                    "width": img.pano.width_px,
                    "height": img.pano.height_px,
                    "marker": marker_obj,
                    "marker_radius_px": radius,
                    "proposals": proposals,
                }
            )
        return {
            "target": {"lat": target.lat_deg, "lng": target.lng_deg},
            "panoramas": panoramas,
            "short": len(panoramas) < 4,
        }

    def _validated_box(image_id: str, payload: BoxPayload):
        img = _image_or_404(image_id)
        if not (payload.x_min < payload.x_max and payload.y_min < payload.y_max):
            raise ApiError(422, "DegenerateBox", "box must have positive extent")
        if (
            payload.x_min < 0
            or payload.y_min < 0
            or payload.x_max > img.pano.width_px
            or payload.y_max > img.pano.height_px
        ):
            raise ApiError(422, "BoxOutOfBounds", "box outside image bounds",
                           detail={"width": img.pano.width_px,
                                   "height": img.pano.height_px})
        return payload.model_dump(exclude={"expected_revision"})

    @app.post("/images/{image_id}/boxes")
    def create_box(image_id: str, payload: BoxPayload):
        fields = _validated_box(image_id, payload)
        try:
            box = store.upsert_box(image_id, fields, payload.expected_revision)
        except RevisionConflict as exc:
            raise ApiError(409, "RevisionConflict", str(exc),
                           detail={"actual_revision": exc.actual})
        return box.to_jsonable()

    @app.put("/images/{image_id}/boxes/{box_id}")
    def update_box(image_id: str, box_id: str, payload: BoxPayload):
        fields = _validated_box(image_id, payload)
        try:
            store.get_box(image_id, box_id)
            box = store.upsert_box(image_id, fields, payload.expected_revision,
                                   box_id=box_id)
        except NotFound as exc:
            raise ApiError(404, "BoxNotFound", str(exc))
        except RevisionConflict as exc:
            raise ApiError(409, "RevisionConflict", str(exc),
                           detail={"actual_revision": exc.actual})
        return box.to_jsonable()

    @app.post("/identities")
    def link_identity(payload: IdentityPayload):
        try:
            geo = GeoCoordinate(float(payload.geo["lat"]), float(payload.geo["lng"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ApiError(422, "InvalidCoordinate", f"bad geo: {exc}")
        instance_id = payload.instance_id or store.next_identity_id()
        try:
            doc = store.link_identity(
                instance_id,
                (geo.lat_deg, geo.lng_deg),
                [(l.image_id, l.box_id) for l in payload.links],
                status=payload.status,
            )
        except UnprocessableEntity as exc:
            raise ApiError(422, "DuplicateImageLink", str(exc))
        except NotFound as exc:
            raise ApiError(404, "DanglingBoxRef", str(exc))
        return doc.to_jsonable()

    @app.get("/identities/{instance_id}")
    def get_identity(instance_id: str):
        try:
            return store.get_identity(instance_id).to_jsonable()
        except NotFound as exc:
            raise ApiError(404, "IdentityNotFound", str(exc))

    @app.get("/export")
    def export(format: str = "json"):
        if format == "json":
            payload = export_json_archive(store, dataset)
        elif format == "voc":
            payload = export_voc_archive(store, dataset)
        else:
            raise ApiError(422, "UnknownFormat", f"unsupported export format {format!r}")
        return Response(
            content=payload,
            media_type="application/zip",
            headers={"Content-Disposition":
                     f"attachment; filename=annotations_{format}.zip"},
        )

    return app
