"""Pure geometric kernel: geodesic <-> local ENU <-> panorama pixel transforms.

Model assumptions: spherical Earth, flat local terrain, ideal equirectangular
panoramas. All public angles are degrees; internal math is in radians.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

from .errors import AboveHorizon, DegenerateTarget

# Single Earth radius used everywhere (ENU conversion and haversine alike).
EARTH_RADIUS_M = 6_372_800.0


@dataclass(frozen=True)
class GeoCoordinate:
    """WGS-ish latitude/longitude pair in degrees; lng normalized to [-180, 180)."""

    lat_deg: float
    lng_deg: float

    def __post_init__(self):
        if not -90.0 <= self.lat_deg <= 90.0:
            raise ValueError(f"latitude {self.lat_deg} outside [-90, 90]")
        lng = (self.lng_deg + 180.0) % 360.0 - 180.0
        object.__setattr__(self, "lng_deg", lng)


@dataclass(frozen=True)
class CameraPose:
    """Camera metadata: location, yaw clockwise from true north, height above ground."""

    location: GeoCoordinate
    yaw_deg: float
    height_m: float

    def __post_init__(self):
        if self.height_m <= 0:
            raise ValueError(f"camera height must be > 0, got {self.height_m}")
        object.__setattr__(self, "yaw_deg", self.yaw_deg % 360.0)


@dataclass(frozen=True)
class EnuVector:
    """Local East/North/Up offset in meters, anchored at a camera."""

    e_x: float
    e_y: float
    e_z: float


@dataclass(frozen=True)
class PanoramaGeometry:
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise ValueError("panorama dimensions must be positive")
        if self.width_px != 2 * self.height_px:
            # Mapillary frames are admitted, but a true equirect pano is 2:1.
            warnings.warn(
                f"panorama {self.width_px}x{self.height_px} is not 2:1 equirectangular",
                stacklevel=2,
            )


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float


@dataclass(frozen=True)
class PoseFeatures:
    """Relative pose cues: inter-camera distance and per-view heading angles."""

    v_m: float
    a_src_deg: float
    a_dst_deg: float


def enu_from_geo(camera: CameraPose, target: GeoCoordinate) -> EnuVector:
    """Express a geographic target in the camera's local ENU frame.

    e_x = R cos(C_lat) sin(T_lng - C_lng), e_y = R sin(T_lat - C_lat),
    e_z = -camera height (target assumed on the ground plane).
    """
    c = camera.location
    e_x = EARTH_RADIUS_M * math.cos(math.radians(c.lat_deg)) * math.sin(
        math.radians(target.lng_deg - c.lng_deg)
    )
    e_y = EARTH_RADIUS_M * math.sin(math.radians(target.lat_deg - c.lat_deg))
    return EnuVector(e_x, e_y, -camera.height_m)


def geo_from_enu(camera: CameraPose, e_x: float, e_y: float) -> GeoCoordinate:
    """Invert enu_from_geo for a ground-plane offset (e_x east, e_y north)."""
    c = camera.location
    lat = c.lat_deg + math.degrees(math.asin(e_y / EARTH_RADIUS_M))
    lng = c.lng_deg + math.degrees(
        math.asin(e_x / (EARTH_RADIUS_M * math.cos(math.radians(c.lat_deg))))
    )
    return GeoCoordinate(lat, lng)


def ground_distance(enu: EnuVector) -> float:
    """Planar distance z = sqrt(e_x^2 + e_y^2) from the camera, meters."""
    return math.hypot(enu.e_x, enu.e_y)


def wrap_x(x: float, width_px: int) -> float:
    """Wrap a pixel column into [0, W); panoramas are horizontally cyclic."""
    return x % width_px


def pixel_from_geo(
    camera: CameraPose, target: GeoCoordinate, pano: PanoramaGeometry
) -> PixelPoint:
    """Project a ground target into the camera's equirectangular panorama.

    x encodes the compass bearing relative to camera yaw, y the elevation of
    the viewing ray toward the target's ground point.

    Raises:
        DegenerateTarget: target is at the camera's nadir (bearing undefined).
    """
    enu = enu_from_geo(camera, target)
    z = ground_distance(enu)
    if z == 0.0:
        raise DegenerateTarget("target coincides with camera location")
    w, h = pano.width_px, pano.height_px
    x = (math.pi + math.atan2(enu.e_x, enu.e_y) - math.radians(camera.yaw_deg)) * w / (
        2.0 * math.pi
    )
    y = (math.pi / 2.0 - math.atan2(-camera.height_m, z)) * h / math.pi
    return PixelPoint(wrap_x(x, w), y)


def bearing_from_pixel(camera: CameraPose, x: float, pano: PanoramaGeometry) -> float:
    """Compass bearing (radians, from north) encoded by pixel column x."""
    return 2.0 * math.pi * x / pano.width_px - math.pi + math.radians(camera.yaw_deg)


def geo_from_pixel(
    camera: CameraPose, pixel: PixelPoint, pano: PanoramaGeometry
) -> GeoCoordinate:
    """Geo-code a below-horizon pixel under the flat-terrain assumption.

    The viewing ray through the pixel is intersected with the ground plane
    height_m below the camera; the ENU hit point is converted back to lat/lng.

    Raises:
        AboveHorizon: pixel row at or above H/2, the ray never hits the ground.
    """
    w, h = pano.width_px, pano.height_px
    theta = math.pi / 2.0 - pixel.y * math.pi / h  # elevation, < 0 below horizon
    if theta >= 0.0:
        raise AboveHorizon(f"pixel row {pixel.y} is at or above the horizon ({h / 2})")
    z = camera.height_m / math.tan(-theta)
    beta = bearing_from_pixel(camera, pixel.x, pano)
    return geo_from_enu(camera, z * math.sin(beta), z * math.cos(beta))


def ground_distance_from_pixel_row(
    camera: CameraPose, y: float, pano: PanoramaGeometry
) -> float:
    """Flat-terrain distance implied by a below-horizon pixel row."""
    theta = math.pi / 2.0 - y * math.pi / pano.height_px
    if theta >= 0.0:
        raise AboveHorizon(f"pixel row {y} is at or above the horizon")
    return camera.height_m / math.tan(-theta)


def haversine_distance(a: GeoCoordinate, b: GeoCoordinate) -> float:
    """Great-circle distance in meters between two lat/lng points."""
    s = (
        math.sin(math.radians(b.lat_deg - a.lat_deg) / 2.0) ** 2
        + math.cos(math.radians(a.lat_deg))
        * math.cos(math.radians(b.lat_deg))
        * math.sin(math.radians(b.lng_deg - a.lng_deg) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(s)))


def relative_pose_features(
    cam_a: CameraPose,
    cam_b: CameraPose,
    pix_a: PixelPoint,
    pix_b: PixelPoint,
    pano: PanoramaGeometry,
) -> PoseFeatures:
    """Relative pose cues for a candidate pair: camera distance v and the
    in-panorama heading angle a = 360 * x / W per view."""
    v = haversine_distance(cam_a.location, cam_b.location)
    return PoseFeatures(
        v_m=v,
        a_src_deg=360.0 * pix_a.x / pano.width_px,
        a_dst_deg=360.0 * pix_b.x / pano.width_px,
    )
