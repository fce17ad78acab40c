import math

import pytest

from panomatch.data import (
    BoundingBox,
    GroundTruthBox,
    Identity,
    ImageRecord,
    SceneDataset,
)
from panomatch.geo import CameraPose, GeoCoordinate, PanoramaGeometry

PANO = PanoramaGeometry(2048, 1024)


def make_camera(lat=0.0, lng=0.0, yaw=0.0, height=2.5) -> CameraPose:
    return CameraPose(GeoCoordinate(lat, lng), yaw, height)


def tiny_dataset() -> SceneDataset:
    """Two panoramas, one identity visible in both."""
    ds = SceneDataset(split="all")
    cam_a = make_camera(0.0, 0.0)
    cam_b = make_camera(15.0 / 6_372_800.0 * 180.0 / math.pi, 0.0)
    gt_geo = GeoCoordinate(7e-5, 1e-6)
    box_a = BoundingBox(100, 600, 160, 700)
    box_b = BoundingBox(1800, 620, 1860, 720)
    ds.images["img_a"] = ImageRecord(
        "img_a", PANO, cam_a, ["img_b"],
        [GroundTruthBox(box_a, "tree_1", gt_geo, class_label="tree")],
    )
    ds.images["img_b"] = ImageRecord(
        "img_b", PANO, cam_b, ["img_a"],
        [GroundTruthBox(box_b, "tree_1", gt_geo, class_label="tree")],
    )
    ds.identities["tree_1"] = Identity("tree_1", gt_geo, [("img_a", 0), ("img_b", 0)])
    return ds


@pytest.fixture
def dataset():
    return tiny_dataset()
