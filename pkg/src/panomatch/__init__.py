"""Cross-view matching and geo-localization of street-level objects."""

from .geo import (
    EARTH_RADIUS_M,
    CameraPose,
    EnuVector,
    GeoCoordinate,
    PanoramaGeometry,
    PixelPoint,
    PoseFeatures,
    enu_from_geo,
    geo_from_pixel,
    ground_distance,
    haversine_distance,
    pixel_from_geo,
    relative_pose_features,
)
from .data import (
    BoundingBox,
    Detection,
    GroundTruthBox,
    Identity,
    ImageRecord,
    SceneDataset,
    load_detections,
    load_mapillary_geojson,
    load_pasadena,
    save_dataset,
    validate,
)
from .matching import (
    MatchingConfig,
    MatchingResult,
    MatchPair,
    assign,
    cross_view_match,
    filter_candidates,
    filter_identified,
    iou,
    match_boxes_iou,
    nms,
    project_detection,
)
from .localization import (
    Observation,
    ProjectionCorrection,
    TrackEstimate,
    TriangulationResult,
    fit_projection_correction,
    localize_pipeline,
    localize_single,
    triangulate,
)
from .losses import (
    LossBreakdown,
    LossConfig,
    combined_loss,
    contrastive_loss,
    projected_loc_loss,
    rmse_loss,
    smooth_l1,
    softmax_log_loss,
)
from .metrics import EvalReport, detection_map, geolocalization_mae, reid_accuracy
from .simulate import SimConfig, SimScene, generate_scene, run_scene, sweep

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
