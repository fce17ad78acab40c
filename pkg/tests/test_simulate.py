import numpy as np
import pytest

from panomatch.data import dataset_to_jsonable, load_pasadena, load_detections, validate
from panomatch.errors import ConfigError
from panomatch.geo import PixelPoint, geo_from_pixel
from panomatch.simulate import (
    SimConfig,
    generate_scene,
    run_scene,
    save_scene,
    sweep,
    write_sweep_csv,
)


class TestGenerateScene:
    def test_deterministic_per_seed(self):
        a = generate_scene(SimConfig(n_objects=10, seed=5))
        b = generate_scene(SimConfig(n_objects=10, seed=5))
        assert dataset_to_jsonable(a.dataset) == dataset_to_jsonable(b.dataset)
        assert a.oracle == b.oracle
        for img in a.detections:
            for da, db in zip(a.detections[img], b.detections[img]):
                assert da.box == db.box and da.score == db.score
                assert np.array_equal(da.feature, db.feature)
        c = generate_scene(SimConfig(n_objects=10, seed=6))
        assert dataset_to_jsonable(c.dataset) != dataset_to_jsonable(a.dataset)

    def test_noiseless_footpoints_geocode_to_object(self):
        scene = generate_scene(SimConfig(n_objects=8, street_length_m=120, seed=1))
        for image_id, img in scene.dataset.images.items():
            for gt in img.ground_truth:
                fx, fy = gt.box.footpoint()
                geo = geo_from_pixel(img.camera, PixelPoint(fx, fy), img.pano)
                assert abs(geo.lat_deg - gt.geo.lat_deg) < 1e-8
                assert abs(geo.lng_deg - gt.geo.lng_deg) < 1e-8

    def test_every_object_has_requested_views(self):
        cfg = SimConfig(n_objects=8, views_per_object=4, seed=2)
        scene = generate_scene(cfg)
        for ident in scene.dataset.identities.values():
            assert len(ident.appearances) == 4

    def test_dropout_one_gives_no_detections(self):
        scene = generate_scene(SimConfig(n_objects=5, detection_dropout_p=1.0, seed=0))
        assert sum(len(v) for v in scene.detections.values()) == 0

    def test_apparent_height_scales_inverse_distance(self):
        scene = generate_scene(SimConfig(n_objects=6, seed=3))
        ds = scene.dataset
        for ident in ds.identities.values():
            ratios = []
            for image_id, idx in ident.appearances:
                gt = ds.images[image_id].ground_truth[idx]
                ratios.append(gt.box.height * gt.distance_v)
            assert max(ratios) == pytest.approx(min(ratios), rel=1e-9)

    def test_oracle_covers_every_detection(self):
        scene = generate_scene(SimConfig(n_objects=6, clutter_rate=1.0,
                                         bbox_jitter_px=2.0, seed=4))
        for image_id, dets in scene.detections.items():
            for d in dets:
                assert (image_id, d.local_id) in scene.oracle
        assert None in scene.oracle.values()  # clutter maps to no identity

    def test_noisy_poses_recorded_but_gt_from_true(self):
        noisy = generate_scene(SimConfig(n_objects=5, yaw_noise_deg=3.0,
                                         position_noise_m=1.0, seed=8))
        clean = generate_scene(SimConfig(n_objects=5, seed=8))
        moved = 0
        for image_id in noisy.dataset.images:
            nc = noisy.dataset.images[image_id].camera
            tc = noisy.true_cameras[image_id]
            if nc.yaw_deg != tc.yaw_deg or nc.location != tc.location:
                moved += 1
            assert noisy.true_cameras[image_id] == clean.true_cameras[image_id]
        assert moved == len(noisy.dataset.images)

    def test_identical_feature_mode(self):
        scene = generate_scene(SimConfig(n_objects=5, identical_features=True, seed=0))
        feats = [d.feature for dets in scene.detections.values() for d in dets]
        for f in feats[1:]:
            assert np.allclose(f, feats[0])

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            SimConfig(n_objects=0)
        with pytest.raises(ConfigError):
            SimConfig(detection_dropout_p=1.5)
        with pytest.raises(ConfigError):
            SimConfig(yaw_noise_deg=-1.0)
        with pytest.raises(ConfigError):
            SimConfig(object_lateral_offset_m=(1.0, 5.0))  # below safe minimum

    def test_saved_scene_is_a_loadable_dataset(self, tmp_path):
        scene = generate_scene(SimConfig(n_objects=5, street_length_m=60, seed=1))
        save_scene(scene, str(tmp_path))
        ds = load_pasadena(str(tmp_path))
        assert validate(ds).ok
        assert dataset_to_jsonable(ds) == dataset_to_jsonable(scene.dataset)
        dets = load_detections(str(tmp_path / "detections.json"))
        assert {k: len(v) for k, v in dets.items()} == \
               {k: len(v) for k, v in scene.detections.items()}


class TestRunScene:
    def test_noiseless_end_to_end(self):
        out = run_scene(generate_scene(SimConfig(n_objects=15, seed=0)))
        assert out["reid"].accuracy == 1.0
        assert out["mae_pipeline"].mae_m < 1e-6
        assert out["det_eval"].mean_ap == 1.0

    def test_detection_coverage_tracks_dropout(self):
        vals = []
        for seed in range(5):
            out = run_scene(generate_scene(
                SimConfig(n_objects=20, detection_dropout_p=0.5, seed=seed)))
            vals.append(out["detection_coverage"])
        mean = sum(vals) / len(vals)
        assert mean == pytest.approx(0.5, abs=0.08)


class TestSweep:
    def test_yaw_sweep_monotone_mae(self, tmp_path):
        rows = sweep(
            SimConfig(n_objects=10, street_length_m=150),
            "yaw_noise_deg",
            [0.0, 1.0, 2.0, 4.0],
            seeds=list(range(8)),
        )
        by_level = {}
        for r in rows:
            by_level.setdefault(r["value"], []).append(r["mae_m"])
        means = [sum(v) / len(v) for _, v in sorted(by_level.items())]
        assert all(a < b for a, b in zip(means, means[1:]))
        path = tmp_path / "sweep.csv"
        write_sweep_csv(rows, str(path))
        header = path.read_text().splitlines()[0]
        assert header.split(",")[:3] == ["param", "value", "seed"]
        assert len(path.read_text().splitlines()) == len(rows) + 1

    def test_unknown_param_rejected(self):
        with pytest.raises(ConfigError):
            sweep(SimConfig(), "bogus", [1], [0])
