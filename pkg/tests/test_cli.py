import hashlib
import json
import os
import socket
import subprocess
import sys
import time
import zipfile

import pytest

from panomatch.cli import main
from panomatch.data import load_pasadena


@pytest.fixture(scope="module")
def sim_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    rc = main(["simulate", "--out", str(root), "--seed", "7",
               "--n-objects", "8", "--street-length", "90"])
    assert rc == 0
    return str(root)


def file_hash(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


class TestBasics:
    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "project" in capsys.readouterr().out

    def test_missing_data_root_is_io_error(self, tmp_path):
        rc = main(["validate", "--data", str(tmp_path / "nope")])
        assert rc == 2

    def test_no_data_root_at_all(self, monkeypatch):
        monkeypatch.delenv("PANOMATCH_DATA_ROOT", raising=False)
        assert main(["validate"]) == 3

    def test_env_var_data_root(self, sim_root, monkeypatch):
        monkeypatch.setenv("PANOMATCH_DATA_ROOT", sim_root)
        assert main(["validate"]) == 0


class TestValidate:
    def test_clean_dataset(self, sim_root):
        assert main(["validate", "--data", sim_root]) == 0

    def test_violations_exit_3(self, sim_root, tmp_path, capsys):
        import shutil

        bad = tmp_path / "bad"
        shutil.copytree(sim_root, bad)
        ann = bad / "annotations" / "pano_0000.json"
        obj = json.loads(ann.read_text())
        obj["boxes"].append({"x_min": 50.0, "y_min": 50.0, "x_max": 10.0,
                             "y_max": 80.0})
        ann.write_text(json.dumps(obj))
        assert main(["validate", "--data", str(bad)]) == 3
        assert "degenerate" in capsys.readouterr().out


class TestProject:
    def test_noiseless_projections_match_destination_gt(self, sim_root, tmp_path):
        out = tmp_path / "proj.json"
        ds = load_pasadena(sim_root)
        # find a neighbor pair sharing an identity
        pair = None
        for ident in ds.identities.values():
            images = sorted(dict(ident.appearances))
            for a in images:
                for b in images:
                    if b in ds.images[a].neighbor_ids and a < b:
                        pair = (a, b, ident)
                        break
        a, b, ident = pair
        rc = main(["project", "--data", sim_root, "--image-x", a, "--image-y", b,
                   "--out", str(out)])
        assert rc == 0
        proj = json.loads(out.read_text())
        apps = dict(ident.appearances)
        gt_b = ds.images[b].ground_truth[apps[b]]
        # detections were emitted in shuffled order; find the one over gt in a
        from panomatch.data import load_detections
        from panomatch.matching import iou

        dets_a = load_detections(os.path.join(sim_root, "detections.json"))[a]
        gt_a = ds.images[a].ground_truth[apps[a]]
        src = [d for d in dets_a if iou(d.box, gt_a.box) > 0.9][0]
        got = proj["x_to_y"][str(src.local_id)]
        assert got == pytest.approx(gt_b.box.as_list(), abs=1e-4)
        assert (out.parent / (out.name + ".manifest.json")).exists()

    def test_missing_image_exit_3(self, sim_root, tmp_path):
        rc = main(["project", "--data", sim_root, "--image-x", "ghost",
                   "--image-y", "pano_0001", "--out", str(tmp_path / "p.json")])
        assert rc == 3


class TestPipelineCommands:
    def test_match_localize_evaluate(self, sim_root, tmp_path):
        matches = tmp_path / "matches.json"
        tracks = tmp_path / "tracks.json"
        csv_path = tmp_path / "tracks.csv"
        report = tmp_path / "report.json"
        assert main(["match", "--data", sim_root, "--out", str(matches)]) == 0
        assert main(["localize", "--data", sim_root, "--out", str(tracks),
                     "--csv", str(csv_path)]) == 0
        assert main(["evaluate", "--data", sim_root, "--tracks", str(tracks),
                     "--format", "json", "--out", str(report)]) == 0
        obj = json.loads(report.read_text())
        assert obj["reid_accuracy"] == 1.0
        assert obj["mae_m"] < 1e-6
        assert obj["det_map"] == 1.0
        rows = csv_path.read_text().strip().splitlines()
        assert rows[0].startswith("track_id,lat,lng")
        assert len(rows) == 1 + len(json.loads(tracks.read_text()))

    def test_match_parallel_jobs_identical(self, sim_root, tmp_path):
        a, b = tmp_path / "m1.json", tmp_path / "m2.json"
        assert main(["match", "--data", sim_root, "--out", str(a)]) == 0
        assert main(["match", "--data", sim_root, "--out", str(b),
                     "--jobs", "2"]) == 0
        assert a.read_text() == b.read_text()

    def test_reproducible_outputs_and_manifest(self, sim_root, tmp_path):
        out1, out2 = tmp_path / "t1.json", tmp_path / "t2.json"
        main(["localize", "--data", sim_root, "--out", str(out1)])
        main(["localize", "--data", sim_root, "--out", str(out2)])
        assert out1.read_text() == out2.read_text()
        m1 = json.loads((tmp_path / "t1.json.manifest.json").read_text())
        m2 = json.loads((tmp_path / "t2.json.manifest.json").read_text())
        assert m1["inputs"] == m2["inputs"]
        assert list(m1["outputs"].values()) == list(m2["outputs"].values())
        assert m1["outputs"][str(out1)] == file_hash(out1)

    def test_simulate_determinism_across_runs(self, tmp_path):
        r1, r2 = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--out", str(r1), "--seed", "3", "--n-objects", "5"])
        main(["simulate", "--out", str(r2), "--seed", "3", "--n-objects", "5"])
        d1 = json.loads((r1 / "detections.json").read_text())
        d2 = json.loads((r2 / "detections.json").read_text())
        assert d1 == d2

    def test_evaluate_table_to_stdout(self, sim_root, capsys):
        assert main(["evaluate", "--data", sim_root]) == 0
        out = capsys.readouterr().out
        assert "detection mAP" in out
        assert "re-id accuracy" in out

    def test_evaluate_csv_format(self, sim_root, tmp_path):
        out = tmp_path / "report.csv"
        assert main(["evaluate", "--data", sim_root, "--format", "csv",
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "metric,value"
        assert any(line.startswith("det_map,") for line in lines)

    def test_simulate_config_round_trips_through_manifest(self, tmp_path):
        r1 = tmp_path / "s1"
        main(["simulate", "--out", str(r1), "--seed", "5", "--n-objects", "6",
              "--lateral-min", "5", "--lateral-max", "9"])
        manifest = json.loads((tmp_path / "s1.manifest.json").read_text())
        cfg = tmp_path / "replay.json"
        cfg.write_text(json.dumps(manifest["params"]))
        r2 = tmp_path / "s2"
        main(["simulate", "--out", str(r2), "--config", str(cfg)])
        assert (r1 / "detections.json").read_text() == \
               (r2 / "detections.json").read_text()

    def test_config_file_precedence(self, sim_root, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gate_iou": 0.9, "conf_threshold": 0.2}))
        out = tmp_path / "m.json"
        assert main(["match", "--data", sim_root, "--config", str(cfg),
                     "--gate-iou", "0.1", "--out", str(out)]) == 0
        manifest = json.loads((tmp_path / "m.json.manifest.json").read_text())
        # flag wins over config file; config file wins over default
        assert manifest["params"]["matching"]["gate_iou"] == 0.1
        assert manifest["params"]["matching"]["conf_threshold"] == 0.2


class TestExport:
    def test_tracks_csv(self, sim_root, tmp_path):
        tracks = tmp_path / "tracks.json"
        main(["localize", "--data", sim_root, "--out", str(tracks)])
        out = tmp_path / "tracks_export.csv"
        assert main(["export", "--what", "tracks", "--tracks", str(tracks),
                     "--out", str(out)]) == 0
        assert out.read_text().startswith("track_id,")

    def test_annotations_voc(self, sim_root, tmp_path):
        out = tmp_path / "voc.zip"
        assert main(["export", "--data", sim_root, "--format", "voc",
                     "--out", str(out)]) == 0
        names = zipfile.ZipFile(out).namelist()
        assert names and all(n.endswith(".xml") for n in names)

    def test_annotations_json_roundtrip(self, sim_root, tmp_path):
        out = tmp_path / "annotations.zip"
        assert main(["export", "--data", sim_root, "--format", "json",
                     "--out", str(out)]) == 0
        target = tmp_path / "unzipped"
        zipfile.ZipFile(out).extractall(target)
        ds = load_pasadena(str(target))
        assert len(ds.images) == 7


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestServe:
    def test_health_over_http(self, sim_root):
        import httpx

        port = free_port()
        proc = subprocess.Popen(
            [sys.executable, "-m", "panomatch.cli", "serve", "--data", sim_root,
             "--port", str(port), "--store", os.path.join(sim_root, "store.jsonl")],
            stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
        )
        try:
            deadline = time.time() + 20
            last = None
            while time.time() < deadline:
                try:
                    r = httpx.get(f"http://127.0.0.1:{port}/health", timeout=1.0)
                    last = r
                    if r.status_code == 200:
                        break
                except Exception:
                    time.sleep(0.2)
            assert last is not None and last.status_code == 200
            assert last.json()["status"] == "ok"
        finally:
            proc.terminate()
            proc.wait(timeout=10)
