"""Command-line front door: project, match, localize, evaluate, simulate,
serve, validate, export.

Every run that writes files also writes a `<output>.manifest.json` recording
the resolved parameters, input/output hashes, and package versions, so a
repeated command with identical inputs and seed can be verified byte-for-byte.
Config precedence: flags > --config file > built-in defaults. JSON is the
interchange format between subcommands; CSV is offered where GIS tools
expect it. The dataset root may come from the PANOMATCH_DATA_ROOT env var.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, fields

from . import __version__
from .data import SceneDataset, load_detections, load_pasadena, validate
from .errors import ConfigError, IntegrityError, PanomatchError, ParseError
from .localization import localize_pipeline, prefilter_detections, run_matching, \
    single_view_estimates
from .matching import MatchingConfig, cross_view_match, project_detection
from .metrics import EvalReport, detection_map, geolocalization_mae, reid_accuracy
from .simulate import SimConfig, generate_scene, save_scene

EXIT_OK = 0
EXIT_IO = 2
EXIT_VALIDATION = 3


# ---------------------------------------------------------------------------
# Plumbing
# ---------------------------------------------------------------------------

def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_path(path: str) -> str:
    """Hash a file, or a directory tree (sorted relative paths + contents)."""
    if os.path.isfile(path):
        return _sha256_file(path)
    h = hashlib.sha256()
    for root, dirs, files in os.walk(path):
        dirs.sort()
        for fname in sorted(files):
            full = os.path.join(root, fname)
            h.update(os.path.relpath(full, path).encode())
            h.update(bytes.fromhex(_sha256_file(full)))
    return h.hexdigest()


def write_manifest(primary_output: str, command: str, params: dict,
                   inputs: list[str], outputs: list[str]) -> str:
    manifest = {
        "command": command,
        "params": params,
        "inputs": {p: _hash_path(p) for p in inputs if p and os.path.exists(p)},
        "outputs": {p: _hash_path(p) for p in outputs if p and os.path.exists(p)},
        "versions": {
            "panomatch": __version__,
            "python": platform.python_version(),
        },
    }
    path = primary_output.rstrip("/") + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: config file must hold a JSON object")
    return obj


def _resolve(args: argparse.Namespace, cfg_file: dict, name: str, default):
    """flags > config file > default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in cfg_file:
        return cfg_file[name]
    return default


def _matching_config(args: argparse.Namespace, cfg_file: dict) -> MatchingConfig:
    base = MatchingConfig()
    return MatchingConfig(
        conf_threshold=float(_resolve(args, cfg_file, "conf_threshold", base.conf_threshold)),
        nms_iou=float(_resolve(args, cfg_file, "nms_iou", base.nms_iou)),
        gate_iou=float(_resolve(args, cfg_file, "gate_iou", base.gate_iou)),
        feature_weight=float(_resolve(args, cfg_file, "feature_weight", base.feature_weight)),
        assignment_mode=str(_resolve(args, cfg_file, "assignment_mode", base.assignment_mode)),
    )


def _add_matching_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conf-threshold", type=float, dest="conf_threshold",
                   help="classification confidence floor (default 0.01)")
    p.add_argument("--nms-iou", type=float, dest="nms_iou",
                   help="NMS overlap threshold (default 0.5)")
    p.add_argument("--gate-iou", type=float, dest="gate_iou",
                   help="minimum projected overlap to consider a pair (default 0.1)")
    p.add_argument("--feature-weight", type=float, dest="feature_weight",
                   help="lambda weighting appearance vs geometry (default 0.5)")
    p.add_argument("--assignment-mode", choices=["optimal", "greedy"],
                   dest="assignment_mode", help="pair resolution mode (default optimal)")


def _data_root(args: argparse.Namespace) -> str:
    root = getattr(args, "data", None) or os.environ.get("PANOMATCH_DATA_ROOT")
    if not root:
        raise ConfigError("no dataset root: pass --data or set PANOMATCH_DATA_ROOT")
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} does not exist")
    return root


def _load_inputs(args) -> tuple[SceneDataset, dict, str, str]:
    root = _data_root(args)
    dataset = load_pasadena(root, split=getattr(args, "split", None))
    det_path = getattr(args, "detections", None) or os.path.join(root, "detections.json")
    detections = load_detections(det_path)
    return dataset, detections, root, det_path


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_project(args) -> int:
    cfg_file = _load_config_file(args.config)
    dataset, detections, root, det_path = _load_inputs(args)
    a, b = args.image_x, args.image_y
    for image_id in (a, b):
        if image_id not in dataset.images:
            print(f"error: image {image_id!r} not in dataset", file=sys.stderr)
            return EXIT_VALIDATION
    ia, ib = dataset.images[a], dataset.images[b]
    out = {"image_x": a, "image_y": b, "x_to_y": {}, "y_to_x": {}}
    for src, dst, key in ((ia, ib, "x_to_y"), (ib, ia, "y_to_x")):
        for det in detections.get(src.image_id, []):
            try:
                box = project_detection(det, src.camera, dst.camera, src.pano, dst.pano)
            except PanomatchError as exc:
                out[key][str(det.local_id)] = {"error": str(exc)}
                continue
            out[key][str(det.local_id)] = box.as_list()
    _write_json(out, args.out)
    write_manifest(args.out, "project", {"image_x": a, "image_y": b,
                                         "config": cfg_file},
                   [root, det_path], [args.out])
    print(f"wrote {args.out}")
    return EXIT_OK


def _match_pair_worker(task):
    dataset, detections, cfg, a, b = task
    ia, ib = dataset.images[a], dataset.images[b]
    res = cross_view_match(detections.get(a, []), detections.get(b, []),
                           ia.camera, ib.camera, ia.pano, ib.pano, cfg)
    return a, b, res.to_jsonable()


def cmd_match(args) -> int:
    cfg_file = _load_config_file(args.config)
    cfg = _matching_config(args, cfg_file)
    dataset, detections, root, det_path = _load_inputs(args)
    filtered = prefilter_detections(dataset, detections, cfg)

    from .localization import neighbor_pairs

    pairs = neighbor_pairs(dataset)
    tasks = [(dataset, filtered, cfg, a, b) for a, b in pairs]
    jobs = args.jobs or 1
    if jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_match_pair_worker, tasks))
    else:
        results = [_match_pair_worker(t) for t in tasks]
    out = [{"image_x": a, "image_y": b, **res} for a, b, res in results]
    _write_json(out, args.out)
    write_manifest(args.out, "match", {"matching": asdict(cfg), "jobs": jobs},
                   [root, det_path], [args.out])
    print(f"wrote {args.out} ({len(out)} pairs)")
    return EXIT_OK


def cmd_localize(args) -> int:
    cfg_file = _load_config_file(args.config)
    cfg = _matching_config(args, cfg_file)
    dataset, detections, root, det_path = _load_inputs(args)
    tracks = localize_pipeline(dataset, detections, cfg)
    payload = [t.to_jsonable() for t in tracks]
    _write_json(payload, args.out)
    outputs = [args.out]
    if args.csv:
        _tracks_to_csv(payload, args.csv)
        outputs.append(args.csv)
    write_manifest(args.out, "localize", {"matching": asdict(cfg)},
                   [root, det_path], outputs)
    print(f"wrote {args.out} ({len(tracks)} tracks)")
    return EXIT_OK


def _tracks_to_csv(tracks: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["track_id", "lat", "lng", "n_views", "residual_m", "method"])
        for t in tracks:
            geo = t.get("geo") or {}
            writer.writerow([
                t["track_id"], geo.get("lat", ""), geo.get("lng", ""),
                t["n_views"], t["residual_m"], t["method"],
            ])


def cmd_evaluate(args) -> int:
    cfg_file = _load_config_file(args.config)
    cfg = _matching_config(args, cfg_file)
    dataset, detections, root, det_path = _load_inputs(args)
    filtered = prefilter_detections(dataset, detections, cfg)

    det_eval = detection_map(
        filtered, {i: img.ground_truth for i, img in dataset.images.items()}
    )
    pair_results = run_matching(dataset, filtered, cfg, prefiltered=True)
    reid = reid_accuracy(pair_results, filtered, dataset)

    if args.tracks:
        with open(args.tracks, "r", encoding="utf-8") as fh:
            track_payload = json.load(fh)
    else:
        track_payload = [t.to_jsonable() for t in localize_pipeline(dataset, detections, cfg)]
    from .geo import GeoCoordinate

    preds = [GeoCoordinate(t["geo"]["lat"], t["geo"]["lng"])
             for t in track_payload if t.get("geo")]
    gt_geos = [dataset.identities[i].geo for i in sorted(dataset.identities)]
    report = EvalReport(det_map=det_eval.mean_ap, per_class=det_eval.per_class, reid=reid)
    if preds and gt_geos:
        try:
            report.mae = geolocalization_mae(preds, gt_geos)
        except PanomatchError:
            pass
    singles = single_view_estimates(dataset, detections, cfg)
    if singles and gt_geos:
        try:
            report.mae_single = geolocalization_mae(singles, gt_geos)
        except PanomatchError:
            pass

    fmt = args.format or "table"
    rendered = report.to_json() if fmt == "json" else report.to_table()
    if fmt == "csv":
        flat = report.to_jsonable()
        rows = [(k, v) for k, v in sorted(flat.items()) if not isinstance(v, (dict, list))]
        rendered = "\n".join(f"{k},{v}" for k, v in [("metric", "value")] + rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(rendered + "\n")
        write_manifest(args.out, "evaluate", {"matching": asdict(cfg), "format": fmt},
                       [root, det_path], [args.out])
        print(f"wrote {args.out}")
    else:
        print(rendered)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg_file = _load_config_file(args.config)
    base = SimConfig()
    values = {}
    for f in fields(SimConfig):
        if f.name == "object_lateral_offset_m":
            file_range = cfg_file.get("object_lateral_offset_m",
                                      base.object_lateral_offset_m)
            lo = _resolve(args, cfg_file, "lateral_min", file_range[0])
            hi = _resolve(args, cfg_file, "lateral_max", file_range[1])
            values[f.name] = (float(lo), float(hi))
            continue
        values[f.name] = _resolve(args, cfg_file, f.name, getattr(base, f.name))
    cfg = SimConfig(**values)
    scene = generate_scene(cfg)
    save_scene(scene, args.out)
    params = {k: (list(v) if isinstance(v, tuple) else v) for k, v in values.items()}
    write_manifest(args.out, "simulate", params, [], [args.out])
    print(
        f"wrote {args.out}: {len(scene.dataset.images)} panoramas, "
        f"{len(scene.dataset.identities)} objects, "
        f"{sum(len(v) for v in scene.detections.values())} detections"
    )
    return EXIT_OK


def cmd_validate(args) -> int:
    root = _data_root(args)
    dataset = load_pasadena(root, split=getattr(args, "split", None))
    report = validate(dataset)
    if report.ok:
        print(f"ok: {len(dataset.images)} images, {len(dataset.identities)} identities")
        return EXIT_OK
    for v in report.violations:
        print(f"violation: {v.where}: {v.message}")
    return EXIT_VALIDATION


def cmd_export(args) -> int:
    if args.what == "tracks":
        with open(args.tracks, "r", encoding="utf-8") as fh:
            tracks = json.load(fh)
        _tracks_to_csv(tracks, args.out)
        write_manifest(args.out, "export", {"what": "tracks"}, [args.tracks], [args.out])
    else:
        from .service.store import DocumentStore, export_json_archive, export_voc_archive

        root = _data_root(args)
        dataset = load_pasadena(root, split=getattr(args, "split", None))
        store = DocumentStore()
        store.seed_from_dataset(dataset)
        fmt = args.format or "json"
        if fmt == "json":
            payload = export_json_archive(store, dataset)
        elif fmt == "voc":
            payload = export_voc_archive(store, dataset)
        else:
            print(f"error: unknown export format {fmt!r}", file=sys.stderr)
            return EXIT_VALIDATION
        with open(args.out, "wb") as fh:
            fh.write(payload)
        write_manifest(args.out, "export", {"what": "annotations", "format": fmt},
                       [root], [args.out])
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import DocumentStore, create_app

    root = _data_root(args)
    dataset = load_pasadena(root, split=getattr(args, "split", None))
    det_path = args.detections or os.path.join(root, "detections.json")
    detections = load_detections(det_path) if os.path.exists(det_path) else {}
    store_path = args.store or os.path.join(root, "store", "log.jsonl")
    store = DocumentStore(store_path)
    if args.seed_store and not store.identities():
        store.seed_from_dataset(dataset)
    app = create_app(
        dataset,
        store,
        images_dir=args.images_dir or os.path.join(root, "images"),
        detections=detections,
        marker_radius_px=args.marker_radius,
    )
    print(f"serving {len(dataset.images)} panoramas on {args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panomatch",
        description="Cross-view matching and geo-localization of street-level objects",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, detections=True):
        p.add_argument("--data", help="dataset root (or PANOMATCH_DATA_ROOT)")
        p.add_argument("--split", help="restrict to one split from splits.json")
        p.add_argument("--config", help="JSON config file (flags take precedence)")
        if detections:
            p.add_argument("--detections", help="detections JSON "
                                                "(default <data>/detections.json)")

    p = sub.add_parser("project", help="project detections between two panoramas")
    common(p)
    p.add_argument("--image-x", required=True)
    p.add_argument("--image-y", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("match", help="cross-view match all neighbor pairs")
    common(p)
    _add_matching_args(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("localize", help="cluster matches into tracks and triangulate")
    common(p)
    _add_matching_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write a GIS-friendly CSV")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("evaluate", help="detection mAP, re-id accuracy, geo MAE")
    common(p)
    _add_matching_args(p)
    p.add_argument("--tracks", help="tracks JSON from `localize` (else recomputed)")
    p.add_argument("--format", choices=["json", "csv", "table"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic scene")
    p.add_argument("--config", help="JSON config file (flags take precedence)")
    p.add_argument("--out", required=True, help="output dataset directory")
    d = SimConfig()
    p.add_argument("--n-objects", type=int, dest="n_objects",
                   help=f"objects to place (default {d.n_objects})")
    p.add_argument("--street-length", type=float, dest="street_length_m",
                   help=f"street length in meters (default {d.street_length_m})")
    p.add_argument("--camera-spacing", type=float, dest="camera_spacing_m",
                   help=f"meters between panoramas (default {d.camera_spacing_m})")
    p.add_argument("--lateral-min", type=float, dest="lateral_min",
                   help=f"min lateral offset (default {d.object_lateral_offset_m[0]})")
    p.add_argument("--lateral-max", type=float, dest="lateral_max",
                   help=f"max lateral offset (default {d.object_lateral_offset_m[1]})")
    p.add_argument("--camera-height", type=float, dest="camera_height_m",
                   help=f"camera height in meters (default {d.camera_height_m})")
    p.add_argument("--yaw-noise", type=float, dest="yaw_noise_deg",
                   help="recorded-pose yaw noise sigma, degrees (default 0)")
    p.add_argument("--position-noise", type=float, dest="position_noise_m",
                   help="recorded-pose position noise sigma per ENU axis, "
                        "meters (default 0)")
    p.add_argument("--bbox-jitter", type=float, dest="bbox_jitter_px",
                   help="detection box jitter sigma, pixels (default 0)")
    p.add_argument("--dropout", type=float, dest="detection_dropout_p",
                   help="per-box detection dropout probability (default 0)")
    p.add_argument("--clutter-rate", type=float, dest="clutter_rate",
                   help="expected false positives per image (default 0)")
    p.add_argument("--feature-dim", type=int, dest="feature_dim",
                   help=f"appearance feature length (default {d.feature_dim})")
    p.add_argument("--feature-noise", type=float, dest="feature_noise",
                   help="appearance noise sigma (default 0)")
    p.add_argument("--identical-features", action="store_const", const=True,
                   dest="identical_features",
                   help="give every object the same appearance vector")
    p.add_argument("--views-per-object", type=int, dest="views_per_object",
                   help=f"panoramas annotated per object (default {d.views_per_object})")
    p.add_argument("--neighbor-count", type=int, dest="neighbor_count",
                   help=f"neighbor links per panorama (default {d.neighbor_count})")
    p.add_argument("--seed", type=int, dest="seed",
                   help=f"PRNG seed (default {d.seed})")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="check dataset invariants")
    common(p, detections=False)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export", help="export tracks to CSV or annotations to VOC/JSON")
    common(p, detections=False)
    p.add_argument("--what", choices=["tracks", "annotations"], default="annotations")
    p.add_argument("--tracks", help="tracks JSON (for --what tracks)")
    p.add_argument("--format", choices=["json", "voc"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    common(p)
    p.add_argument("--store", help="document store log path")
    p.add_argument("--images-dir", help="directory with image files")
    p.add_argument("--seed-store", action="store_true",
                   help="import dataset ground truth into an empty store")
    p.add_argument("--marker-radius", type=float, default=150.0)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ParseError, IntegrityError, ConfigError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PanomatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
