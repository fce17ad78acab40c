"""Evaluation suite: detection mAP, re-identification accuracy, geo MAE."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .data import Detection, GroundTruthBox, SceneDataset
from .errors import EmptyInput
from .geo import GeoCoordinate, haversine_distance
from .matching import MatchingResult, iou


@dataclass
class ClassAP:
    ap: float
    n_gt: int
    tp: int
    fp: int
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)


@dataclass
class DetectionEval:
    mean_ap: float
    per_class: dict[str, ClassAP] = field(default_factory=dict)

    @property
    def counts(self) -> dict[str, int]:
        tp = sum(c.tp for c in self.per_class.values())
        n_gt = sum(c.n_gt for c in self.per_class.values())
        return {
            "tp": tp,
            "fp": sum(c.fp for c in self.per_class.values()),
            "fn": n_gt - tp,
            "n_gt": n_gt,
        }


def _average_precision(precision: list[float], recall: list[float]) -> float:
    """All-point interpolated AP: area under the precision envelope."""
    if not recall:
        return 0.0
    mrec = [0.0] + recall + [recall[-1]]
    mpre = [0.0] + precision + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    ap = 0.0
    for i in range(1, len(mrec)):
        ap += (mrec[i] - mrec[i - 1]) * mpre[i]
    return ap


def detection_map(
    preds: dict[str, list[Detection]],
    gts: dict[str, list[GroundTruthBox]],
    iou_threshold: float = 0.5,
    wrap_widths: dict[str, float] | None = None,
) -> DetectionEval:
    """VOC-style mean average precision at a single IoU threshold.

    Detections are ranked by score (ties broken by image id then local id so
    the result is independent of input ordering); each ground-truth box can
    satisfy one detection. AP uses all-point interpolation, averaged over
    the classes present in the ground truth.
    """
    classes = sorted({g.class_label for boxes in gts.values() for g in boxes})
    per_class: dict[str, ClassAP] = {}
    for cls in classes:
        gt_by_image = {
            image_id: [g for g in boxes if g.class_label == cls]
            for image_id, boxes in gts.items()
        }
        n_gt = sum(len(v) for v in gt_by_image.values())
        dets = []
        for image_id in sorted(preds):
            for d in preds[image_id]:
                if d.class_label == cls:
                    dets.append((image_id, d))
        dets.sort(key=lambda t: (-t[1].score, t[0], t[1].local_id))

        matched: dict[str, set[int]] = {image_id: set() for image_id in gts}
        tp_flags = []
        for image_id, det in dets:
            wrap = (wrap_widths or {}).get(image_id)
            best_iou, best_j = 0.0, -1
            for j, g in enumerate(gt_by_image.get(image_id, [])):
                if j in matched.get(image_id, set()):
                    continue
                v = iou(det.box, g.box, wrap)
                if v > best_iou:
                    best_iou, best_j = v, j
            if best_j >= 0 and best_iou >= iou_threshold:
                matched.setdefault(image_id, set()).add(best_j)
                tp_flags.append(True)
            else:
                tp_flags.append(False)

        precision, recall = [], []
        tp = fp = 0
        for flag in tp_flags:
            tp += flag
            fp += not flag
            precision.append(tp / (tp + fp))
            recall.append(tp / n_gt if n_gt else 0.0)
        per_class[cls] = ClassAP(
            ap=_average_precision(precision, recall) if n_gt else 0.0,
            n_gt=n_gt, tp=tp, fp=fp, precision=precision, recall=recall,
        )
    scored = [c.ap for c in per_class.values() if c.n_gt > 0]
    return DetectionEval(
        mean_ap=sum(scored) / len(scored) if scored else 0.0, per_class=per_class
    )


@dataclass
class ReidEval:
    accuracy: float
    n_correct: int
    n_covisible: int


def reid_accuracy(
    pair_results: dict[tuple[str, str], MatchingResult],
    detections: dict[str, list[Detection]],
    dataset: SceneDataset,
    iou_threshold: float = 0.5,
) -> ReidEval:
    """Fraction of co-visible identity appearances matched correctly.

    For every evaluated image pair, an identity visible in both views counts
    toward the denominator; it counts as correct when some matched detection
    pair overlaps the identity's ground-truth box with IoU >= threshold in
    both views.
    """
    n_correct = n_covisible = 0
    for (a, b), result in sorted(pair_results.items()):
        det_a = {d.local_id: d for d in detections.get(a, [])}
        det_b = {d.local_id: d for d in detections.get(b, [])}
        wrap_a = dataset.images[a].pano.width_px
        wrap_b = dataset.images[b].pano.width_px
        for instance_id in sorted(dataset.identities):
            ident = dataset.identities[instance_id]
            by_image = dict(ident.appearances)
            if a not in by_image or b not in by_image:
                continue
            n_covisible += 1
            gt_a = dataset.images[a].ground_truth[by_image[a]]
            gt_b = dataset.images[b].ground_truth[by_image[b]]
            for p in result.pairs:
                da, db = det_a.get(p.det_x_local_id), det_b.get(p.det_y_local_id)
                if da is None or db is None:
                    continue
                if (
                    iou(da.box, gt_a.box, wrap_a) >= iou_threshold
                    and iou(db.box, gt_b.box, wrap_b) >= iou_threshold
                ):
                    n_correct += 1
                    break
    return ReidEval(
        accuracy=n_correct / n_covisible if n_covisible else 0.0,
        n_correct=n_correct,
        n_covisible=n_covisible,
    )


@dataclass
class MaeEval:
    mae_m: float
    coverage: float  # fraction of GT objects matched within the gate
    n_matched: int
    n_pred: int
    n_gt: int


def geolocalization_mae(
    pred_geos: list[GeoCoordinate],
    gt_geos: list[GeoCoordinate],
    gate_m: float = 20.0,
) -> MaeEval:
    """Mean haversine error over predictions matched to ground truth.

    Matching is greedy nearest-first one-to-one within gate_m meters;
    unmatched predictions are excluded and surface as lost coverage.

    Raises:
        EmptyInput: no predictions, no ground truth, or nothing within the gate.
    """
    if not pred_geos or not gt_geos:
        raise EmptyInput("geolocalization_mae needs predictions and ground truth")
    cands = []
    for i, p in enumerate(pred_geos):
        for j, g in enumerate(gt_geos):
            d = haversine_distance(p, g)
            if d <= gate_m:
                cands.append((d, i, j))
    cands.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    errors = []
    for d, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        errors.append(d)
    if not errors:
        raise EmptyInput(f"no prediction within {gate_m} m of any ground truth")
    return MaeEval(
        mae_m=sum(errors) / len(errors),
        coverage=len(errors) / len(gt_geos),
        n_matched=len(errors),
        n_pred=len(pred_geos),
        n_gt=len(gt_geos),
    )


@dataclass
class EvalReport:
    det_map: float | None = None
    reid: ReidEval | None = None
    mae: MaeEval | None = None
    mae_single: MaeEval | None = None
    per_class: dict[str, ClassAP] = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        out: dict = {}
        if self.det_map is not None:
            out["det_map"] = self.det_map
            out["per_class"] = {
                cls: {"ap": c.ap, "n_gt": c.n_gt, "tp": c.tp, "fp": c.fp,
                      "precision": c.precision, "recall": c.recall}
                for cls, c in self.per_class.items()
            }
        if self.reid is not None:
            out["reid_accuracy"] = self.reid.accuracy
            out["reid_counts"] = {"correct": self.reid.n_correct,
                                  "covisible": self.reid.n_covisible}
        if self.mae is not None:
            out["mae_m"] = self.mae.mae_m
            out["coverage"] = self.mae.coverage
            out["counts"] = {"matched": self.mae.n_matched, "pred": self.mae.n_pred,
                             "gt": self.mae.n_gt}
        if self.mae_single is not None:
            out["mae_single_view_m"] = self.mae_single.mae_m
            out["coverage_single_view"] = self.mae_single.coverage
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_jsonable(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        """Human-readable summary mirroring the detection/re-id and MAE tables."""
        lines = ["metric                      value", "-" * 34]
        if self.det_map is not None:
            lines.append(f"detection mAP @0.5          {self.det_map:.4f}")
        if self.reid is not None:
            lines.append(
                f"re-id accuracy              {self.reid.accuracy:.4f} "
                f"({self.reid.n_correct}/{self.reid.n_covisible})"
            )
        if self.mae_single is not None:
            lines.append(f"MAE single-view [m]         {self.mae_single.mae_m:.3f}")
        if self.mae is not None:
            lines.append(
                f"MAE pipeline [m]            {self.mae.mae_m:.3f} "
                f"(coverage {self.mae.coverage:.0%})"
            )
        return "\n".join(lines)
