"""The multi-task training objective as pure numeric functions.

These score an external training stack: softmax log loss for classification,
smooth-L1 for box regression (applied to corner coordinates), a projected-box
variant driven by identity correspondence, a contrastive appearance loss, and
an RMSE geo loss. Analytic gradients are exposed where tests check them by
finite differences.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict

import numpy as np

from .data import BoundingBox, GroundTruthBox
from .errors import EmptyInput, IndexOutOfRange, LengthMismatch
from .geo import GeoCoordinate, haversine_distance
from .matching import filter_identified, match_boxes_iou


@dataclass
class LossConfig:
    alpha: float = 1.0  # weight of the two localization terms
    margin: float = 1.0  # contrastive margin

    def __post_init__(self):
        if self.alpha <= 0 or self.margin <= 0:
            raise ValueError("alpha and margin must be > 0")


@dataclass
class LossBreakdown:
    conf: float
    loc: float
    loc_proj: float
    cont: float
    rmse: float
    total: float
    n_matched: int

    def to_jsonable(self) -> dict:
        return asdict(self)


def softmax_log_loss(logits, true_class: int) -> float:
    """-log softmax(logits)[true_class], max-subtracted for stability."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise ValueError("logits must be a vector of >= 2 classes")
    if not 0 <= true_class < z.shape[0]:
        raise IndexOutOfRange(f"class {true_class} outside 0..{z.shape[0] - 1}")
    shifted = z - z.max()
    return float(np.log(np.sum(np.exp(shifted))) - shifted[true_class])


def softmax_log_loss_grad(logits, true_class: int) -> np.ndarray:
    """d loss / d logits = softmax(logits) - onehot(true_class)."""
    z = np.asarray(logits, dtype=np.float64)
    if not 0 <= true_class < z.shape[0]:
        raise IndexOutOfRange(f"class {true_class} outside 0..{z.shape[0] - 1}")
    e = np.exp(z - z.max())
    p = e / e.sum()
    p[true_class] -= 1.0
    return p


def smooth_l1(pred, target) -> float:
    """Sum over coordinates of the Huber-style smooth-L1 penalty."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise LengthMismatch(f"shapes {p.shape} vs {t.shape}")
    d = np.abs(p - t)
    return float(np.sum(np.where(d < 1.0, 0.5 * d * d, d - 0.5)))


def contrastive_loss(f1, f2, same: bool, margin: float = 1.0) -> float:
    """Hadsell-form contrastive loss on an embedding pair.

    same pairs are pulled together (0.5 d^2); different pairs are pushed
    beyond the margin (0.5 max(0, margin - d)^2).
    """
    a = np.asarray(f1, dtype=np.float64)
    b = np.asarray(f2, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(f"shapes {a.shape} vs {b.shape}")
    d = float(np.linalg.norm(a - b))
    if same:
        return 0.5 * d * d
    return 0.5 * max(0.0, margin - d) ** 2


def contrastive_loss_grad(f1, f2, same: bool, margin: float = 1.0):
    """Analytic gradients (dL/df1, dL/df2); undefined at d = 0 for negatives."""
    a = np.asarray(f1, dtype=np.float64)
    b = np.asarray(f2, dtype=np.float64)
    diff = a - b
    d = float(np.linalg.norm(diff))
    if same:
        return diff, -diff
    if d >= margin or d == 0.0:
        return np.zeros_like(a), np.zeros_like(b)
    g = -(margin - d) * diff / d
    return g, -g


def rmse_loss(pred_geo: list[GeoCoordinate], gt_geo: list[GeoCoordinate]) -> float:
    """Root mean squared haversine distance, meters."""
    if len(pred_geo) != len(gt_geo):
        raise LengthMismatch(f"{len(pred_geo)} predictions vs {len(gt_geo)} targets")
    if not pred_geo:
        raise EmptyInput("no geo pairs")
    sq = [haversine_distance(p, g) ** 2 for p, g in zip(pred_geo, gt_geo)]
    return math.sqrt(sum(sq) / len(sq))


def projected_loc_loss(
    pred_boxes: list[BoundingBox],
    projected_boxes: list[BoundingBox],
    gt: list[GroundTruthBox],
    gt_other: list[GroundTruthBox],
) -> float:
    """Smooth-L1 between projected predictions and the partner view's boxes.

    Both ground-truth lists are reduced to identified boxes; predictions are
    matched to this view's identities by IoU, and each matched prediction's
    projection is regressed against the same identity's box in the other
    view. Returns 0 when nothing matches.
    """
    f_g = filter_identified(gt)
    f_g_other = filter_identified(gt_other)
    if not f_g or not f_g_other:
        return 0.0
    by_id = {g.instance_id: g for g in f_g_other}
    total = 0.0
    for pred_idx, gt_idx in match_boxes_iou(pred_boxes, f_g):
        other = by_id.get(f_g[gt_idx].instance_id)
        if other is None:
            continue  # identity not visible in the partner view
        total += smooth_l1(projected_boxes[pred_idx].as_list(), other.box.as_list())
    return total


def combined_loss(
    class_terms: list[tuple[list, int]] | None = None,
    loc_terms: list[tuple[list, list]] | None = None,
    proj_terms: tuple[list, list, list, list] | None = None,
    contrastive_terms: list[tuple[list, list, bool]] | None = None,
    geo_terms: tuple[list, list] | None = None,
    n_matched: int = 0,
    cfg: LossConfig | None = None,
) -> LossBreakdown:
    """Assemble the full multi-task objective.

    total = (conf + alpha * (loc + loc_proj) + cont + rmse) / n_matched.
    n_matched = 0 yields total 0 with a warning rather than a division error.
    """
    cfg = cfg or LossConfig()
    conf = sum(softmax_log_loss(z, c) for z, c in (class_terms or []))
    loc = sum(smooth_l1(p, t) for p, t in (loc_terms or []))
    loc_proj = projected_loc_loss(*proj_terms) if proj_terms else 0.0
    cont = sum(contrastive_loss(a, b, s, cfg.margin) for a, b, s in (contrastive_terms or []))
    rmse = rmse_loss(*geo_terms) if geo_terms and geo_terms[0] else 0.0
    if n_matched <= 0:
        warnings.warn("combined_loss with no matched boxes; total defined as 0")
        total = 0.0
        n = 0
    else:
        n = n_matched
        total = (conf + cfg.alpha * (loc + loc_proj) + cont + rmse) / n
    return LossBreakdown(
        conf=conf, loc=loc, loc_proj=loc_proj, cont=cont, rmse=rmse,
        total=total, n_matched=n,
    )
