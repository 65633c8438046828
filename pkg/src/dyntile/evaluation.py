"""COCO-protocol detection metrics.

Greedy score-ordered matching, 101-point interpolated average
precision, mAP at a single IoU threshold and averaged over the
0.50:0.05:0.95 ladder, plus size-split mAP with ignore semantics:
ground truth outside the size range is ignored, predictions matched to
ignored ground truth count as neither true nor false positives, and
unmatched predictions outside the range are ignored too.

Metrics over empty buckets (no ground truth) are reported as None, not
zero, so they cannot silently distort averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError
from .geometry import Box, box_from_xywh, iou

# Thresholds built with round() so that e.g. the 0.60 rung compares
# equal to an IoU computed as an exact ratio like 60/100.
DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))

AREA_SMALL_MAX = 32.0**2
AREA_MEDIUM_MAX = 96.0**2

# (lower bound inclusive, upper bound exclusive); None means unbounded.
AREA_RANGES = {
    "small": (0.0, AREA_SMALL_MAX),
    "medium": (AREA_SMALL_MAX, AREA_MEDIUM_MAX),
    "large": (AREA_MEDIUM_MAX, None),
}


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    recall_points: int = 101
    max_dets: int = 1000

    def __post_init__(self):
        if not self.iou_thresholds:
            raise ConfigError("need at least one IoU threshold")
        if list(self.iou_thresholds) != sorted(set(self.iou_thresholds)):
            raise ConfigError("iou_thresholds must be strictly increasing")
        if not all(0.0 < t < 1.0 for t in self.iou_thresholds):
            raise ConfigError("iou_thresholds must lie in (0, 1)")
        if self.max_dets < 1:
            raise ConfigError("max_dets must be >= 1")


@dataclass
class EvalResult:
    map_50: float | None
    map_50_95: float | None
    map_50_small: float | None
    map_50_medium: float | None
    map_50_large: float | None
    per_category: dict[int, dict[str, float | None]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "map_50": self.map_50,
            "map_50_95": self.map_50_95,
            "map_50_small": self.map_50_small,
            "map_50_medium": self.map_50_medium,
            "map_50_large": self.map_50_large,
            "per_category": {str(k): v for k, v in sorted(self.per_category.items())},
        }


@dataclass(frozen=True)
class GTBox:
    box: Box
    ignored: bool = False


@dataclass
class Matching:
    """Outcome of matching one image+category at one threshold."""

    pred_gt_index: list[int]  # index into gts, -1 for unmatched
    pred_ignored: list[bool]
    n_gt: int  # non-ignored ground truth count

    @property
    def tp_flags(self) -> list[bool]:
        return [g >= 0 and not ign for g, ign in zip(self.pred_gt_index, self.pred_ignored)]


def match_detections(
    pred_boxes: list[Box],
    gts: list[GTBox],
    iou_thresh: float,
    pred_ignorable: list[bool] | None = None,
) -> Matching:
    """Greedy matching for one image and category.

    ``pred_boxes`` must already be in descending score order. Each
    prediction claims the unmatched non-ignored ground truth with the
    highest IoU at or above the threshold; failing that, the best
    ignored one (the prediction then counts as ignored). An unmatched
    prediction is ignored rather than a false positive when its own
    ``pred_ignorable`` flag is set.
    """
    if pred_ignorable is None:
        pred_ignorable = [False] * len(pred_boxes)
    claimed = [False] * len(gts)
    pred_gt_index = []
    pred_ignored = []
    for pb, ignorable in zip(pred_boxes, pred_ignorable):
        best_real, best_real_iou = -1, 0.0
        best_ign, best_ign_iou = -1, 0.0
        for gi, gt in enumerate(gts):
            if claimed[gi]:
                continue
            overlap = iou(pb, gt.box)
            if overlap < iou_thresh:
                continue
            if gt.ignored:
                if overlap > best_ign_iou:
                    best_ign, best_ign_iou = gi, overlap
            else:
                if overlap > best_real_iou:
                    best_real, best_real_iou = gi, overlap
        if best_real >= 0:
            claimed[best_real] = True
            pred_gt_index.append(best_real)
            pred_ignored.append(False)
        elif best_ign >= 0:
            claimed[best_ign] = True
            pred_gt_index.append(best_ign)
            pred_ignored.append(True)
        else:
            pred_gt_index.append(-1)
            pred_ignored.append(ignorable)
    n_gt = sum(1 for gt in gts if not gt.ignored)
    return Matching(pred_gt_index=pred_gt_index, pred_ignored=pred_ignored, n_gt=n_gt)


def average_precision(
    scores: np.ndarray,
    tp_flags: np.ndarray,
    ignored_flags: np.ndarray,
    n_gt: int,
    recall_points: int = 101,
) -> float | None:
    """101-point interpolated AP from pooled per-prediction outcomes."""
    if n_gt == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    tp = tp_flags[order]
    ign = ignored_flags[order]
    tp = tp[~ign]
    if tp.size == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(~tp)
    recall = cum_tp / n_gt
    precision = cum_tp / (cum_tp + cum_fp)
    # Monotone non-increasing envelope from the right.
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    sample_points = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, sample_points, side="left")
    sampled = np.where(idx < recall.size, envelope[np.minimum(idx, recall.size - 1)], 0.0)
    return float(sampled.mean())


def _index_gt(gt_doc: dict) -> tuple[list[int], list[int], dict]:
    try:
        images = [int(img["id"]) for img in gt_doc["images"]]
        categories = sorted(int(c["id"]) for c in gt_doc["categories"])
        annotations = gt_doc["annotations"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad ground-truth document: {exc}") from exc
    by_img_cat: dict[tuple[int, int], list[Box]] = {}
    image_set = set(images)
    for ann in annotations:
        try:
            key = (int(ann["image_id"]), int(ann["category_id"]))
            box = box_from_xywh(ann["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad annotation {ann!r}: {exc}") from exc
        if key[0] not in image_set:
            raise FormatError(f"annotation references unknown image {key[0]}")
        by_img_cat.setdefault(key, []).append(box)
    return images, categories, by_img_cat


def _index_preds(predictions: list[dict], image_set: set[int], max_dets: int) -> dict:
    per_image: dict[int, list[tuple[float, int, Box]]] = {}
    for p in predictions:
        try:
            img = int(p["image_id"])
            cat = int(p["category_id"])
            score = float(p["score"])
            box = box_from_xywh(p["bbox"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad prediction {p!r}: {exc}") from exc
        if img not in image_set:
            continue
        per_image.setdefault(img, []).append((score, cat, box))
    # Enforce the per-image detection cap before any matching.
    by_img_cat: dict[tuple[int, int], list[tuple[float, Box]]] = {}
    for img, entries in per_image.items():
        entries.sort(key=lambda e: -e[0])
        for score, cat, box in entries[:max_dets]:
            by_img_cat.setdefault((img, cat), []).append((score, box))
    for entries2 in by_img_cat.values():
        entries2.sort(key=lambda e: -e[0])
    return by_img_cat


def _range_flags(area: float, bounds: tuple[float, float | None] | None) -> bool:
    if bounds is None:
        return False
    lo, hi = bounds
    if area < lo:
        return True
    return hi is not None and area >= hi


def _category_ap(
    images: list[int],
    category: int,
    gt_index: dict,
    pred_index: dict,
    iou_thresh: float,
    recall_points: int,
    area_bounds: tuple[float, float | None] | None = None,
) -> float | None:
    scores, tps, igns = [], [], []
    total_gt = 0
    for img in images:
        gt_boxes = gt_index.get((img, category), [])
        preds = pred_index.get((img, category), [])
        gts = [GTBox(box=b, ignored=_range_flags(b.area, area_bounds)) for b in gt_boxes]
        total_gt += sum(1 for g in gts if not g.ignored)
        if not preds:
            continue
        pred_boxes = [b for _, b in preds]
        ignorable = [_range_flags(b.area, area_bounds) for b in pred_boxes]
        matching = match_detections(pred_boxes, gts, iou_thresh, pred_ignorable=ignorable)
        scores.extend(s for s, _ in preds)
        tps.extend(matching.tp_flags)
        igns.extend(matching.pred_ignored)
    return average_precision(
        np.asarray(scores, dtype=float),
        np.asarray(tps, dtype=bool),
        np.asarray(igns, dtype=bool),
        total_gt,
        recall_points,
    )


def _mean(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return float(np.mean(defined))


def evaluate(predictions: list[dict], gt_doc: dict, cfg: EvalConfig | None = None) -> EvalResult:
    """Score COCO-results predictions against a COCO annotation document."""
    cfg = cfg or EvalConfig()
    images, categories, gt_index = _index_gt(gt_doc)
    pred_index = _index_preds(predictions, set(images), cfg.max_dets)

    if 0.5 not in cfg.iou_thresholds:
        raise ConfigError("the 0.5 threshold is required for the headline metrics")

    per_category: dict[int, dict[str, float | None]] = {}
    ap50_all, ap5095_all = [], []
    ap50_split: dict[str, list[float | None]] = {name: [] for name in AREA_RANGES}
    for cat in categories:
        per_thresh = [
            _category_ap(images, cat, gt_index, pred_index, t, cfg.recall_points)
            for t in cfg.iou_thresholds
        ]
        ap50 = per_thresh[cfg.iou_thresholds.index(0.5)]
        ap5095 = _mean(per_thresh)
        per_category[cat] = {"ap_50": ap50, "ap_50_95": ap5095}
        ap50_all.append(ap50)
        ap5095_all.append(ap5095)
        for name, bounds in AREA_RANGES.items():
            ap50_split[name].append(
                _category_ap(
                    images, cat, gt_index, pred_index, 0.5, cfg.recall_points, bounds
                )
            )

    return EvalResult(
        map_50=_mean(ap50_all),
        map_50_95=_mean(ap5095_all),
        map_50_small=_mean(ap50_split["small"]),
        map_50_medium=_mean(ap50_split["medium"]),
        map_50_large=_mean(ap50_split["large"]),
        per_category=per_category,
    )
