"""Final assembly: large-small size filtering, class-aware NMS, capping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Detection, detection_sort_key

FULL_IMAGE_STREAM = "full_image"
TILE_STREAM = "tile"


@dataclass(frozen=True)
class FusionConfig:
    # Fraction of the image area defining the large-small threshold.
    alpha: float = 0.01
    nms_iou: float = 0.6
    class_aware: bool = True
    max_dets: int = 1000
    final_score_thresh: float = 0.05

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.max_dets < 1:
            raise ConfigError(f"max_dets must be >= 1, got {self.max_dets}")


def size_filter(dets: list[Detection], stream: str, theta: float) -> list[Detection]:
    """Arbitrate by box area: the full-image stream keeps only boxes
    larger than ``theta``, tile streams only boxes smaller. Boxes of
    exactly ``theta`` fall through both filters."""
    if stream == FULL_IMAGE_STREAM:
        return [d for d in dets if d.box.area > theta]
    if stream == TILE_STREAM:
        return [d for d in dets if d.box.area < theta]
    raise ConfigError(f"unknown stream {stream!r}")


def nms(dets: list[Detection], iou_thresh: float, class_aware: bool = True) -> list[Detection]:
    """Greedy non-maximum suppression, deterministic under score ties.

    Candidates are ranked by descending score (ties: smaller category,
    then lexicographic box coordinates); each kept detection suppresses
    remaining ones overlapping it beyond ``iou_thresh`` (same category
    only when ``class_aware``).
    """
    if len(dets) <= 1:
        return list(dets)

    order = sorted(range(len(dets)), key=lambda i: detection_sort_key(dets[i]))
    x0 = np.array([dets[i].box.x_min for i in order])
    y0 = np.array([dets[i].box.y_min for i in order])
    x1 = np.array([dets[i].box.x_max for i in order])
    y1 = np.array([dets[i].box.y_max for i in order])
    cats = np.array([dets[i].category_id for i in order])
    areas = (x1 - x0) * (y1 - y0)

    alive = np.ones(len(order), dtype=bool)
    kept: list[int] = []
    for i in range(len(order)):
        if not alive[i]:
            continue
        kept.append(order[i])
        rest = np.flatnonzero(alive[i + 1 :]) + i + 1
        if rest.size == 0:
            continue
        iw = np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest])
        ih = np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest])
        inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
        overlap = inter / (areas[i] + areas[rest] - inter)
        suppress = overlap > iou_thresh
        if class_aware:
            suppress &= cats[rest] == cats[i]
        alive[rest[suppress]] = False
    return [dets[i] for i in kept]


def fuse(
    central_dets: list[Detection],
    dynamic_dets: list[Detection],
    full_image_dets: list[Detection] | None,
    cfg: FusionConfig,
    image_dims: tuple[int, int],
) -> list[Detection]:
    """Merge the detection streams into the final per-image set.

    The large-small size filter only makes sense as an arbitration rule
    between the tile streams and a full-image stream, so it is applied
    only when ``full_image_dets`` is present (pass None when the
    strategy runs without full-image inference).
    """
    width, height = image_dims
    tile_dets = list(central_dets) + list(dynamic_dets)
    if full_image_dets is None:
        pool = tile_dets
    else:
        theta = cfg.alpha * width * height
        pool = size_filter(tile_dets, TILE_STREAM, theta) + size_filter(
            full_image_dets, FULL_IMAGE_STREAM, theta
        )
    pool = [d for d in pool if d.score >= cfg.final_score_thresh]
    survivors = nms(pool, cfg.nms_iou, cfg.class_aware)
    return survivors[: cfg.max_dets]
