"""Tile minimizer: dedupe dynamic tiles and pack them into shared canvases.

Packing uses first-fit-decreasing shelf placement: tiles sorted by
height open horizontal shelves left-to-right; a new shelf opens when a
shelf runs out of width, a new canvas when a canvas runs out of height.
Placements are separated by a configurable pixel gap so a detector
cannot stitch objects together across unrelated crops; no gap is
required against canvas borders.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError
from .geometry import Box, Detection, iou
from .tiler import DynamicTileProposal

logger = logging.getLogger(__name__)

DEFAULT_GAP_PX = 8
DEFAULT_FILL_VALUE = 128
DEFAULT_DEDUPE_IOU = 0.8
DEFAULT_CONTAINMENT_FRAC = 0.9


@dataclass(frozen=True)
class MinimizerConfig:
    dedupe_iou: float = DEFAULT_DEDUPE_IOU
    gap_px: int = DEFAULT_GAP_PX
    containment_frac: float = DEFAULT_CONTAINMENT_FRAC
    fill_value: int = DEFAULT_FILL_VALUE


@dataclass(frozen=True)
class Placement:
    """One dynamic tile blitted into a composite canvas."""

    tile_id: str
    dest_x: int
    dest_y: int
    src_rect: Box  # global-frame rect of the packed tile

    @property
    def dest_box(self) -> Box:
        return Box(
            float(self.dest_x),
            float(self.dest_y),
            float(self.dest_x) + self.src_rect.width,
            float(self.dest_y) + self.src_rect.height,
        )


@dataclass(frozen=True)
class CompositeCanvas:
    canvas_id: str
    width: int
    height: int
    placements: tuple[Placement, ...]
    fill_value: int = DEFAULT_FILL_VALUE


def _rect_key(p: DynamicTileProposal):
    return p.tile.rect.as_tuple()


def dedupe_proposals(
    proposals: list[DynamicTileProposal],
    canvas_width: int,
    canvas_height: int,
    dedupe_iou: float = DEFAULT_DEDUPE_IOU,
) -> list[DynamicTileProposal]:
    """Collapse duplicate and near-duplicate dynamic tile proposals.

    Identical rects always merge. Rects with IoU above ``dedupe_iou``
    merge into their bounding union only if the union still fits a
    canvas; origin groups concatenate either way. Output is sorted by
    rect coordinates so downstream ids are stable.
    """
    work = sorted(proposals, key=_rect_key)
    merged = True
    while merged:
        merged = False
        for i in range(len(work)):
            for j in range(i + 1, len(work)):
                a, b = work[i], work[j]
                ra, rb = a.tile.rect, b.tile.rect
                if ra == rb:
                    union = ra
                elif iou(ra, rb) > dedupe_iou:
                    union = ra.union_box(rb)
                    if union.width > canvas_width or union.height > canvas_height:
                        continue
                else:
                    continue
                combined = DynamicTileProposal(
                    tile=replace(a.tile, rect=union),
                    origin_groups=a.origin_groups + b.origin_groups,
                )
                work = [p for k, p in enumerate(work) if k not in (i, j)]
                work.append(combined)
                work.sort(key=_rect_key)
                merged = True
                break
            if merged:
                break
    return work


def pack(
    proposals: list[DynamicTileProposal],
    canvas_width: int,
    canvas_height: int,
    gap_px: int = DEFAULT_GAP_PX,
    canvas_id_prefix: str = "",
    fill_value: int = DEFAULT_FILL_VALUE,
) -> list[CompositeCanvas]:
    """Shelf-pack proposals into the fewest composite canvases."""
    for p in proposals:
        w = math.ceil(p.tile.rect.width)
        h = math.ceil(p.tile.rect.height)
        if w > canvas_width or h > canvas_height:
            raise ContractError(
                f"proposal {p.tile.tile_id!r} ({w}x{h}) exceeds canvas "
                f"{canvas_width}x{canvas_height}"
            )
    order = sorted(
        proposals,
        key=lambda p: (-p.tile.rect.height, -p.tile.rect.width) + p.tile.rect.as_tuple(),
    )

    # Shelf state: (canvas index, y, shelf height, x cursor).
    shelves: list[list] = []
    canvases: list[list[Placement]] = []
    next_shelf_y: list[int] = []

    for p in order:
        w = math.ceil(p.tile.rect.width)
        h = math.ceil(p.tile.rect.height)
        placed = False
        for shelf in shelves:
            if h <= shelf[2] and shelf[3] + w <= canvas_width:
                canvases[shelf[0]].append(Placement(p.tile.tile_id, shelf[3], shelf[1], p.tile.rect))
                shelf[3] += w + gap_px
                placed = True
                break
        if placed:
            continue
        for ci in range(len(canvases)):
            if next_shelf_y[ci] + h <= canvas_height:
                y = next_shelf_y[ci]
                canvases[ci].append(Placement(p.tile.tile_id, 0, y, p.tile.rect))
                shelves.append([ci, y, h, w + gap_px])
                next_shelf_y[ci] = y + h + gap_px
                placed = True
                break
        if not placed:
            canvases.append([Placement(p.tile.tile_id, 0, 0, p.tile.rect)])
            shelves.append([len(canvases) - 1, 0, h, w + gap_px])
            next_shelf_y.append(h + gap_px)

    return [
        CompositeCanvas(
            canvas_id=f"{canvas_id_prefix}canvas_{i:03d}",
            width=canvas_width,
            height=canvas_height,
            placements=tuple(pls),
            fill_value=fill_value,
        )
        for i, pls in enumerate(canvases)
    ]


def render_composites(canvases: list[CompositeCanvas], source_image: np.ndarray) -> list[np.ndarray]:
    """Blit each canvas's crops from the source image; fill the rest."""
    out = []
    src_h, src_w = source_image.shape[:2]
    for canvas in canvases:
        shape = (canvas.height, canvas.width) + source_image.shape[2:]
        img = np.full(shape, canvas.fill_value, dtype=source_image.dtype)
        for pl in canvas.placements:
            x0, y0 = int(pl.src_rect.x_min), int(pl.src_rect.y_min)
            x1, y1 = int(pl.src_rect.x_max), int(pl.src_rect.y_max)
            if x0 < 0 or y0 < 0 or x1 > src_w or y1 > src_h:
                raise ContractError(
                    f"placement {pl.tile_id!r} crop {pl.src_rect.as_tuple()} "
                    f"outside source {src_w}x{src_h}"
                )
            img[pl.dest_y : pl.dest_y + (y1 - y0), pl.dest_x : pl.dest_x + (x1 - x0)] = (
                source_image[y0:y1, x0:x1]
            )
        out.append(img)
    return out


def remap_composite_detections(
    dets: list[Detection],
    canvas: CompositeCanvas,
    containment_frac: float = DEFAULT_CONTAINMENT_FRAC,
    diagnostics: dict | None = None,
) -> list[Detection]:
    """Map canvas-local detections back to the global frame.

    Each detection is assigned to the placement containing its center;
    detections centered in fill area, or with less than
    ``containment_frac`` of their area inside the assigned placement,
    are spurious packing artifacts and get dropped. Survivors are
    clamped to the placement's global rect and re-sourced to the packed
    tile's id.
    """
    kept = []
    dropped_fill = 0
    dropped_straddle = 0
    for det in dets:
        cx, cy = det.box.center
        owner = None
        for pl in canvas.placements:
            if pl.dest_box.contains_point(cx, cy):
                owner = pl
                break
        if owner is None:
            dropped_fill += 1
            continue
        if det.box.intersection_area(owner.dest_box) / det.box.area < containment_frac:
            dropped_straddle += 1
            continue
        moved = det.box.translate(
            owner.src_rect.x_min - owner.dest_x, owner.src_rect.y_min - owner.dest_y
        )
        clamped = moved.intersection(owner.src_rect)
        if clamped is None:
            dropped_straddle += 1
            continue
        kept.append(replace(det, box=clamped, source=owner.tile_id))
    if dropped_fill or dropped_straddle:
        logger.debug(
            "canvas %s: dropped %d fill-area and %d straddling detections",
            canvas.canvas_id,
            dropped_fill,
            dropped_straddle,
        )
    if diagnostics is not None:
        diagnostics["dropped_fill"] = diagnostics.get("dropped_fill", 0) + dropped_fill
        diagnostics["dropped_straddle"] = (
            diagnostics.get("dropped_straddle", 0) + dropped_straddle
        )
    return kept
