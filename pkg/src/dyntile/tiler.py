"""Boundary grouping, dynamic tile construction, and fragment replacement.

Detections near an interior grid boundary are presumed fragments of
objects cut by that boundary. They are grouped per boundary segment (or
per interior corner), each group spawns one dynamic tile re-covering
the suspect region, and the group's members are replaced by whatever
the dynamic tile detects near that boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractError
from .geometry import (
    CENTRAL,
    DYNAMIC_CORNER,
    DYNAMIC_EDGE,
    NEAR_CORNER,
    NEAR_EDGE,
    VERTICAL,
    BoundaryRef,
    Box,
    Detection,
    GridConfig,
    TileSpec,
    classify_detection,
    dist_to_hline,
    dist_to_vline,
)

DEFAULT_PROPOSAL_SCORE_THRESH = 0.10


@dataclass(frozen=True)
class TilerConfig:
    # Fragments below this score never trigger a dynamic tile.
    proposal_score_thresh: float = DEFAULT_PROPOSAL_SCORE_THRESH
    # Along-edge padding, as a fraction of the member union span per side.
    pad_frac: float = 0.5
    # Minimum along-edge extent, as a fraction of the patch dimension.
    min_extent_frac: float = 0.25
    # Acceptance band half-width fraction; None reuses the grid's
    # edge_threshold_frac.
    band_frac: float | None = None


@dataclass(frozen=True)
class BoundaryGroup:
    """Suspected fragments sharing one interior boundary or corner."""

    members: tuple[Detection, ...]
    boundary: BoundaryRef | None = None
    corner: tuple[float, float] | None = None

    def __post_init__(self):
        if (self.boundary is None) == (self.corner is None):
            raise ContractError("group needs exactly one of boundary or corner")
        if not self.members:
            raise ContractError("group needs at least one member")

    @property
    def is_corner(self) -> bool:
        return self.corner is not None


@dataclass(frozen=True)
class DynamicTileProposal:
    tile: TileSpec
    origin_groups: tuple[BoundaryGroup, ...]


def group_by_boundary(
    dets: list[Detection],
    tiles: list[TileSpec],
    grid: GridConfig,
) -> tuple[list[Detection], list[BoundaryGroup]]:
    """Split global-frame base-tile detections into central ones and
    per-boundary fragment groups.

    Callers pass only detections above the proposal score threshold;
    every input lands in exactly one bucket.
    """
    tile_map = {t.tile_id: t for t in tiles}
    central: list[Detection] = []
    edge_groups: dict[BoundaryRef, list[Detection]] = {}
    corner_groups: dict[tuple[float, float], list[Detection]] = {}

    for det in dets:
        tile = tile_map.get(det.source)
        if tile is None:
            raise ContractError(f"detection sourced from unknown tile {det.source!r}")
        cls = classify_detection(det.box, tile, grid)
        if cls.kind == CENTRAL:
            central.append(det)
        elif cls.kind == NEAR_EDGE:
            edge_groups.setdefault(cls.boundary, []).append(det)
        else:
            corner_groups.setdefault(cls.corner, []).append(det)

    groups: list[BoundaryGroup] = []
    for ref in sorted(edge_groups, key=lambda b: (b.orientation, b.position, b.span)):
        groups.append(BoundaryGroup(members=tuple(edge_groups[ref]), boundary=ref))
    for corner in sorted(corner_groups):
        groups.append(BoundaryGroup(members=tuple(corner_groups[corner]), corner=corner))
    return central, groups


def _snap_rect(
    x0: float, y0: float, x1: float, y1: float, max_w: int, max_h: int, grid: GridConfig
) -> Box:
    """Integer pixel bounds, capped to patch dims, shifted inside the image."""
    ix0, iy0 = math.floor(x0), math.floor(y0)
    ix1, iy1 = math.ceil(x1), math.ceil(y1)
    if ix1 - ix0 > max_w:
        ix1 = ix0 + max_w
    if iy1 - iy0 > max_h:
        iy1 = iy0 + max_h
    if ix0 < 0:
        ix1 -= ix0
        ix0 = 0
    elif ix1 > grid.width:
        ix0 -= ix1 - grid.width
        ix1 = grid.width
    if iy0 < 0:
        iy1 -= iy0
        iy0 = 0
    elif iy1 > grid.height:
        iy0 -= iy1 - grid.height
        iy1 = grid.height
    return Box(float(ix0), float(iy0), float(ix1), float(iy1))


def _along_extent(lo: float, hi: float, cfg: TilerConfig, patch_dim: int, limit: int):
    """Pad the member union span, enforce the floor, clamp, shift in-image."""
    span = hi - lo
    if span <= 0.0:
        center = (lo + hi) / 2.0
        half = cfg.min_extent_frac * patch_dim / 2.0
        lo, hi = center - half, center + half
    else:
        lo -= cfg.pad_frac * span
        hi += cfg.pad_frac * span
    length = hi - lo
    floor_len = cfg.min_extent_frac * patch_dim
    if length < floor_len:
        center = (lo + hi) / 2.0
        lo, hi = center - floor_len / 2.0, center + floor_len / 2.0
        length = floor_len
    if length > patch_dim:
        center = (lo + hi) / 2.0
        lo, hi = center - patch_dim / 2.0, center + patch_dim / 2.0
    if lo < 0.0:
        hi -= lo
        lo = 0.0
    elif hi > limit:
        lo -= hi - limit
        hi = float(limit)
    return lo, hi


def propose_edge_tile(
    group: BoundaryGroup, grid: GridConfig, cfg: TilerConfig
) -> DynamicTileProposal:
    """Dynamic tile for an edge group: maximal symmetric reach across the
    boundary (half a patch per side), member-driven extent along it."""
    if group.boundary is None:
        raise ContractError("propose_edge_tile needs an edge group")
    ref = group.boundary
    pw, ph = grid.patch_width, grid.patch_height

    if ref.orientation == VERTICAL:
        lo = min(m.box.y_min for m in group.members)
        hi = max(m.box.y_max for m in group.members)
        a_lo, a_hi = _along_extent(lo, hi, cfg, ph, grid.height)
        rect = _snap_rect(
            ref.position - pw / 2.0, a_lo, ref.position + pw / 2.0, a_hi, pw, ph, grid
        )
        ident = f"edge_v{ref.position:g}_{a_lo:g}"
    else:
        lo = min(m.box.x_min for m in group.members)
        hi = max(m.box.x_max for m in group.members)
        a_lo, a_hi = _along_extent(lo, hi, cfg, pw, grid.width)
        rect = _snap_rect(
            a_lo, ref.position - ph / 2.0, a_hi, ref.position + ph / 2.0, pw, ph, grid
        )
        ident = f"edge_h{ref.position:g}_{a_lo:g}"

    tile = TileSpec(tile_id=f"dyn_{ident}", rect=rect, kind=DYNAMIC_EDGE)
    return DynamicTileProposal(tile=tile, origin_groups=(group,))


def propose_corner_tile(group: BoundaryGroup, grid: GridConfig) -> DynamicTileProposal:
    """Dynamic tile for a corner group: a full patch centered on the corner."""
    if group.corner is None:
        raise ContractError("propose_corner_tile needs a corner group")
    cx, cy = group.corner
    pw, ph = grid.patch_width, grid.patch_height
    rect = _snap_rect(cx - pw / 2.0, cy - ph / 2.0, cx + pw / 2.0, cy + ph / 2.0, pw, ph, grid)
    tile = TileSpec(tile_id=f"dyn_corner_{cx:g}_{cy:g}", rect=rect, kind=DYNAMIC_CORNER)
    return DynamicTileProposal(tile=tile, origin_groups=(group,))


def _near_origin(det: Detection, group: BoundaryGroup, band_x: float, band_y: float) -> bool:
    if group.boundary is not None:
        if group.boundary.orientation == VERTICAL:
            return dist_to_vline(det.box, group.boundary.position) <= band_x
        return dist_to_hline(det.box, group.boundary.position) <= band_y
    cx, cy = group.corner
    return dist_to_vline(det.box, cx) <= band_x and dist_to_hline(det.box, cy) <= band_y


def accept_dynamic_predictions(
    dyn_dets: list[Detection],
    proposal: DynamicTileProposal,
    grid: GridConfig,
    cfg: TilerConfig,
) -> list[Detection]:
    """Keep dynamic-tile detections that cross or sit within the
    acceptance band of any boundary that spawned the tile.

    Everything else inside the dynamic tile is a re-detection of
    territory owned by the base tiles and is dropped. The spawning
    groups' members are discarded by the pipeline regardless.
    """
    frac = cfg.band_frac if cfg.band_frac is not None else grid.edge_threshold_frac
    band_x = frac * grid.width
    band_y = frac * grid.height
    return [
        det
        for det in dyn_dets
        if any(_near_origin(det, g, band_x, band_y) for g in proposal.origin_groups)
    ]
