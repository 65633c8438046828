"""Axis-aligned boxes, tiling grids, and edge-proximity classification.

Coordinates are continuous pixel values; whether a box lives in the
global image frame or a tile-local frame is contextual and carried by
the owner. Pixel membership, where it matters (rendering, coverage
checks), uses the pixel-center convention: pixel (u, v) belongs to a
region iff its center (u + 0.5, v + 0.5) does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError, ContractError

VERTICAL = "vertical"
HORIZONTAL = "horizontal"

CENTRAL = "central"
NEAR_EDGE = "near_edge"
NEAR_CORNER = "near_corner"

BASE = "base"
DYNAMIC_EDGE = "dynamic_edge"
DYNAMIC_CORNER = "dynamic_corner"
FULL_IMAGE = "full_image"


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with strictly positive width and height."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not math.isfinite(v):
                raise ContractError(f"non-finite box coordinate: {v!r}")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ContractError(
                f"degenerate box [{self.x_min}, {self.y_min}, {self.x_max}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def translate(self, dx: float, dy: float) -> Box:
        return Box(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def intersection(self, other: Box) -> Box | None:
        x0 = max(self.x_min, other.x_min)
        y0 = max(self.y_min, other.y_min)
        x1 = min(self.x_max, other.x_max)
        y1 = min(self.y_max, other.y_max)
        if x0 >= x1 or y0 >= y1:
            return None
        return Box(x0, y0, x1, y1)

    def intersection_area(self, other: Box) -> float:
        iw = min(self.x_max, other.x_max) - max(self.x_min, other.x_min)
        ih = min(self.y_max, other.y_max) - max(self.y_min, other.y_min)
        if iw <= 0.0 or ih <= 0.0:
            return 0.0
        return iw * ih

    def union_box(self, other: Box) -> Box:
        """Smallest box containing both."""
        return Box(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def contains_box(self, other: Box, tol: float = 1e-9) -> bool:
        return (
            other.x_min >= self.x_min - tol
            and other.y_min >= self.y_min - tol
            and other.x_max <= self.x_max + tol
            and other.y_max <= self.y_max + tol
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 for identical."""
    inter = a.intersection_area(b)
    if inter <= 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def dist_to_vline(box: Box, x: float) -> float:
    """Distance from a box to the vertical line at ``x`` (0 if crossing)."""
    return max(0.0, x - box.x_max, box.x_min - x)


def dist_to_hline(box: Box, y: float) -> float:
    return max(0.0, y - box.y_max, box.y_min - y)


def box_to_xywh(box: Box) -> list[float]:
    return [box.x_min, box.y_min, box.width, box.height]


def box_from_xywh(xywh) -> Box:
    x, y, w, h = (float(v) for v in xywh)
    return Box(x, y, x + w, y + h)


@dataclass(frozen=True)
class Detection:
    """One detected object: box, category, confidence, producing tile."""

    box: Box
    category_id: int
    score: float
    source: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ContractError(f"score outside [0, 1]: {self.score}")
        if self.category_id < 0:
            raise ContractError(f"negative category id: {self.category_id}")


def detection_sort_key(det: Detection):
    """Deterministic ordering: score desc, then category, then coordinates."""
    return (-det.score, det.category_id) + det.box.as_tuple()


@dataclass(frozen=True)
class GridConfig:
    """Non-overlapping tiling grid over an image.

    ``edge_threshold_frac`` scales the full image dimensions to obtain
    the per-axis nearness thresholds used by classification: a vertical
    interior edge is "near" within ``edge_threshold_frac * width`` and a
    horizontal one within ``edge_threshold_frac * height``.
    """

    width: int
    height: int
    cols: int
    rows: int
    edge_threshold_frac: float = 0.02

    def __post_init__(self):
        if self.cols < 1 or self.rows < 1:
            raise ConfigError(f"grid needs at least 1x1 tiles, got {self.cols}x{self.rows}")
        if self.width < self.cols or self.height < self.rows:
            raise ConfigError(
                f"image {self.width}x{self.height} too small for {self.cols}x{self.rows} grid"
            )
        if not 0.0 < self.edge_threshold_frac < 0.5:
            raise ConfigError(
                f"edge_threshold_frac must be in (0, 0.5), got {self.edge_threshold_frac}"
            )

    @property
    def patch_width(self) -> int:
        return self.width // self.cols

    @property
    def patch_height(self) -> int:
        return self.height // self.rows

    @property
    def threshold_x(self) -> float:
        return self.edge_threshold_frac * self.width

    @property
    def threshold_y(self) -> float:
        return self.edge_threshold_frac * self.height

    def cut_xs(self) -> list[float]:
        """Interior vertical cut lines."""
        return [float(c * self.patch_width) for c in range(1, self.cols)]

    def cut_ys(self) -> list[float]:
        return [float(r * self.patch_height) for r in range(1, self.rows)]

    def interior_corners(self) -> list[tuple[float, float]]:
        return [(x, y) for x in self.cut_xs() for y in self.cut_ys()]


@dataclass(frozen=True)
class BoundaryRef:
    """A shared interior boundary segment between two adjacent patches."""

    orientation: str  # VERTICAL or HORIZONTAL
    position: float  # coordinate of the shared line
    span: tuple[float, float]  # extent along the line
    patches: tuple[tuple[int, int], tuple[int, int]]  # (row, col) of both sides


@dataclass(frozen=True)
class TileSpec:
    """A region of the source image submitted to the detector."""

    tile_id: str
    rect: Box
    kind: str  # BASE, DYNAMIC_EDGE, DYNAMIC_CORNER or FULL_IMAGE
    row: int | None = None
    col: int | None = None

    def with_id(self, tile_id: str) -> TileSpec:
        return replace(self, tile_id=tile_id)


@dataclass(frozen=True)
class EdgeClass:
    """Proximity classification of a detection within its base tile."""

    kind: str  # CENTRAL, NEAR_EDGE or NEAR_CORNER
    boundary: BoundaryRef | None = None
    corner: tuple[float, float] | None = None


def make_grid(cfg: GridConfig, id_prefix: str = "") -> list[TileSpec]:
    """Partition the image into rows x cols non-overlapping base tiles.

    Every tile is patch_width x patch_height except that the last column
    and row absorb the integer-division remainder, so the union covers
    the image exactly.
    """
    pw, ph = cfg.patch_width, cfg.patch_height
    tiles = []
    for row in range(cfg.rows):
        y0 = row * ph
        y1 = (row + 1) * ph if row < cfg.rows - 1 else cfg.height
        for col in range(cfg.cols):
            x0 = col * pw
            x1 = (col + 1) * pw if col < cfg.cols - 1 else cfg.width
            tiles.append(
                TileSpec(
                    tile_id=f"{id_prefix}base_r{row}_c{col}",
                    rect=Box(float(x0), float(y0), float(x1), float(y1)),
                    kind=BASE,
                    row=row,
                    col=col,
                )
            )
    return tiles


def classify_detection(det_box: Box, tile: TileSpec, cfg: GridConfig) -> EdgeClass:
    """Classify a global-frame box by its proximity to interior tile edges.

    Edges on the image border never count: an object touching the outer
    border cannot be a fragment of an off-image neighbor. A box near two
    parallel interior edges resolves to the closer one (ties toward the
    left/top edge). Near one vertical and one horizontal interior edge
    means near their meeting corner.
    """
    if tile.kind != BASE:
        raise ContractError(f"classification requires a base tile, got {tile.kind!r}")
    if tile.row is None or tile.col is None:
        raise ContractError(f"base tile {tile.tile_id!r} lacks grid position")

    r = tile.rect
    vertical: list[tuple[float, float, tuple, tuple]] = []
    if tile.col > 0:
        d = dist_to_vline(det_box, r.x_min)
        if d <= cfg.threshold_x:
            vertical.append((d, r.x_min, (tile.row, tile.col - 1), (tile.row, tile.col)))
    if tile.col < cfg.cols - 1:
        d = dist_to_vline(det_box, r.x_max)
        if d <= cfg.threshold_x:
            vertical.append((d, r.x_max, (tile.row, tile.col), (tile.row, tile.col + 1)))

    horizontal: list[tuple[float, float, tuple, tuple]] = []
    if tile.row > 0:
        d = dist_to_hline(det_box, r.y_min)
        if d <= cfg.threshold_y:
            horizontal.append((d, r.y_min, (tile.row - 1, tile.col), (tile.row, tile.col)))
    if tile.row < cfg.rows - 1:
        d = dist_to_hline(det_box, r.y_max)
        if d <= cfg.threshold_y:
            horizontal.append((d, r.y_max, (tile.row, tile.col), (tile.row + 1, tile.col)))

    near_v = min(vertical, key=lambda c: (c[0], c[1])) if vertical else None
    near_h = min(horizontal, key=lambda c: (c[0], c[1])) if horizontal else None

    if near_v is not None and near_h is not None:
        return EdgeClass(NEAR_CORNER, corner=(near_v[1], near_h[1]))
    if near_v is not None:
        ref = BoundaryRef(
            orientation=VERTICAL,
            position=near_v[1],
            span=(r.y_min, r.y_max),
            patches=(near_v[2], near_v[3]),
        )
        return EdgeClass(NEAR_EDGE, boundary=ref)
    if near_h is not None:
        ref = BoundaryRef(
            orientation=HORIZONTAL,
            position=near_h[1],
            span=(r.x_min, r.x_max),
            patches=(near_h[2], near_h[3]),
        )
        return EdgeClass(NEAR_EDGE, boundary=ref)
    return EdgeClass(CENTRAL)


_FRAME_TOL = 1e-6


def to_global(det: Detection, tile: TileSpec) -> Detection:
    """Translate a tile-local detection into the global image frame."""
    b = det.box
    if (
        b.x_min < -_FRAME_TOL
        or b.y_min < -_FRAME_TOL
        or b.x_max > tile.rect.width + _FRAME_TOL
        or b.y_max > tile.rect.height + _FRAME_TOL
    ):
        raise ContractError(
            f"local box {b.as_tuple()} outside tile {tile.tile_id!r} dims "
            f"({tile.rect.width}x{tile.rect.height})"
        )
    return replace(det, box=b.translate(tile.rect.x_min, tile.rect.y_min))


def to_local(det: Detection, tile: TileSpec) -> Detection:
    """Translate a global-frame detection into the tile's local frame."""
    if not tile.rect.contains_box(det.box, tol=_FRAME_TOL):
        raise ContractError(
            f"global box {det.box.as_tuple()} outside tile rect {tile.rect.as_tuple()}"
        )
    return replace(det, box=det.box.translate(-tile.rect.x_min, -tile.rect.y_min))
