"""Deterministic synthetic scenes: ground truth for the simulated detector.

A scene is a set of axis-aligned rectangular objects with categories.
Placement is driven entirely by the pinned splitmix64 stream (see
``rng``), so a (config, seed) pair reproduces the same scene on every
platform. Objects are placed in three groups: a fraction straddling an
interior grid boundary, a fraction straddling an interior corner, and
the remainder strictly inside one base tile with enough margin to
classify as central.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FormatError, GenerationError
from .geometry import Box, GridConfig, box_from_xywh, box_to_xywh, iou
from .rng import SplitMix64, mix64

_MAX_ATTEMPTS = 500

# Solid fill colors per category, cycled.
PALETTE = [
    (214, 69, 65),
    (68, 189, 50),
    (74, 105, 226),
    (247, 183, 49),
    (142, 68, 173),
    (26, 188, 156),
    (230, 126, 34),
    (52, 73, 94),
    (241, 90, 180),
    (125, 206, 160),
]


@dataclass(frozen=True)
class SceneConfig:
    width: int = 1920
    height: int = 1080
    object_count: int = 20
    categories: tuple[int, ...] = (0, 1, 2)
    area_min: float = 100.0
    area_max: float = 40000.0
    aspect_min: float = 0.5
    aspect_max: float = 2.0
    boundary_bias: float = 0.0
    corner_bias: float = 0.0
    max_object_iou: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.object_count < 0:
            raise ConfigError("object_count must be >= 0")
        if not self.categories:
            raise ConfigError("categories must be non-empty")
        if not 0.0 < self.area_min <= self.area_max:
            raise ConfigError("need 0 < area_min <= area_max")
        if self.area_max > self.width * self.height:
            raise ConfigError("area_max exceeds the image area")
        if self.boundary_bias < 0 or self.corner_bias < 0:
            raise ConfigError("biases must be >= 0")
        if self.boundary_bias + self.corner_bias > 1.0:
            raise ConfigError("boundary_bias + corner_bias must be <= 1")


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    box: Box
    category_id: int


@dataclass(frozen=True)
class Scene:
    image_id: int
    width: int
    height: int
    objects: tuple[SceneObject, ...]
    seed: int = 0


def _sample_dims(rng: SplitMix64, cfg: SceneConfig) -> tuple[float, float]:
    # Log-uniform area, uniform aspect ratio (width / height).
    area = math.exp(rng.uniform(math.log(cfg.area_min), math.log(cfg.area_max)))
    aspect = rng.uniform(cfg.aspect_min, cfg.aspect_max)
    w = math.sqrt(area * aspect)
    h = math.sqrt(area / aspect)
    return w, h


def _fits_others(box: Box, placed: list[SceneObject], max_iou: float) -> bool:
    return all(iou(box, o.box) <= max_iou for o in placed)


def _interior_segments(grid: GridConfig) -> list[tuple[str, float, float, float]]:
    """All interior boundary segments as (orientation, position, lo, hi)."""
    segs = []
    ph, pw = grid.patch_height, grid.patch_width
    for x in grid.cut_xs():
        for r in range(grid.rows):
            y0 = r * ph
            y1 = (r + 1) * ph if r < grid.rows - 1 else grid.height
            segs.append(("v", x, float(y0), float(y1)))
    for y in grid.cut_ys():
        for c in range(grid.cols):
            x0 = c * pw
            x1 = (c + 1) * pw if c < grid.cols - 1 else grid.width
            segs.append(("h", y, float(x0), float(x1)))
    return segs


def generate_scene(cfg: SceneConfig, grid: GridConfig, image_id: int = 0) -> Scene:
    """Place objects deterministically for the given seed.

    Exactly ``floor(boundary_bias * n)`` objects get centers within 2 px
    of an interior boundary line, ``floor(corner_bias * n)`` within 2 px
    (per axis) of an interior corner; the rest are central with margin
    beyond the classification threshold. Pairwise object IoU stays at or
    below ``max_object_iou``.
    """
    if (grid.width, grid.height) != (cfg.width, cfg.height):
        raise ConfigError("scene and grid image dimensions disagree")
    rng = SplitMix64(mix64(cfg.seed, image_id))
    n = cfg.object_count
    n_edge = int(cfg.boundary_bias * n)
    n_corner = int(cfg.corner_bias * n)

    segments = _interior_segments(grid)
    corners = grid.interior_corners()
    if n_edge > 0 and not segments:
        raise GenerationError("boundary_bias > 0 needs a grid with interior boundaries")
    if n_corner > 0 and not corners:
        raise GenerationError("corner_bias > 0 needs a grid with interior corners")

    image_box = Box(0.0, 0.0, float(cfg.width), float(cfg.height))
    objects: list[SceneObject] = []

    def place(kind: str, object_id: int) -> SceneObject:
        for _ in range(_MAX_ATTEMPTS):
            w, h = _sample_dims(rng, cfg)
            if kind == "edge":
                orient, pos, lo, hi = rng.choice(segments)
                perp = pos + rng.uniform(-2.0, 2.0)
                if orient == "v":
                    a_lo, a_hi = max(lo, h / 2), min(hi, cfg.height - h / 2)
                    if a_lo >= a_hi:
                        continue
                    cx, cy = perp, rng.uniform(a_lo, a_hi)
                else:
                    a_lo, a_hi = max(lo, w / 2), min(hi, cfg.width - w / 2)
                    if a_lo >= a_hi:
                        continue
                    cx, cy = rng.uniform(a_lo, a_hi), perp
            elif kind == "corner":
                px, py = rng.choice(corners)
                cx = px + rng.uniform(-2.0, 2.0)
                cy = py + rng.uniform(-2.0, 2.0)
            else:
                tile_col = rng.randrange(grid.cols)
                tile_row = rng.randrange(grid.rows)
                pw, ph = grid.patch_width, grid.patch_height
                x0 = tile_col * pw
                x1 = (tile_col + 1) * pw if tile_col < grid.cols - 1 else grid.width
                y0 = tile_row * ph
                y1 = (tile_row + 1) * ph if tile_row < grid.rows - 1 else grid.height
                # Margin past the nearness threshold guarantees a central
                # classification for the noiseless clipped detection.
                mx = grid.threshold_x + 1.0
                my = grid.threshold_y + 1.0
                c_lo_x, c_hi_x = x0 + mx + w / 2, x1 - mx - w / 2
                c_lo_y, c_hi_y = y0 + my + h / 2, y1 - my - h / 2
                if c_lo_x >= c_hi_x or c_lo_y >= c_hi_y:
                    continue
                cx = rng.uniform(c_lo_x, c_hi_x)
                cy = rng.uniform(c_lo_y, c_hi_y)

            box = Box(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            if not image_box.contains_box(box):
                continue
            if not _fits_others(box, objects, cfg.max_object_iou):
                continue
            return SceneObject(object_id, box, cfg.categories[rng.randrange(len(cfg.categories))])
        raise GenerationError(
            f"could not place {kind} object {object_id} after {_MAX_ATTEMPTS} attempts"
        )

    oid = 0
    for _ in range(n_edge):
        objects.append(place("edge", oid))
        oid += 1
    for _ in range(n_corner):
        objects.append(place("corner", oid))
        oid += 1
    for _ in range(n - n_edge - n_corner):
        objects.append(place("central", oid))
        oid += 1

    return Scene(
        image_id=image_id,
        width=cfg.width,
        height=cfg.height,
        objects=tuple(objects),
        seed=cfg.seed,
    )


def generate_suite(cfg: SceneConfig, grid: GridConfig, count: int) -> list[Scene]:
    """Independent scenes with image ids 0..count-1 under one base seed."""
    return [generate_scene(cfg, grid, image_id=i) for i in range(count)]


def _pixel_slice(lo: float, hi: float, limit: int) -> tuple[int, int]:
    # Pixels whose centers fall in [lo, hi).
    a = max(0, math.ceil(lo - 0.5))
    b = min(limit, math.ceil(hi - 0.5))
    return a, b


def render_scene(scene: Scene) -> np.ndarray:
    """Rasterize the scene: category-colored rectangles on seeded noise."""
    bg_rng = np.random.default_rng(mix64(scene.seed, scene.image_id, 0xB0))
    img = bg_rng.integers(96, 160, size=(scene.height, scene.width, 3), dtype=np.uint8)
    for obj in scene.objects:
        x0, x1 = _pixel_slice(obj.box.x_min, obj.box.x_max, scene.width)
        y0, y1 = _pixel_slice(obj.box.y_min, obj.box.y_max, scene.height)
        if x0 < x1 and y0 < y1:
            img[y0:y1, x0:x1] = PALETTE[obj.category_id % len(PALETTE)]
    return img


def suite_to_coco(scenes: list[Scene]) -> dict:
    """Export scenes as a COCO-style annotation document."""
    categories = sorted({o.category_id for s in scenes for o in s.objects})
    doc = {
        "images": [
            {
                "id": s.image_id,
                "width": s.width,
                "height": s.height,
                "file_name": f"scene_{s.image_id:06d}.png",
                "seed": s.seed,
            }
            for s in scenes
        ],
        "annotations": [],
        "categories": [{"id": c, "name": f"category_{c}"} for c in categories],
    }
    ann_id = 1
    for s in scenes:
        for o in s.objects:
            doc["annotations"].append(
                {
                    "id": ann_id,
                    "image_id": s.image_id,
                    "category_id": o.category_id,
                    "bbox": box_to_xywh(o.box),
                    "area": o.box.area,
                    "iscrowd": 0,
                }
            )
            ann_id += 1
    return doc


def suite_from_coco(doc: dict) -> list[Scene]:
    """Rebuild scenes from a COCO annotation document."""
    try:
        images = doc["images"]
        annotations = doc["annotations"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"annotation document missing field: {exc}") from exc

    by_image: dict[int, list[SceneObject]] = {img["id"]: [] for img in images}
    for ann in annotations:
        try:
            img_id = ann["image_id"]
            box = box_from_xywh(ann["bbox"])
            cat = int(ann["category_id"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad annotation entry {ann!r}: {exc}") from exc
        if img_id not in by_image:
            raise FormatError(f"annotation references unknown image id {img_id}")
        by_image[img_id].append(SceneObject(len(by_image[img_id]), box, cat))

    scenes = []
    for img in images:
        try:
            scenes.append(
                Scene(
                    image_id=int(img["id"]),
                    width=int(img["width"]),
                    height=int(img["height"]),
                    objects=tuple(by_image[img["id"]]),
                    seed=int(img.get("seed", 0)),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad image entry {img!r}: {exc}") from exc
    return scenes
