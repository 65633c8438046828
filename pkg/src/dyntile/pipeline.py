"""Strategy orchestration, timing, and forward-pass accounting.

Selectable per-image strategies:

* ``full-image``  — one detector pass over the whole image.
* ``fixed-grid``  — non-overlapping grid passes merged by global NMS.
* ``fixed-overlap:F`` — overlapping grid at overlap fraction F (stride
  (1 - F) * patch, last row/column shifted flush to the image edge).
* ``dynamic``     — non-overlapping grid, then on-demand dynamic tiles
  repairing suspected fragments; options ``fi`` (add a full-image pass)
  and ``minimizer`` (pack dynamic tiles into composite canvases).

``tta`` can be appended to any of them and doubles forward passes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .detector import (
    CountingDetector,
    DetectorBackend,
    DetectRequest,
    TTADetector,
    item_for_canvas,
    item_for_tile,
)
from .errors import BackendError, ConfigError, PipelineError
from .fusion import FusionConfig, fuse
from .geometry import (
    BASE,
    FULL_IMAGE,
    Box,
    Detection,
    GridConfig,
    TileSpec,
    box_to_xywh,
    detection_sort_key,
    make_grid,
    to_global,
)
from .packing import MinimizerConfig, dedupe_proposals, pack, render_composites, remap_composite_detections
from .scenegen import Scene
from .tiler import (
    TilerConfig,
    accept_dynamic_predictions,
    group_by_boundary,
    propose_corner_tile,
    propose_edge_tile,
)

logger = logging.getLogger(__name__)

FULL_IMAGE_ONLY = "full_image"
FIXED_GRID = "fixed_grid"
FIXED_OVERLAP = "fixed_overlap"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class Strategy:
    kind: str
    overlap_frac: float = 0.25
    use_fi: bool = False
    use_minimizer: bool = False
    tta: bool = False

    def __post_init__(self):
        if self.kind not in (FULL_IMAGE_ONLY, FIXED_GRID, FIXED_OVERLAP, DYNAMIC):
            raise ConfigError(f"unknown strategy kind {self.kind!r}")
        if not 0.0 <= self.overlap_frac < 0.5:
            raise ConfigError(f"overlap_frac must be in [0, 0.5), got {self.overlap_frac}")
        if (self.use_fi or self.use_minimizer) and self.kind != DYNAMIC:
            raise ConfigError("fi and minimizer options apply to the dynamic strategy only")

    @staticmethod
    def parse(spec: str) -> Strategy:
        """Parse e.g. 'dynamic,fi,minimizer,tta' or 'fixed-overlap:0.25'."""
        parts = [p.strip().lower().replace("-", "_") for p in spec.split(",") if p.strip()]
        if not parts:
            raise ConfigError("empty strategy spec")
        head, *opts = parts
        overlap = 0.25
        if head.startswith("fixed_overlap"):
            head, sep, arg = head.partition(":")
            if sep:
                try:
                    overlap = float(arg)
                except ValueError as exc:
                    raise ConfigError(f"bad overlap fraction {arg!r}") from exc
        kind = {
            "full_image": FULL_IMAGE_ONLY,
            "fi_only": FULL_IMAGE_ONLY,
            "fixed_grid": FIXED_GRID,
            "fixed_overlap": FIXED_OVERLAP,
            "dynamic": DYNAMIC,
        }.get(head)
        if kind is None:
            raise ConfigError(f"unknown strategy {head!r}")
        use_fi = use_min = tta = False
        for opt in opts:
            if opt == "fi":
                use_fi = True
            elif opt == "minimizer":
                use_min = True
            elif opt == "tta":
                tta = True
            else:
                raise ConfigError(f"unknown strategy option {opt!r}")
        return Strategy(kind=kind, overlap_frac=overlap, use_fi=use_fi,
                        use_minimizer=use_min, tta=tta)

    def label(self) -> str:
        head = self.kind.replace("_", "-")
        if self.kind == FIXED_OVERLAP:
            head = f"{head}:{self.overlap_frac:g}"
        opts = [o for o, on in (("fi", self.use_fi), ("minimizer", self.use_minimizer),
                                ("tta", self.tta)) if on]
        return ",".join([head] + opts)


@dataclass
class RunStats:
    image_id: int
    time_s: float = 0.0
    forward_passes: int = 0
    dynamic_tile_count: int = 0
    canvas_count: int = 0
    dynamic_tile_rects: list[tuple[float, float, float, float]] = field(default_factory=list)
    dropped_in_gaps: int = 0
    failed: bool = False
    error: str = ""

    def to_json_dict(self, include_times: bool = True) -> dict:
        d = {
            "image_id": self.image_id,
            "forward_passes": self.forward_passes,
            "dynamic_tiles": self.dynamic_tile_count,
            "canvases": self.canvas_count,
            "dynamic_tile_rects": [list(r) for r in self.dynamic_tile_rects],
            "failed": self.failed,
        }
        if self.error:
            d["error"] = self.error
        if include_times:
            d["time_s"] = self.time_s
        return d


def _full_image_tile(grid: GridConfig, prefix: str) -> TileSpec:
    return TileSpec(
        tile_id=f"{prefix}full",
        rect=Box(0.0, 0.0, float(grid.width), float(grid.height)),
        kind=FULL_IMAGE,
    )


def _overlap_positions(image_dim: int, patch_dim: int, stride: float) -> list[int]:
    """Window origins covering [0, image_dim]; the last sits flush."""
    positions = []
    pos = 0.0
    while pos + patch_dim < image_dim:
        positions.append(int(round(pos)))
        pos += stride
    flush = image_dim - patch_dim
    if not positions or positions[-1] != flush:
        positions.append(flush)
    return positions


def make_overlap_grid(cfg: GridConfig, overlap_frac: float, id_prefix: str = "") -> list[TileSpec]:
    pw, ph = cfg.patch_width, cfg.patch_height
    xs = _overlap_positions(cfg.width, pw, (1.0 - overlap_frac) * pw)
    ys = _overlap_positions(cfg.height, ph, (1.0 - overlap_frac) * ph)
    tiles = []
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            tiles.append(
                TileSpec(
                    tile_id=f"{id_prefix}ov_r{r}_c{c}",
                    rect=Box(float(x), float(y), float(x + pw), float(y + ph)),
                    kind=BASE,
                    row=r,
                    col=c,
                )
            )
    return tiles


def _crop(image: np.ndarray | None, rect: Box) -> np.ndarray | None:
    if image is None:
        return None
    return image[int(rect.y_min) : int(rect.y_max), int(rect.x_min) : int(rect.x_max)]


def _detect_tiles(backend, tiles, scene, image) -> dict[str, list[Detection]]:
    items = tuple(item_for_tile(t, scene=scene, pixels=_crop(image, t.rect)) for t in tiles)
    return backend.detect(DetectRequest(items=items)).results


def run_image(
    image: np.ndarray | None,
    scene: Scene | None,
    strategy: Strategy,
    grid_cfg: GridConfig,
    fusion_cfg: FusionConfig,
    backend: DetectorBackend,
    *,
    tiler_cfg: TilerConfig | None = None,
    minimizer_cfg: MinimizerConfig | None = None,
    image_id: int = 0,
) -> tuple[list[Detection], RunStats]:
    """Run one strategy over one image; wall time excludes image decode."""
    tiler_cfg = tiler_cfg or TilerConfig()
    minimizer_cfg = minimizer_cfg or MinimizerConfig()
    if backend.needs_pixels and image is None:
        raise BackendError("backend requires pixel data but no image was provided")

    stats = RunStats(image_id=image_id)
    counter = CountingDetector(backend)
    eff: DetectorBackend = counter
    if strategy.tta:
        eff = TTADetector(counter, nms_iou=fusion_cfg.nms_iou)
    prefix = f"img{image_id}:"

    started = time.perf_counter()
    if strategy.kind == FULL_IMAGE_ONLY:
        tile = _full_image_tile(grid_cfg, prefix)
        results = _detect_tiles(eff, [tile], scene, image)
        dets = [to_global(d, tile) for d in results[tile.tile_id]]
        final = fuse(dets, [], None, fusion_cfg, (grid_cfg.width, grid_cfg.height))
    elif strategy.kind in (FIXED_GRID, FIXED_OVERLAP):
        if strategy.kind == FIXED_GRID:
            tiles = make_grid(grid_cfg, prefix)
        else:
            tiles = make_overlap_grid(grid_cfg, strategy.overlap_frac, prefix)
        results = _detect_tiles(eff, tiles, scene, image)
        dets = [to_global(d, t) for t in tiles for d in results[t.tile_id]]
        final = fuse(dets, [], None, fusion_cfg, (grid_cfg.width, grid_cfg.height))
    else:
        final = _run_dynamic(
            eff, image, scene, strategy, grid_cfg, fusion_cfg, tiler_cfg, minimizer_cfg,
            prefix, stats,
        )
    stats.time_s = time.perf_counter() - started
    stats.forward_passes = counter.count
    final = sorted(final, key=detection_sort_key)
    return final, stats


def _run_dynamic(
    eff: DetectorBackend,
    image: np.ndarray | None,
    scene: Scene | None,
    strategy: Strategy,
    grid_cfg: GridConfig,
    fusion_cfg: FusionConfig,
    tiler_cfg: TilerConfig,
    minimizer_cfg: MinimizerConfig,
    prefix: str,
    stats: RunStats,
) -> list[Detection]:
    base_tiles = make_grid(grid_cfg, prefix)
    results = _detect_tiles(eff, base_tiles, scene, image)
    base_dets = [to_global(d, t) for t in base_tiles for d in results[t.tile_id]]

    # Fragments below the proposal threshold never enter grouping; they
    # stay in the pipeline like central detections and the final NMS
    # removes whatever the dynamic tiles re-detect on top of them.
    strong = [d for d in base_dets if d.score >= tiler_cfg.proposal_score_thresh]
    weak = [d for d in base_dets if d.score < tiler_cfg.proposal_score_thresh]
    central, groups = group_by_boundary(strong, base_tiles, grid_cfg)

    proposals = [
        propose_corner_tile(g, grid_cfg) if g.is_corner else propose_edge_tile(g, grid_cfg, tiler_cfg)
        for g in groups
    ]
    proposals = dedupe_proposals(
        proposals, grid_cfg.patch_width, grid_cfg.patch_height, minimizer_cfg.dedupe_iou
    )
    proposals = [
        replace(p, tile=p.tile.with_id(f"{prefix}dyn_{i:03d}")) for i, p in enumerate(proposals)
    ]
    stats.dynamic_tile_count = len(proposals)
    stats.dynamic_tile_rects = [p.tile.rect.as_tuple() for p in proposals]

    items = []
    canvases = None
    if proposals:
        if strategy.use_minimizer:
            canvases = pack(
                proposals,
                grid_cfg.patch_width,
                grid_cfg.patch_height,
                gap_px=minimizer_cfg.gap_px,
                canvas_id_prefix=prefix,
                fill_value=minimizer_cfg.fill_value,
            )
            stats.canvas_count = len(canvases)
            rendered = render_composites(canvases, image) if image is not None else [None] * len(canvases)
            items.extend(
                item_for_canvas(c, scene=scene, pixels=px) for c, px in zip(canvases, rendered)
            )
        else:
            items.extend(
                item_for_tile(p.tile, scene=scene, pixels=_crop(image, p.tile.rect))
                for p in proposals
            )
    fi_tile = None
    if strategy.use_fi:
        fi_tile = _full_image_tile(grid_cfg, prefix)
        items.append(item_for_tile(fi_tile, scene=scene, pixels=image))

    dyn_by_tile: dict[str, list[Detection]] = {p.tile.tile_id: [] for p in proposals}
    fi_dets: list[Detection] | None = [] if strategy.use_fi else None
    if items:
        second = eff.detect(DetectRequest(items=tuple(items))).results
        if canvases is not None:
            diagnostics: dict = {}
            for canvas in canvases:
                remapped = remap_composite_detections(
                    second[canvas.canvas_id],
                    canvas,
                    containment_frac=minimizer_cfg.containment_frac,
                    diagnostics=diagnostics,
                )
                for det in remapped:
                    dyn_by_tile[det.source].append(det)
            stats.dropped_in_gaps = diagnostics.get("dropped_fill", 0)
        else:
            for p in proposals:
                dyn_by_tile[p.tile.tile_id] = [
                    to_global(d, p.tile) for d in second[p.tile.tile_id]
                ]
        if fi_tile is not None:
            fi_dets = [to_global(d, fi_tile) for d in second[fi_tile.tile_id]]

    accepted = []
    for p in proposals:
        accepted.extend(
            accept_dynamic_predictions(dyn_by_tile[p.tile.tile_id], p, grid_cfg, tiler_cfg)
        )

    return fuse(central + weak, accepted, fi_dets, fusion_cfg,
                (grid_cfg.width, grid_cfg.height))


@dataclass
class DatasetEntry:
    image_id: int
    scene: Scene | None = None
    image: np.ndarray | None = None


@dataclass
class RunReport:
    strategy: str
    config: dict
    per_image: list[RunStats]
    detections: dict[int, list[Detection]]
    t_avg: float
    t_std: float
    total_passes: int

    def to_json_dict(self, include_times: bool = True) -> dict:
        aggregate = {"total_passes": self.total_passes}
        if include_times:
            aggregate["t_avg"] = self.t_avg
            aggregate["t_std"] = self.t_std
        return {
            "strategy": self.strategy,
            "config": self.config,
            "per_image": [s.to_json_dict(include_times) for s in self.per_image],
            "aggregate": aggregate,
        }

    def detections_to_coco(self) -> list[dict]:
        out = []
        for image_id in sorted(self.detections):
            for det in self.detections[image_id]:
                out.append(
                    {
                        "image_id": image_id,
                        "category_id": det.category_id,
                        "bbox": box_to_xywh(det.box),
                        "score": det.score,
                        "source": det.source,
                    }
                )
        return out


def run_dataset(
    entries: list[DatasetEntry],
    strategy: Strategy,
    grid_cfg: GridConfig,
    fusion_cfg: FusionConfig,
    backend: DetectorBackend,
    *,
    tiler_cfg: TilerConfig | None = None,
    minimizer_cfg: MinimizerConfig | None = None,
    jobs: int = 1,
    config_snapshot: dict | None = None,
) -> RunReport:
    """Run a strategy over a dataset, aggregating stats and detections.

    A failed image is recorded in the report and skipped; the run only
    errors out if every image fails. Timing aggregates use the mean and
    the population standard deviation over successful images.
    """
    if not entries:
        raise PipelineError("empty dataset")
    if jobs > 1 and not backend.thread_safe:
        logger.warning("backend is not thread safe; forcing jobs=1")
        jobs = 1

    def work(entry: DatasetEntry) -> tuple[int, list[Detection], RunStats]:
        try:
            dets, stats = run_image(
                entry.image,
                entry.scene,
                strategy,
                grid_cfg,
                fusion_cfg,
                backend,
                tiler_cfg=tiler_cfg,
                minimizer_cfg=minimizer_cfg,
                image_id=entry.image_id,
            )
            return entry.image_id, dets, stats
        except BackendError as exc:
            logger.error("image %s failed: %s", entry.image_id, exc)
            return entry.image_id, [], RunStats(
                image_id=entry.image_id, failed=True, error=str(exc)
            )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, entries))
    else:
        outcomes = [work(e) for e in entries]
    outcomes.sort(key=lambda o: o[0])

    per_image = [stats for _, _, stats in outcomes]
    detections = {img: dets for img, dets, stats in outcomes if not stats.failed}
    ok = [s for s in per_image if not s.failed]
    if not ok:
        raise PipelineError("all images failed")
    times = np.array([s.time_s for s in ok])
    return RunReport(
        strategy=strategy.label(),
        config=config_snapshot or {},
        per_image=per_image,
        detections=detections,
        t_avg=float(times.mean()),
        t_std=float(times.std()),  # population standard deviation
        total_passes=int(sum(s.forward_passes for s in ok)),
    )


def write_json(path, payload: dict | list) -> None:
    """Canonical JSON writer: sorted keys, stable float formatting."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
