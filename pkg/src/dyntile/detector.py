"""Detector backends behind one batch-inference contract.

A backend receives a batch of tile images and returns tile-local
detections per tile. Shipped backends:

* ``SimDetector`` — driven by synthetic scene ground truth; with all
  noise parameters at zero its output on a tile is exactly the ground
  truth clipped to that tile, which makes it the oracle the test and
  acceptance suites are built on.
* ``FileDetector`` — replays detections stored in a COCO-results JSON
  keyed by tile id.
* ``StdioDetector`` — drives an external process speaking a
  newline-delimited JSON protocol, for real models.
* ``TTADetector`` — horizontal-flip test-time augmentation around any
  inner backend (doubles forward passes).
* ``CountingDetector`` — transparent wrapper tallying forward passes.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import tempfile
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BackendError, ContractError, FormatError, ProtocolError
from .fusion import nms
from .geometry import Box, Detection, TileSpec, box_from_xywh, detection_sort_key
from .packing import CompositeCanvas
from .rng import SplitMix64, float_bits, mix64
from .scenegen import Scene

logger = logging.getLogger(__name__)

# Backends never emit detections scored below this; downstream stages
# apply their own thresholds.
EMIT_SCORE_FLOOR = 0.05

DEFAULT_MAX_DETS_PER_TILE = 300


@dataclass(frozen=True)
class RequestItem:
    """One tile image in a detection batch.

    Exactly one of ``tile`` or ``canvas`` is set. ``pixels`` carries the
    actual crop for backends that consume images; scene-driven backends
    use ``scene`` plus the tile rect (or the canvas placements) instead.
    ``hflip`` marks a horizontally mirrored crop: ``pixels`` (if any)
    are already flipped, and returned boxes are in mirrored coordinates.
    """

    item_id: str
    width: int
    height: int
    tile: TileSpec | None = None
    canvas: CompositeCanvas | None = None
    scene: Scene | None = None
    pixels: np.ndarray | None = None
    hflip: bool = False

    def __post_init__(self):
        if (self.tile is None) == (self.canvas is None):
            raise ContractError("request item needs exactly one of tile or canvas")


@dataclass(frozen=True)
class DetectRequest:
    items: tuple[RequestItem, ...]

    def __post_init__(self):
        if not self.items:
            raise ContractError("empty detection batch")
        ids = [it.item_id for it in self.items]
        if len(set(ids)) != len(ids):
            raise ContractError(f"duplicate tile ids in batch: {ids}")


@dataclass
class DetectResponse:
    """Tile-local detections per requested item id, each list sorted by
    descending score."""

    results: dict[str, list[Detection]]


def item_for_tile(
    tile: TileSpec, scene: Scene | None = None, pixels: np.ndarray | None = None
) -> RequestItem:
    return RequestItem(
        item_id=tile.tile_id,
        width=math.ceil(tile.rect.width),
        height=math.ceil(tile.rect.height),
        tile=tile,
        scene=scene,
        pixels=pixels,
    )


def item_for_canvas(
    canvas: CompositeCanvas, scene: Scene | None = None, pixels: np.ndarray | None = None
) -> RequestItem:
    return RequestItem(
        item_id=canvas.canvas_id,
        width=canvas.width,
        height=canvas.height,
        canvas=canvas,
        scene=scene,
        pixels=pixels,
    )


class DetectorBackend(ABC):
    """Batch inference contract. Instances are single-consumer: one
    in-flight detect() call at a time."""

    needs_pixels = False
    thread_safe = False

    @abstractmethod
    def detect(self, request: DetectRequest) -> DetectResponse:
        raise NotImplementedError

    def close(self) -> None:
        pass


def _finalize_tile_dets(dets: list[Detection], max_dets: int) -> list[Detection]:
    return sorted(dets, key=detection_sort_key)[:max_dets]


@dataclass(frozen=True)
class SimDetectorConfig:
    """Noise model for the simulated detector.

    Per-object randomness is seeded by (rng_seed, tile rect, object id),
    never by a sequential stream, so results are independent of batch
    composition and order.
    """

    loc_jitter_frac: float = 0.02
    score_gamma: float = 1.0
    score_noise: float = 0.05
    miss_prob: float = 0.0
    confuse_prob: float = 0.5
    confuse_visibility: float = 0.5
    min_visible_area_px: float = 4.0
    confusable: tuple[tuple[int, int], ...] = ()
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("miss_prob", "confuse_prob", "confuse_visibility"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ContractError(f"{name} must be in [0, 1], got {v}")
        if self.loc_jitter_frac < 0 or self.score_noise < 0:
            raise ContractError("noise amplitudes must be >= 0")

    @classmethod
    def noiseless(cls, rng_seed: int = 0) -> SimDetectorConfig:
        return cls(
            loc_jitter_frac=0.0,
            score_noise=0.0,
            miss_prob=0.0,
            confuse_prob=0.0,
            rng_seed=rng_seed,
        )

    def confusion_partner(self, category_id: int) -> int | None:
        for a, b in self.confusable:
            if category_id == a:
                return b
            if category_id == b:
                return a
        return None


def _object_rng(cfg: SimDetectorConfig, rect: Box, object_id: int, hflip: bool) -> SplitMix64:
    seed = mix64(
        cfg.rng_seed,
        float_bits(rect.x_min),
        float_bits(rect.y_min),
        float_bits(rect.x_max),
        float_bits(rect.y_max),
        object_id,
        int(hflip),
    )
    return SplitMix64(seed)


def sim_detect_tile(
    scene: Scene,
    rect: Box,
    cfg: SimDetectorConfig,
    source_id: str = "",
    hflip: bool = False,
) -> list[Detection]:
    """Simulate detection over one source-image region.

    Emits, per ground-truth object visible in the region (intersection
    area >= min_visible_area_px), the clipped box translated to the
    region-local frame, with jitter, score and confusion noise applied.
    ``hflip`` only salts the noise stream; mirroring of the output boxes
    is the caller's concern.
    """
    out = []
    for obj in scene.objects:
        clipped = obj.box.intersection(rect)
        if clipped is None or clipped.area < cfg.min_visible_area_px:
            continue
        visibility = clipped.area / obj.box.area
        rng = _object_rng(cfg, rect, obj.object_id, hflip)

        local = clipped.translate(-rect.x_min, -rect.y_min)
        if cfg.loc_jitter_frac > 0:
            w, h = local.width, local.height
            x0 = local.x_min + rng.normal() * cfg.loc_jitter_frac * w
            y0 = local.y_min + rng.normal() * cfg.loc_jitter_frac * h
            x1 = local.x_max + rng.normal() * cfg.loc_jitter_frac * w
            y1 = local.y_max + rng.normal() * cfg.loc_jitter_frac * h
            x0 = min(max(x0, 0.0), rect.width)
            x1 = min(max(x1, 0.0), rect.width)
            y0 = min(max(y0, 0.0), rect.height)
            y1 = min(max(y1, 0.0), rect.height)
            if x0 >= x1 or y0 >= y1:
                continue
            local = Box(x0, y0, x1, y1)

        score = visibility**cfg.score_gamma
        if cfg.score_noise > 0:
            score += rng.uniform(-cfg.score_noise, cfg.score_noise)
        score = min(max(score, 0.0), 1.0)
        if score < EMIT_SCORE_FLOOR:
            continue
        if cfg.miss_prob > 0 and rng.next_float() < cfg.miss_prob:
            continue

        category = obj.category_id
        partner = cfg.confusion_partner(category)
        if (
            partner is not None
            and visibility < cfg.confuse_visibility
            and cfg.confuse_prob > 0
            and rng.next_float() < cfg.confuse_prob
        ):
            category = partner

        out.append(Detection(box=local, category_id=category, score=score, source=source_id))
    return out


def _mirror_box(box: Box, width: float) -> Box:
    return Box(width - box.x_max, box.y_min, width - box.x_min, box.y_max)


class SimDetector(DetectorBackend):
    """Scene-driven simulated detector; bit-reproducible given a seed."""

    needs_pixels = False
    thread_safe = True  # pure function of (config, request)

    def __init__(self, cfg: SimDetectorConfig, max_dets_per_tile: int = DEFAULT_MAX_DETS_PER_TILE):
        self.cfg = cfg
        self.max_dets_per_tile = max_dets_per_tile

    def detect(self, request: DetectRequest) -> DetectResponse:
        results = {}
        for item in request.items:
            if item.scene is None:
                raise BackendError(
                    f"simulated detector needs scene ground truth for item {item.item_id!r}"
                )
            if item.tile is not None:
                dets = sim_detect_tile(
                    item.scene, item.tile.rect, self.cfg, item.item_id, item.hflip
                )
            else:
                dets = []
                for pl in item.canvas.placements:
                    for det in sim_detect_tile(item.scene, pl.src_rect, self.cfg, item.item_id, item.hflip):
                        dets.append(replace(det, box=det.box.translate(pl.dest_x, pl.dest_y)))
            if item.hflip:
                dets = [replace(d, box=_mirror_box(d.box, item.width)) for d in dets]
            results[item.item_id] = _finalize_tile_dets(dets, self.max_dets_per_tile)
        return DetectResponse(results=results)


class FileDetector(DetectorBackend):
    """Replays stored detections: a COCO-results JSON whose image_id
    field holds the tile id string."""

    needs_pixels = False
    thread_safe = True

    def __init__(self, path: str | Path, max_dets_per_tile: int = DEFAULT_MAX_DETS_PER_TILE):
        self.max_dets_per_tile = max_dets_per_tile
        try:
            entries = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read detector replay file {path}: {exc}") from exc
        if not isinstance(entries, list):
            raise FormatError("detector replay file must be a JSON array of results")
        self._by_tile: dict[str, list[Detection]] = {}
        for ent in entries:
            try:
                tile_id = str(ent["image_id"])
                det = Detection(
                    box=box_from_xywh(ent["bbox"]),
                    category_id=int(ent["category_id"]),
                    score=float(ent["score"]),
                )
            except (KeyError, TypeError, ValueError, ContractError) as exc:
                raise FormatError(f"bad replay entry {ent!r}: {exc}") from exc
            self._by_tile.setdefault(tile_id, []).append(det)

    def detect(self, request: DetectRequest) -> DetectResponse:
        results = {}
        for item in request.items:
            stored = self._by_tile.get(item.item_id, [])
            if not stored:
                logger.debug("replay file has no detections for tile %s", item.item_id)
            dets = [replace(d, source=item.item_id) for d in stored]
            results[item.item_id] = _finalize_tile_dets(dets, self.max_dets_per_tile)
        return DetectResponse(results=results)


class StdioDetector(DetectorBackend):
    """Client for an external detector process.

    Protocol, one JSON document per line, UTF-8:

        request:  {"request_id": <int>, "batch": [{"tile_id": <str>,
                   "png_path": <str>, "width": <int>, "height": <int>}]}
        response: {"request_id": <int>, "results": [{"tile_id": <str>,
                   "detections": [{"bbox": [x0, y0, x1, y1],
                   "category_id": <int>, "score": <float>}]}]}

    Responses may arrive out of order; they are matched on request_id.
    A line that fails to parse is a protocol error and aborts the batch.
    """

    needs_pixels = True
    thread_safe = False

    def __init__(self, command: list[str], workdir: str | Path | None = None):
        self._tmp = None
        if workdir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="dyntile_stdio_")
            workdir = self._tmp.name
        self.workdir = Path(workdir)
        self._next_request_id = 1
        self._pending: dict[int, dict] = {}
        try:
            self._proc = subprocess.Popen(
                command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise BackendError(f"cannot start detector process {command!r}: {exc}") from exc

    def _read_response(self, request_id: int) -> dict:
        if request_id in self._pending:
            return self._pending.pop(request_id)
        while True:
            line = self._proc.stdout.readline()
            if line == "":
                raise BackendError("detector process closed its stdout")
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                got = int(msg["request_id"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"malformed detector response line {line!r}: {exc}") from exc
            if got == request_id:
                return msg
            self._pending[got] = msg

    def detect(self, request: DetectRequest) -> DetectResponse:
        from PIL import Image

        request_id = self._next_request_id
        self._next_request_id += 1

        batch = []
        for idx, item in enumerate(request.items):
            if item.pixels is None:
                raise BackendError(
                    f"stdio detector needs pixel data for item {item.item_id!r}"
                )
            png_path = self.workdir / f"req{request_id:06d}_{idx:03d}.png"
            Image.fromarray(item.pixels).save(png_path)
            batch.append(
                {
                    "tile_id": item.item_id,
                    "png_path": str(png_path),
                    "width": item.width,
                    "height": item.height,
                }
            )
        payload = json.dumps({"request_id": request_id, "batch": batch})
        try:
            self._proc.stdin.write(payload + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BackendError(f"detector process is gone: {exc}") from exc

        msg = self._read_response(request_id)
        dims = {item.item_id: (item.width, item.height) for item in request.items}
        results = {item.item_id: [] for item in request.items}
        for entry in msg.get("results", []):
            try:
                tile_id = str(entry["tile_id"])
                if tile_id not in dims:
                    raise ProtocolError(f"response for unrequested tile {tile_id!r}")
                w, h = dims[tile_id]
                dets = []
                for d in entry["detections"]:
                    x0, y0, x1, y1 = (float(v) for v in d["bbox"])
                    box = Box(
                        min(max(x0, 0.0), w),
                        min(max(y0, 0.0), h),
                        min(max(x1, 0.0), w),
                        min(max(y1, 0.0), h),
                    )
                    score = min(max(float(d["score"]), 0.0), 1.0)
                    dets.append(
                        Detection(box=box, category_id=int(d["category_id"]), score=score,
                                  source=tile_id)
                    )
            except ProtocolError:
                raise
            except (KeyError, TypeError, ValueError, ContractError) as exc:
                raise ProtocolError(f"malformed result entry {entry!r}: {exc}") from exc
            results[tile_id] = _finalize_tile_dets(dets, DEFAULT_MAX_DETS_PER_TILE)
        return DetectResponse(results=results)

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._tmp is not None:
            self._tmp.cleanup()


_FLIP_SUFFIX = "~flip"


class TTADetector(DetectorBackend):
    """Horizontal-flip test-time augmentation around an inner backend.

    Each tile is detected on the original and the mirrored crop; the
    mirrored results are un-mirrored and both sets merged with
    class-aware NMS. Forward passes double.
    """

    def __init__(self, inner: DetectorBackend, nms_iou: float = 0.6):
        self.inner = inner
        self.nms_iou = nms_iou
        self.needs_pixels = inner.needs_pixels
        self.thread_safe = inner.thread_safe

    def detect(self, request: DetectRequest) -> DetectResponse:
        flipped = []
        for item in request.items:
            pixels = None if item.pixels is None else np.fliplr(item.pixels).copy()
            flipped.append(
                replace(item, item_id=item.item_id + _FLIP_SUFFIX, pixels=pixels, hflip=True)
            )
        inner_resp = self.inner.detect(DetectRequest(items=request.items + tuple(flipped)))

        results = {}
        for item in request.items:
            plain = inner_resp.results.get(item.item_id, [])
            mirrored = inner_resp.results.get(item.item_id + _FLIP_SUFFIX, [])
            restored = [
                replace(d, box=_mirror_box(d.box, item.width), source=item.item_id)
                for d in mirrored
            ]
            results[item.item_id] = nms(plain + restored, self.nms_iou, class_aware=True)
        return DetectResponse(results=results)

    def close(self) -> None:
        self.inner.close()


class CountingDetector(DetectorBackend):
    """Transparent wrapper counting tile images sent to the inner backend."""

    def __init__(self, inner: DetectorBackend):
        self.inner = inner
        self.needs_pixels = inner.needs_pixels
        self.thread_safe = inner.thread_safe
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0

    def detect(self, request: DetectRequest) -> DetectResponse:
        with self._lock:
            self._count += len(request.items)
        return self.inner.detect(request)

    def close(self) -> None:
        self.inner.close()
