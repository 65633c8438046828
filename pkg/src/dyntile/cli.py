"""Command-line interface: run, bench, eval, render."""

from __future__ import annotations

import argparse
import json
import logging
import os
import shlex
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .detector import DetectorBackend, FileDetector, SimDetector, StdioDetector
from .errors import ConfigError, DynTileError, FormatError
from .evaluation import EvalConfig, evaluate
from .geometry import box_from_xywh, make_grid
from .pipeline import DatasetEntry, RunReport, Strategy, run_dataset, write_json
from .scenegen import Scene, generate_suite, render_scene, suite_from_coco, suite_to_coco

logger = logging.getLogger(__name__)


def _setup_logging() -> None:
    level = os.environ.get("DYNTILE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_json(path: str | Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path} is not valid JSON: {exc}") from exc


def _make_backend(args, cfg: RunConfig) -> DetectorBackend:
    if args.detector == "sim":
        return SimDetector(cfg.sim)
    if args.detector == "file":
        if not args.detector_file:
            raise ConfigError("--detector file requires --detector-file")
        return FileDetector(args.detector_file)
    if args.detector == "stdio":
        if not args.detector_cmd:
            raise ConfigError("--detector stdio requires --detector-cmd")
        return StdioDetector(shlex.split(args.detector_cmd))
    raise ConfigError(f"unknown detector {args.detector!r}")


def _load_entries(args, cfg: RunConfig, need_pixels: bool) -> tuple[list[DatasetEntry], dict | None]:
    """Dataset entries plus the ground-truth document, when one exists."""
    if args.scenes:
        gt_doc = _load_json(args.scenes)
        scenes = suite_from_coco(gt_doc)
        entries = []
        for scene in scenes:
            if (scene.width, scene.height) != (cfg.grid.width, cfg.grid.height):
                raise ConfigError(
                    f"scene {scene.image_id} is {scene.width}x{scene.height} but the "
                    f"grid expects {cfg.grid.width}x{cfg.grid.height}"
                )
            image = render_scene(scene) if need_pixels else None
            entries.append(DatasetEntry(image_id=scene.image_id, scene=scene, image=image))
        return entries, gt_doc

    from PIL import Image

    if args.detector == "sim":
        raise ConfigError("the simulated detector needs --scenes ground truth, not --images")
    image_dir = Path(args.images)
    paths = sorted(image_dir.glob("*.png")) + sorted(image_dir.glob("*.jpg"))
    if not paths:
        raise ConfigError(f"no .png or .jpg images under {image_dir}")
    entries = []
    for idx, path in enumerate(paths):
        try:
            image = np.asarray(Image.open(path).convert("RGB"))
        except OSError as exc:
            raise ConfigError(f"unreadable image {path}: {exc}") from exc
        entries.append(DatasetEntry(image_id=idx, image=image))
    return entries, None


def _summary_text(report: RunReport) -> str:
    lines = [
        f"strategy: {report.strategy}",
        f"{'image':>8} {'time_s':>10} {'passes':>8} {'dyn':>5} {'canvas':>7}",
    ]
    for s in report.per_image:
        mark = "  FAILED" if s.failed else ""
        lines.append(
            f"{s.image_id:>8} {s.time_s:>10.4f} {s.forward_passes:>8} "
            f"{s.dynamic_tile_count:>5} {s.canvas_count:>7}{mark}"
        )
    lines.append(
        f"aggregate: t_avg={report.t_avg:.4f}s t_std={report.t_std:.4f}s "
        f"total_passes={report.total_passes}"
    )
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    strategy = Strategy.parse(args.strategy)
    backend = _make_backend(args, cfg)
    entries, _ = _load_entries(args, cfg, backend.needs_pixels)

    try:
        report = run_dataset(
            entries,
            strategy,
            cfg.grid,
            cfg.fusion,
            backend,
            tiler_cfg=cfg.tiler,
            minimizer_cfg=cfg.minimizer,
            jobs=args.jobs,
            config_snapshot={"strategy": strategy.label()},
        )
    finally:
        backend.close()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "detections.json", report.detections_to_coco())
    write_json(out / "report.json", report.to_json_dict())
    (out / "summary.txt").write_text(_summary_text(report))
    (out / "config.txt").write_text(cfg.to_text() + f"strategy = {strategy.label()}\n")
    print(f"wrote detections and report for {len(entries)} images to {out}")
    return 0


def _metric(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def cmd_bench(args) -> int:
    cfg = load_config(args.suite)
    specs = [s for chunk in args.strategies.split(";") for s in [chunk.strip()] if s]
    if not specs:
        raise ConfigError("no strategies given")
    strategies = [Strategy.parse(s) for s in specs]

    grid = cfg.grid
    scenes = generate_suite(cfg.scene_cfg(), grid, cfg.suite_count)
    entries = [DatasetEntry(image_id=s.image_id, scene=s) for s in scenes]
    gt_doc = suite_to_coco(scenes)
    eval_cfg = cfg.eval

    rows = []
    reports: dict[str, RunReport] = {}
    backend = SimDetector(cfg.sim)
    for strategy in strategies:
        report = run_dataset(
            entries,
            strategy,
            grid,
            cfg.fusion,
            backend,
            tiler_cfg=cfg.tiler,
            minimizer_cfg=cfg.minimizer,
            jobs=args.jobs,
            config_snapshot={"strategy": strategy.label()},
        )
        result = evaluate(report.detections_to_coco(), gt_doc, eval_cfg)
        reports[strategy.label()] = report
        rows.append(
            {
                "strategy": strategy.label(),
                "t_avg": report.t_avg,
                "t_std": report.t_std,
                "total_passes": report.total_passes,
                "mean_passes": report.total_passes / len(entries),
                "map_50": result.map_50,
                "map_50_95": result.map_50_95,
                "map_50_small": result.map_50_small,
                "map_50_medium": result.map_50_medium,
                "map_50_large": result.map_50_large,
            }
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "gt.json", gt_doc)
    for label, report in reports.items():
        safe = label.replace(",", "+").replace(":", "")
        write_json(out / f"detections_{safe}.json", report.detections_to_coco())
        write_json(out / f"report_{safe}.json", report.to_json_dict())

    bench_doc = {"suite_count": len(entries), "rows": rows}
    write_json(out / "bench.json", bench_doc)

    header = (
        f"{'strategy':<32} {'t_avg':>8} {'t_std':>8} {'passes':>8} {'mAP@.5':>8} "
        f"{'mAP@.5:.95':>11} {'small':>8} {'medium':>8} {'large':>8}"
    )
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['strategy']:<32} {row['t_avg']:>8.4f} {row['t_std']:>8.4f} "
            f"{row['total_passes']:>8} {_metric(row['map_50']):>8} "
            f"{_metric(row['map_50_95']):>11} {_metric(row['map_50_small']):>8} "
            f"{_metric(row['map_50_medium']):>8} {_metric(row['map_50_large']):>8}"
        )
    table = "\n".join(lines) + "\n"
    (out / "bench.txt").write_text(table)
    (out / "config.txt").write_text(cfg.to_text())
    print(table, end="")
    return 0


def cmd_eval(args) -> int:
    preds = _load_json(args.preds)
    gt_doc = _load_json(args.gt)
    result = evaluate(preds, gt_doc, EvalConfig())
    write_json(args.out, result.to_json_dict())
    print(
        f"map_50={_metric(result.map_50)} map_50_95={_metric(result.map_50_95)} "
        f"small={_metric(result.map_50_small)} medium={_metric(result.map_50_medium)} "
        f"large={_metric(result.map_50_large)}"
    )
    return 0


def cmd_render(args) -> int:
    from PIL import Image, ImageDraw

    cfg = load_config(args.config)
    image = Image.open(args.image).convert("RGB")
    draw = ImageDraw.Draw(image)

    if args.show_tiles:
        for tile in make_grid(cfg.grid):
            draw.rectangle(tile.rect.as_tuple(), outline=(255, 255, 0), width=1)

    if args.report:
        report = _load_json(args.report)
        for entry in report.get("per_image", []):
            if entry.get("image_id") == args.image_id:
                for rect in entry.get("dynamic_tile_rects", []):
                    draw.rectangle(tuple(rect), outline=(80, 160, 255), width=2)

    if args.gt:
        gt_doc = _load_json(args.gt)
        for ann in gt_doc.get("annotations", []):
            if ann.get("image_id") == args.image_id:
                draw.rectangle(box_from_xywh(ann["bbox"]).as_tuple(),
                               outline=(0, 255, 0), width=2)

    if args.dets:
        for det in _load_json(args.dets):
            if det.get("image_id") == args.image_id:
                draw.rectangle(box_from_xywh(det["bbox"]).as_tuple(),
                               outline=(255, 0, 0), width=2)

    image.save(args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dyntile",
        description="Adaptive tiling inference pipeline and synthetic benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one strategy over scenes or an image directory")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenes", help="scene suite (COCO annotation JSON)")
    src.add_argument("--images", help="directory of .png/.jpg images")
    run.add_argument("--detector", choices=("sim", "file", "stdio"), default="sim")
    run.add_argument("--detector-file", help="COCO results JSON for the file detector")
    run.add_argument("--detector-cmd", help="command line for the stdio detector")
    run.add_argument("--strategy", required=True,
                     help="e.g. dynamic,fi,minimizer or fixed-overlap:0.25 or fixed-grid")
    run.add_argument("--config", help="flat key-value config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", help="compare strategies on one generated suite")
    bench.add_argument("--suite", help="suite config file (scene.*, suite.count, ...)")
    bench.add_argument("--strategies", required=True,
                       help="semicolon-separated strategy specs")
    bench.add_argument("--out", required=True)
    bench.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    bench.set_defaults(func=cmd_bench)

    ev = sub.add_parser("eval", help="score predictions against ground truth")
    ev.add_argument("--preds", required=True, help="COCO results JSON")
    ev.add_argument("--gt", required=True, help="COCO annotation JSON")
    ev.add_argument("--out", required=True, help="metrics JSON output path")
    ev.set_defaults(func=cmd_eval)

    render = sub.add_parser("render", help="draw detections and ground truth on an image")
    render.add_argument("--image", required=True)
    render.add_argument("--image-id", type=int, default=0)
    render.add_argument("--dets", help="COCO results JSON")
    render.add_argument("--gt", help="COCO annotation JSON")
    render.add_argument("--report", help="run report JSON (for dynamic tile outlines)")
    render.add_argument("--config", help="config file (grid for --show-tiles)")
    render.add_argument("--show-tiles", action="store_true")
    render.add_argument("--out", required=True)
    render.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DynTileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
