"""Flat key-value run configuration.

Config files hold one ``section.key = value`` pair per line (``#``
comments allowed). Unknown keys are rejected; values are validated by
the target dataclasses at load time. The same flat format is emitted
next to every run's outputs as the fully-resolved snapshot, so any run
can be reproduced from its output directory alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .detector import SimDetectorConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .fusion import FusionConfig
from .geometry import GridConfig
from .packing import MinimizerConfig
from .scenegen import SceneConfig
from .tiler import TilerConfig


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "1", "yes", "on"):
        return True
    if t in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"not an integer list: {text!r}") from exc


def _parse_pairs(text: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = part.split(":")
            pairs.append((int(a), int(b)))
        except ValueError as exc:
            raise ConfigError(f"not an id:id pair: {part!r}") from exc
    return tuple(pairs)


def _parse_opt_float(text: str) -> float | None:
    if text.strip().lower() in ("none", ""):
        return None
    return float(text)


# section -> field -> parser
_SCHEMA = {
    "grid": {
        "width": int,
        "height": int,
        "cols": int,
        "rows": int,
        "edge_threshold_frac": float,
    },
    "fusion": {
        "alpha": float,
        "nms_iou": float,
        "class_aware": _parse_bool,
        "max_dets": int,
        "final_score_thresh": float,
    },
    "tiler": {
        "proposal_score_thresh": float,
        "pad_frac": float,
        "min_extent_frac": float,
        "band_frac": _parse_opt_float,
    },
    "minimizer": {
        "dedupe_iou": float,
        "gap_px": int,
        "containment_frac": float,
        "fill_value": int,
    },
    "sim": {
        "loc_jitter_frac": float,
        "score_gamma": float,
        "score_noise": float,
        "miss_prob": float,
        "confuse_prob": float,
        "confuse_visibility": float,
        "min_visible_area_px": float,
        "confusable": _parse_pairs,
        "rng_seed": int,
    },
    "scene": {
        "object_count": int,
        "categories": _parse_int_tuple,
        "area_min": float,
        "area_max": float,
        "aspect_min": float,
        "aspect_max": float,
        "boundary_bias": float,
        "corner_bias": float,
        "max_object_iou": float,
        "seed": int,
    },
    "suite": {
        "count": int,
    },
    "eval": {
        "max_dets": int,
    },
}


@dataclass
class RunConfig:
    grid: GridConfig = field(default_factory=lambda: GridConfig(1920, 1080, 3, 2))
    fusion: FusionConfig = field(default_factory=FusionConfig)
    tiler: TilerConfig = field(default_factory=TilerConfig)
    minimizer: MinimizerConfig = field(default_factory=MinimizerConfig)
    sim: SimDetectorConfig = field(default_factory=SimDetectorConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    suite_count: int = 20

    def scene_cfg(self) -> SceneConfig:
        """Scene config with dimensions taken from the grid."""
        return replace(self.scene, width=self.grid.width, height=self.grid.height)

    def apply(self, overrides: dict[str, str]) -> RunConfig:
        """Return a copy with flat ``section.key`` overrides applied."""
        staged: dict[str, dict] = {}
        for key, raw in overrides.items():
            section, _, name = key.partition(".")
            if section == "suite" and name == "count":
                staged.setdefault("suite", {})["count"] = raw
                continue
            schema = _SCHEMA.get(section)
            if schema is None or name not in schema:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                staged.setdefault(section, {})[name] = schema[name](raw)
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r} ({exc})") from exc

        cfg = self
        for section, values in staged.items():
            if section == "suite":
                cfg = replace(cfg, suite_count=int(values["count"]))
            else:
                cfg = replace(cfg, **{section: replace(getattr(cfg, section), **values)})
        return cfg

    def to_text(self) -> str:
        """Flat, fully-resolved snapshot in the config-file format."""
        lines = []
        for section in sorted(_SCHEMA):
            if section == "suite":
                lines.append(f"suite.count = {self.suite_count}")
                continue
            obj = getattr(self, section)
            for f in fields(obj):
                if section == "scene" and f.name in ("width", "height"):
                    continue  # scene dims always mirror the grid
                if section == "eval" and f.name not in _SCHEMA["eval"]:
                    continue
                value = getattr(obj, f.name)
                if isinstance(value, tuple):
                    if value and isinstance(value[0], tuple):
                        text = ",".join(f"{a}:{b}" for a, b in value)
                    else:
                        text = ",".join(str(v) for v in value)
                elif value is None:
                    text = "none"
                else:
                    text = str(value)
                lines.append(f"{section}.{f.name} = {text}")
        return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> dict[str, str]:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def load_config(path: str | Path | None, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if path is None:
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return cfg.apply(parse_config_text(text))
