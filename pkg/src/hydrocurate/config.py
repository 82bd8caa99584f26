"""Pipeline configuration: a single TOML file plus environment overrides."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib
from datetime import datetime
from pathlib import Path

from .errors import ConfigError, SchemaMismatch
from .ingest import SiteDescriptor

ENV_IMAGES = "HYDRO_ENDPOINT_IMAGES"
ENV_PARAMS = "HYDRO_ENDPOINT_PARAMS"


@dataclass
class PipelineConfig:
    endpoint_images: str = ""
    endpoint_parameters: str = ""
    site_registry: str = "sites.csv"
    start: str = "2022-02-01T00:00:00+00:00"
    end: str = "2024-11-14T00:00:00+00:00"
    images_dir: str = "images"
    masks_dir: str = "masks"
    coverage_threshold: float = 0.20
    gate_iou: float = 0.5
    gate_dice: float = 0.2
    gate_precision: float = 0.1
    gate_recall: float = 0.2
    gmm_k: int = 2
    gmm_seed: int = 7
    feature_mode: str = "luminance"
    water_component: str = "lowest_mean"
    tolerance_minutes: float = 60.0
    direction: str = "nearest"
    split_fraction: float = 0.8
    split_seed: int = 7
    page_size: int = 1000
    parallelism: int = 4

    def __post_init__(self):
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise ConfigError("coverage_threshold must lie in [0, 1]")
        for name in ("gate_iou", "gate_dice", "gate_precision", "gate_recall"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie strictly between 0 and 1")
        if self.direction not in ("nearest", "backward", "forward"):
            raise ConfigError(f"unknown merge direction {self.direction!r}")
        if self.parallelism < 1 or self.page_size < 1:
            raise ConfigError("parallelism and page_size must be positive")

    @property
    def start_utc(self) -> datetime:
        return datetime.fromisoformat(self.start)

    @property
    def end_utc(self) -> datetime:
        return datetime.fromisoformat(self.end)


_SECTIONS = {
    "endpoints": {"images": "endpoint_images", "parameters": "endpoint_parameters"},
    "data": {
        "site_registry": "site_registry",
        "start": "start",
        "end": "end",
        "images_dir": "images_dir",
        "masks_dir": "masks_dir",
    },
    "filters": {
        "coverage_threshold": "coverage_threshold",
        "gate_iou": "gate_iou",
        "gate_dice": "gate_dice",
        "gate_precision": "gate_precision",
        "gate_recall": "gate_recall",
    },
    "segmentation": {
        "k": "gmm_k",
        "seed": "gmm_seed",
        "feature_mode": "feature_mode",
        "water_component": "water_component",
    },
    "merge": {"tolerance_minutes": "tolerance_minutes", "direction": "direction"},
    "split": {"fraction": "split_fraction", "seed": "split_seed"},
    "fetch": {"page_size": "page_size", "parallelism": "parallelism"},
}


def load_config(path, env=None) -> PipelineConfig:
    """Read the TOML config; HYDRO_ENDPOINT_* variables override endpoints."""
    env = os.environ if env is None else env
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    kwargs = {}
    for section, keys in _SECTIONS.items():
        table = doc.get(section, {})
        for key, attr in keys.items():
            if key in table:
                kwargs[attr] = table[key]
    config = PipelineConfig(**kwargs)
    if env.get(ENV_IMAGES):
        config.endpoint_images = env[ENV_IMAGES]
    if env.get(ENV_PARAMS):
        config.endpoint_parameters = env[ENV_PARAMS]
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def save_config(config: PipelineConfig, path) -> None:
    """Write the config back out; load(save(c)) == c."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key, attr in keys.items():
            lines.append(f"{key} = {_toml_value(getattr(config, attr))}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


SITE_COLUMNS = ("site_code", "site_name", "state", "latitude", "longitude", "portal_name")


def read_site_registry(path) -> list[SiteDescriptor]:
    """Site registry CSV; an optional trailing zone_id column pins the zone."""
    if not Path(path).exists():
        raise ConfigError(f"site registry not found: {path}")
    sites = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path}: empty file", missing=SITE_COLUMNS)
        has_zone = list(header) == list(SITE_COLUMNS) + ["zone_id"]
        if not has_zone and list(header) != list(SITE_COLUMNS):
            missing = [c for c in SITE_COLUMNS if c not in header]
            extra = [c for c in header if c not in SITE_COLUMNS + ("zone_id",)]
            raise SchemaMismatch(f"{path}: bad header {header}", missing=missing, extra=extra)
        for row in reader:
            zone_id = row[6] if has_zone and len(row) > 6 and row[6] else None
            sites.append(
                SiteDescriptor(
                    site_code=row[0],
                    site_name=row[1],
                    state=row[2],
                    latitude=float(row[3]),
                    longitude=float(row[4]),
                    portal_name=row[5],
                    zone_id=zone_id,
                )
            )
    codes = [s.site_code for s in sites]
    if len(codes) != len(set(codes)):
        raise ConfigError(f"{path}: duplicate site codes")
    return sites


def write_site_registry(sites: list[SiteDescriptor], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(SITE_COLUMNS) + ["zone_id"])
        for s in sites:
            writer.writerow(
                [s.site_code, s.site_name, s.state, repr(s.latitude), repr(s.longitude),
                 s.portal_name, s.zone_id or ""]
            )
