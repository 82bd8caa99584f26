"""Stage driver: ingest -> daynight -> segval -> align, each stage writing
its artifact and a funnel entry, individually resumable from prior outputs."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import timedelta
from pathlib import Path
from typing import Optional

from . import align as align_mod
from . import ingest as ingest_mod
from . import segval as segval_mod
from . import solar as solar_mod
from .config import PipelineConfig, read_site_registry
from .errors import ConfigError, DegenerateInput, HydroError
from .ingest import ImageRecord
from .metrics import render_value

log = logging.getLogger("hydrocurate.pipeline")

SEGMETRICS_COLUMNS = (
    "image_path", "tp", "fp", "fn", "tn",
    "iou", "dice", "precision", "recall", "accuracy", "specificity",
    "water_fraction", "gated",
)


@dataclass
class Funnel:
    """Per-filter-stage survival counts."""

    stages: list[dict]

    @classmethod
    def empty(cls) -> "Funnel":
        return cls(stages=[])

    def add(self, name: str, before: int, after: int) -> None:
        self.stages.append(
            {"name": name, "before": before, "after": after, "dropped": before - after}
        )

    def write(self, path) -> None:
        Path(path).write_text(
            json.dumps({"stages": self.stages}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def read(cls, path) -> "Funnel":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(stages=doc["stages"])


def stage_ingest(config: PipelineConfig, out_dir: Path) -> tuple[Path, Path]:
    """Fetch catalogs (bounded parallelism across sites) and the series."""
    catalog_path = out_dir / "catalog.csv"
    params_path = out_dir / "parameters.csv"
    sites = read_site_registry(config.site_registry)
    if not config.endpoint_images or not config.endpoint_parameters:
        raise ConfigError("both endpoints must be configured for ingest")

    def fetch_one(site):
        return list(
            ingest_mod.fetch_image_catalog(
                config.endpoint_images,
                site,
                config.start_utc,
                config.end_utc,
                page_size=config.page_size,
            )
        )

    records: list[ImageRecord] = []
    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        for site_records in pool.map(fetch_one, sites):
            records.extend(site_records)
    records.sort(key=lambda r: (r.site_code, r.captured_utc, r.path))
    ingest_mod.write_catalog_csv(records, catalog_path)

    samples = ingest_mod.fetch_parameter_series(
        config.endpoint_parameters,
        [s.site_code for s in sites],
        list(ingest_mod.ALL_PARAMETER_IDS),
        config.start_utc,
        config.end_utc,
    )
    ingest_mod.write_parameters_csv(samples, params_path)
    return catalog_path, params_path


def stage_daynight(
    config: PipelineConfig, catalog_path, out_path, funnel: Optional[Funnel] = None
) -> Path:
    """Classify and keep the daytime records."""
    records = ingest_mod.read_catalog_csv(catalog_path)
    sites = {s.site_code: s for s in read_site_registry(config.site_registry)}
    solar_mod.classify_catalog(records, sites)
    kept, dropped = solar_mod.filter_daytime(records)
    ingest_mod.write_catalog_csv(kept, out_path)
    if funnel is not None:
        funnel.add("daynight", len(records), len(kept))
    log.info("daynight: kept %d of %d", len(kept), len(records))
    return Path(out_path)


def _segval_row(config: PipelineConfig, rec: ImageRecord, images_dir: Path, masks_dir: Path):
    image_file = images_dir / Path(rec.path).name
    mask_file = masks_dir / Path(rec.path).name
    if not image_file.exists():
        raise ConfigError(f"image file missing: {image_file}")
    if not mask_file.exists():
        raise ConfigError(f"candidate mask missing: {mask_file}")
    grid = segval_mod.PixelGrid.from_image_file(image_file)
    candidate = segval_mod.BinaryMask.from_image_file(mask_file)
    fraction = segval_mod.water_fraction(candidate)
    try:
        features = segval_mod.pixel_features(grid, config.feature_mode)
        model = segval_mod.fit_gmm(features, k=config.gmm_k, seed=config.gmm_seed)
        reference = segval_mod.gmm_mask(grid, model, config.water_component)
        metrics = segval_mod.compare_masks(candidate, reference)
    except DegenerateInput:
        log.warning("degenerate image %s; failing the gate", rec.path)
        metrics = None
    gates = segval_mod.SegGates(
        iou=config.gate_iou, dice=config.gate_dice,
        precision=config.gate_precision, recall=config.gate_recall,
    )
    gated = metrics is not None and segval_mod.gate_segmentation(metrics, gates)
    return metrics, fraction, gated


def stage_segval(
    config: PipelineConfig,
    catalog_path,
    metrics_path,
    kept_path,
    funnel: Optional[Funnel] = None,
) -> Path:
    """Score candidate masks against surrogate masks; gate and filter."""
    records = ingest_mod.read_catalog_csv(catalog_path)
    images_dir = Path(config.images_dir)
    masks_dir = Path(config.masks_dir)

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        results = list(
            pool.map(lambda rec: _segval_row(config, rec, images_dir, masks_dir), records)
        )

    kept: list[ImageRecord] = []
    n_gated = 0
    with open(metrics_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SEGMETRICS_COLUMNS)
        for rec, (metrics, fraction, gated) in zip(records, results):
            rec.water_fraction = fraction
            if metrics is None:
                counts = [0, 0, 0, 0]
                ratios = ["NaN"] * 6
            else:
                counts = [metrics.tp, metrics.fp, metrics.fn, metrics.tn]
                ratios = [
                    render_value(getattr(metrics, name), digits=12)
                    for name in segval_mod.RATIO_FIELDS
                ]
            writer.writerow(
                [rec.path, *counts, *ratios, repr(fraction), "true" if gated else "false"]
            )
            if gated:
                n_gated += 1
                if segval_mod.gate_coverage(fraction, config.coverage_threshold):
                    kept.append(rec)

    ingest_mod.write_catalog_csv(kept, kept_path)
    if funnel is not None:
        funnel.add("seg_gate", len(records), n_gated)
        funnel.add("coverage", n_gated, len(kept))
    log.info("segval: %d -> %d gated -> %d covered", len(records), n_gated, len(kept))
    return Path(kept_path)


def stage_align(
    config: PipelineConfig,
    kept_path,
    params_path,
    out_dir: Path,
    funnel: Optional[Funnel] = None,
) -> dict:
    """Merge by nearest timestamp and emit the per-parameter datasets."""
    records = ingest_mod.read_catalog_csv(kept_path)
    samples = ingest_mod.read_parameters_csv(params_path)
    if not samples:
        raise ConfigError(f"no parameter samples in {params_path}")
    records.sort(key=lambda r: (r.site_code, r.captured_utc))
    samples.sort(key=lambda s: (s.site_code, s.timestamp))

    selection = align_mod.select_units(samples)
    stats = align_mod.MergeStats()
    aligned = align_mod.asof_merge(
        records,
        samples,
        tolerance=timedelta(minutes=config.tolerance_minutes),
        direction=align_mod.Direction(config.direction),
        selection=selection,
        stats=stats,
    )
    datasets, dict_summary = align_mod.build_dictionary(aligned)

    paths = {}
    for param, rows in sorted(datasets.items(), key=lambda kv: kv[0].value):
        path = out_dir / f"dataset_{param.value}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["image_path", "value"])
            for image_path, value in rows:
                writer.writerow([image_path, repr(value)])
        paths[param.value] = str(path)

    summary = {
        "chosen_units": {p.value: u for p, u in selection.chosen.items()},
        "unit_counts": {
            p.value: dict(counts) for p, counts in selection.counts.items()
        },
        "unit_ties": [p.value for p in selection.ties],
        "excluded_parameters": [p.value for p in selection.excluded],
        "rows_kept": dict(sorted(dict_summary.kept.items())),
        "dropped_negative": dict(sorted(dict_summary.dropped_negative.items())),
        "matched_images": stats.matched_images,
        "dropped_images_no_match": stats.dropped_images,
        "site_name_mismatches": stats.site_name_mismatches,
        "merge_direction": config.direction,
        "tolerance_minutes": config.tolerance_minutes,
    }
    (out_dir / "dictionary_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if funnel is not None:
        funnel.add("align", len(records), stats.matched_images)
    return summary


def _count_gated(metrics_path) -> int:
    with open(metrics_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return sum(1 for row in reader if row["gated"] == "true")


def _run_stage(name: str, fn):
    try:
        return fn()
    except HydroError as exc:
        exc.args = (f"stage {name}: {exc}",) + exc.args[1:]
        raise


def run_pipeline(config: PipelineConfig, out_dir, force: bool = False) -> Path:
    """Run all stages, skipping any whose artifacts already exist."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    funnel = Funnel.empty()

    catalog_path = out / "catalog.csv"
    params_path = out / "parameters.csv"
    day_path = out / "catalog_day.csv"
    metrics_path = out / "segmetrics.csv"
    kept_path = out / "catalog_kept.csv"

    if force or not (catalog_path.exists() and params_path.exists()):
        _run_stage("ingest", lambda: stage_ingest(config, out))
    n_ingested = len(ingest_mod.read_catalog_csv(catalog_path))
    funnel.add("ingest", n_ingested, n_ingested)

    if force or not day_path.exists():
        _run_stage("daynight", lambda: stage_daynight(config, catalog_path, day_path, funnel))
    else:
        funnel.add("daynight", n_ingested, len(ingest_mod.read_catalog_csv(day_path)))

    if force or not (metrics_path.exists() and kept_path.exists()):
        _run_stage(
            "segval", lambda: stage_segval(config, day_path, metrics_path, kept_path, funnel)
        )
    else:
        n_day = len(ingest_mod.read_catalog_csv(day_path))
        n_gated = _count_gated(metrics_path)
        n_kept = len(ingest_mod.read_catalog_csv(kept_path))
        funnel.add("seg_gate", n_day, n_gated)
        funnel.add("coverage", n_gated, n_kept)

    _run_stage("align", lambda: stage_align(config, kept_path, params_path, out, funnel))

    funnel.write(out / "funnel.json")
    return out
