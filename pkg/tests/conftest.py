"""Shared fixtures: the 200-image synthetic end-to-end corpus.

Designed funnel: 200 ingested -> 120 daytime -> 100 past the metric gate
-> 90 past coverage -> 75 matched to a parameter sample. Per-parameter
dictionary rows: turbidity 70 (5 negatives dropped), cdom 40,
chlorophyll_a 25.
"""

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
import pytest
from PIL import Image

from hydrocurate.config import PipelineConfig, write_site_registry
from hydrocurate.ingest import SLOTS, SiteDescriptor, format_image_filename
from mock_endpoints import MockHydroServer

UTC = timezone.utc

SITES = [
    SiteDescriptor("S1", "Cedar_Creek", "NE", 41.0, -96.0, "Cedar_Creek",
                   zone_id="America/Chicago"),
    SiteDescriptor("S2", "Blue_River", "VA", 38.0, -78.0, "Blue_River",
                   zone_id="America/New_York"),
]

N_DAY_PER_SITE = 60
N_NIGHT_PER_SITE = 40
GOOD_RANGE = range(0, 45)       # candidate mask matches the water region
BAD_RANGE = range(45, 55)       # inverted candidate: fails the metric gate
LOW_RANGE = range(55, 60)       # 9% coverage: passes gate, fails coverage
MATCHED_GOOD = {"S1": 38, "S2": 37}   # goods below this index get a sample

WATER_ROWS_GOOD = 26  # of 64 -> fraction 0.40625
WATER_ROWS_LOW = 6    # of 64 -> fraction 0.09375

EXPECTED_FUNNEL = [
    ("ingest", 200, 200),
    ("daynight", 200, 120),
    ("seg_gate", 120, 100),
    ("coverage", 100, 90),
    ("align", 90, 75),
]
EXPECTED_ROWS = {"turbidity": 70, "cdom": 40, "chlorophyll_a": 25}
NEGATIVE_TURBIDITY = {"S1": (0, 1, 2), "S2": (0, 1)}


@dataclass
class E2eFixture:
    root: Path
    server: MockHydroServer
    config: PipelineConfig
    config_path: Path


def _day_image_time(site: SiteDescriptor, index: int) -> datetime:
    zone = ZoneInfo(site.zone_id)
    day = datetime(2022, 4, 1, 12, 0, tzinfo=zone) + timedelta(days=3 * index)
    return day.astimezone(UTC)


def _night_image_time(site: SiteDescriptor, index: int) -> datetime:
    zone = ZoneInfo(site.zone_id)
    day = datetime(2022, 4, 2, 1, 0, tzinfo=zone) + timedelta(days=4 * index)
    return day.astimezone(UTC)


def _write_day_image(images_dir, masks_dir, filename, role, rng):
    water_rows = WATER_ROWS_LOW if role == "low" else WATER_ROWS_GOOD
    img = rng.normal(0.8, 0.01, (64, 64))
    img[64 - water_rows:, :] = rng.normal(0.2, 0.01, (water_rows, 64))
    pixels = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(pixels, "L").save(images_dir / filename, format="PNG")

    mask = np.zeros((64, 64), dtype=np.uint8)
    mask[64 - water_rows:, :] = 255
    if role == "bad":
        mask = 255 - mask
    Image.fromarray(mask, "L").save(masks_dir / filename, format="PNG")


def _series_rows():
    rows = []
    for site in SITES:
        for i in range(MATCHED_GOOD[site.site_code]):
            ts = _day_image_time(site, i) + timedelta(minutes=7)
            values = {slot: "" for slot in SLOTS}
            turbidity = -1.0 if i in NEGATIVE_TURBIDITY[site.site_code] else float(i + 1)
            values["turbidity_fnu"] = repr(turbidity)
            if i < 5:
                values["turbidity_ntu"] = repr(1.0)
            if i < 20:
                values["cdom_ppb_qse"] = repr(0.5 * (i + 1))
            if i < (13 if site.site_code == "S1" else 12):
                values["chlorophyll_a_rfu"] = repr(0.1 * (i + 1))
            rows.append((site, ts, values))
    return rows


def build_corpus(root: Path) -> tuple[MockHydroServer, PipelineConfig, Path]:
    images_dir = root / "images"
    masks_dir = root / "masks"
    images_dir.mkdir()
    masks_dir.mkdir()
    rng = np.random.default_rng(2024)

    server = MockHydroServer()
    for site in SITES:
        entries = []
        for i in range(N_DAY_PER_SITE):
            ts = _day_image_time(site, i)
            filename = format_image_filename(site.portal_name, ts)
            entries.append((ts, f"archive/{filename}"))
            role = "good" if i in GOOD_RANGE else ("bad" if i in BAD_RANGE else "low")
            _write_day_image(images_dir, masks_dir, filename, role, rng)
        for j in range(N_NIGHT_PER_SITE):
            ts = _night_image_time(site, j)
            entries.append((ts, f"archive/{format_image_filename(site.portal_name, ts)}"))
        entries.sort()
        server.catalog[site.portal_name] = entries

    header = "site_code\tsite_name\ttimestamp_utc\t" + "\t".join(SLOTS)
    lines = [header]
    for site, ts, values in _series_rows():
        cells = [site.site_code, site.site_name, ts.isoformat()]
        cells.extend(values[slot] for slot in SLOTS)
        lines.append("\t".join(cells))
    server.series_text = "\n".join(lines) + "\n"

    registry = root / "sites.csv"
    write_site_registry(SITES, registry)

    config = PipelineConfig(
        site_registry=str(registry),
        start="2022-03-01T00:00:00+00:00",
        end="2022-12-01T00:00:00+00:00",
        images_dir=str(images_dir),
        masks_dir=str(masks_dir),
        page_size=64,
        parallelism=2,
    )
    config_path = root / "pipeline.toml"
    return server, config, config_path


@pytest.fixture(scope="session")
def e2e(tmp_path_factory) -> E2eFixture:
    root = tmp_path_factory.mktemp("e2e")
    server, config, config_path = build_corpus(root)
    server.__enter__()
    config.endpoint_images = server.images_url
    config.endpoint_parameters = server.series_url

    from hydrocurate.config import save_config

    save_config(config, config_path)
    yield E2eFixture(root=root, server=server, config=config, config_path=config_path)
    server.__exit__(None, None, None)
