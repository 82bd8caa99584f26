"""Catalog and parameter-series ingestion.

Fetches image catalogs (paged JSON) and parameter time series (delimited
text export) from HTTP endpoints, parses the Site_Name__Timestamp filename
grammar, and round-trips the pipeline's CSV artifacts.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Iterator, Optional
from urllib.parse import urlencode

import requests

from .errors import (
    EndpointUnavailable,
    MalformedFilename,
    MalformedResponse,
    SchemaMismatch,
)

log = logging.getLogger("hydrocurate.ingest")

IMAGE_EXTENSION = ".jpg"
FILENAME_SEPARATOR = "__"


class Parameter(str, Enum):
    CHLOROPHYLL_A = "chlorophyll_a"
    CHLOROPHYLLS = "chlorophylls"
    CDOM = "cdom"
    PHYCOCYANIN = "phycocyanin"
    SUSPENDED_SEDIMENTS = "suspended_sediments"
    TURBIDITY = "turbidity"


# Measurement units per parameter, in catalog listing order. The order is
# load-bearing: unit-selection ties break toward the earlier entry.
PARAMETER_UNITS: dict[Parameter, tuple[str, ...]] = {
    Parameter.CHLOROPHYLL_A: ("ug_l", "rfu"),
    Parameter.CHLOROPHYLLS: ("ug_l_650_700", "ug_l_470_685", "rfu"),
    Parameter.CDOM: ("ppb_qse", "rfu"),
    Parameter.PHYCOCYANIN: ("ug_l", "rfu"),
    Parameter.SUSPENDED_SEDIMENTS: ("tons_day", "mg_l_regression", "mg_l_point"),
    Parameter.TURBIDITY: ("fnu", "fbu", "sbu", "ntu"),
}


@dataclass(frozen=True)
class ParameterId:
    """One (parameter, unit) measurement slot."""

    parameter: Parameter
    unit: str

    def __post_init__(self):
        units = PARAMETER_UNITS[Parameter(self.parameter)]
        if self.unit not in units:
            raise ValueError(
                f"unit {self.unit!r} not valid for {self.parameter.value}; "
                f"expected one of {units}"
            )

    @property
    def slot(self) -> str:
        return f"{self.parameter.value}_{self.unit}"

    @classmethod
    def from_slot(cls, slot: str) -> "ParameterId":
        for pid in ALL_PARAMETER_IDS:
            if pid.slot == slot:
                return pid
        raise ValueError(f"unknown measurement slot {slot!r}")


ALL_PARAMETER_IDS: tuple[ParameterId, ...] = tuple(
    ParameterId(param, unit)
    for param, units in PARAMETER_UNITS.items()
    for unit in units
)

# The 16 fixed measurement columns, in listing order.
SLOTS: tuple[str, ...] = tuple(pid.slot for pid in ALL_PARAMETER_IDS)


class DayNight(str, Enum):
    DAY = "Day"
    NIGHT = "Night"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class SiteDescriptor:
    site_code: str
    site_name: str
    state: str
    latitude: float
    longitude: float
    portal_name: str
    zone_id: Optional[str] = None

    def __post_init__(self):
        if not self.site_code:
            raise ValueError("site_code must be non-empty")
        if not -90.0 <= self.latitude <= 90.0:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if not -180.0 <= self.longitude <= 180.0:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")


@dataclass
class ImageRecord:
    site_code: str
    site_name: str
    path: str
    captured_utc: datetime
    state: str = ""
    local_time: Optional[datetime] = None
    day_night: DayNight = DayNight.UNCLASSIFIED
    water_fraction: Optional[float] = None

    def __post_init__(self):
        if self.captured_utc.tzinfo is None:
            raise ValueError("captured_utc must carry an explicit UTC offset")
        if self.water_fraction is not None and not 0.0 <= self.water_fraction <= 1.0:
            raise ValueError(f"water_fraction {self.water_fraction} outside [0, 1]")


@dataclass
class ParameterSample:
    site_code: str
    site_name: str
    timestamp: datetime
    values: dict[str, Optional[float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must carry an explicit UTC offset")
        unknown = set(self.values) - set(SLOTS)
        if unknown:
            raise ValueError(f"unknown measurement slots: {sorted(unknown)}")
        for slot, value in self.values.items():
            if value is not None and not math.isfinite(value):
                raise ValueError(f"non-finite value for {slot}: {value}")
        # Absent measurements are explicit nulls, never zeros.
        for slot in SLOTS:
            self.values.setdefault(slot, None)


@dataclass
class FetchStats:
    """Counters a fetch accumulates for the caller's funnel report."""

    emitted: int = 0
    skipped_malformed: int = 0
    duplicate_rows: int = 0
    retries: int = 0


# ---------------------------------------------------------------------------
# Filename grammar: Site_Name__Timestamp.jpg
# ---------------------------------------------------------------------------

_TIME_FORMATS = {
    "-": "%Y-%m-%dT%H-%M-%SZ",
    ":": "%Y-%m-%dT%H:%M:%SZ",
}


def parse_image_filename(
    filename: str, time_separator: Optional[str] = None
) -> tuple[str, datetime]:
    """Split an image filename into (site_name, captured_utc).

    The site name keeps its underscores; the separator is the last double
    underscore. With ``time_separator=None`` the time-of-day separator
    ('-' or ':') is detected from the timestamp itself.
    """
    if not filename.endswith(IMAGE_EXTENSION):
        raise MalformedFilename(f"{filename!r} does not end in {IMAGE_EXTENSION}")
    stem = filename[: -len(IMAGE_EXTENSION)]
    idx = stem.rfind(FILENAME_SEPARATOR)
    if idx <= 0:
        raise MalformedFilename(f"{filename!r} lacks the {FILENAME_SEPARATOR} separator")
    site_name = stem[:idx]
    stamp = stem[idx + len(FILENAME_SEPARATOR):]
    sep = time_separator
    if sep is None:
        sep = stamp[13] if len(stamp) > 13 and stamp[13] in _TIME_FORMATS else "-"
    fmt = _TIME_FORMATS.get(sep)
    if fmt is None:
        raise MalformedFilename(f"unsupported time separator {sep!r}")
    try:
        captured = datetime.strptime(stamp, fmt).replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise MalformedFilename(f"unparseable timestamp in {filename!r}: {exc}") from exc
    return site_name, captured


def format_image_filename(
    site_name: str, captured_utc: datetime, time_separator: str = "-"
) -> str:
    """Inverse of parse_image_filename for the same separator choice."""
    if captured_utc.tzinfo is None:
        raise ValueError("captured_utc must be offset-aware")
    fmt = _TIME_FORMATS.get(time_separator)
    if fmt is None:
        raise ValueError(f"unsupported time separator {time_separator!r}")
    stamp = captured_utc.astimezone(timezone.utc).strftime(fmt)
    return f"{site_name}{FILENAME_SEPARATOR}{stamp}{IMAGE_EXTENSION}"


# ---------------------------------------------------------------------------
# HTTP fetchers
# ---------------------------------------------------------------------------

def _get_with_retry(
    url: str,
    stats: FetchStats,
    max_attempts: int = 5,
    backoff_base: float = 0.05,
    backoff_cap: float = 2.0,
    timeout: float = 30.0,
    session: Optional[requests.Session] = None,
) -> requests.Response:
    """GET with capped exponential backoff on transient failures."""
    http = session or requests
    last_error: Exception | None = None
    for attempt in range(max_attempts):
        if attempt:
            stats.retries += 1
            time.sleep(min(backoff_base * 2 ** (attempt - 1), backoff_cap))
        try:
            resp = http.get(url, timeout=timeout)
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code >= 500:
            last_error = EndpointUnavailable(f"HTTP {resp.status_code} from {url}")
            continue
        if resp.status_code != 200:
            raise EndpointUnavailable(f"HTTP {resp.status_code} from {url}")
        return resp
    raise EndpointUnavailable(
        f"{url} still failing after {max_attempts} attempts: {last_error}"
    )


def fetch_image_catalog(
    endpoint: str,
    site: SiteDescriptor,
    start_utc: datetime,
    end_utc: datetime,
    page_size: int = 1000,
    resume_after: Optional[datetime] = None,
    stats: Optional[FetchStats] = None,
    session: Optional[requests.Session] = None,
    max_attempts: int = 5,
) -> Iterator[ImageRecord]:
    """Stream one site's catalog entries in nondecreasing capture order.

    Pages are requested by timestamp cursor, so an interrupted stream
    resumes from the last emitted timestamp without duplicates or gaps.
    The endpoint answers JSON ``{"images": [{"path": ...}, ...]}`` sorted
    by capture time.
    """
    if start_utc >= end_utc:
        raise ValueError("start_utc must precede end_utc")
    if page_size < 1:
        raise ValueError("page_size must be positive")
    stats = stats if stats is not None else FetchStats()

    cursor = resume_after or start_utc
    seen_paths: set[str] = set()
    last_emitted: Optional[datetime] = None
    while True:
        query = urlencode(
            {
                "site": site.portal_name,
                "start": cursor.astimezone(timezone.utc).isoformat(),
                "end": end_utc.astimezone(timezone.utc).isoformat(),
                "limit": page_size,
            }
        )
        url = f"{endpoint}?{query}"
        resp = _get_with_retry(url, stats, max_attempts=max_attempts, session=session)
        try:
            payload = resp.json()
            items = payload["images"]
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponse(
                f"bad catalog page at cursor {cursor.isoformat()}: {exc}",
                page_offset=cursor.isoformat(),
            ) from exc

        fresh = 0
        for item in items:
            path = item.get("path") if isinstance(item, dict) else None
            if not path:
                raise MalformedResponse(
                    "catalog item without a path", page_offset=cursor.isoformat()
                )
            if path in seen_paths:
                continue
            seen_paths.add(path)
            fresh += 1
            basename = path.rsplit("/", 1)[-1]
            try:
                _, captured = parse_image_filename(basename)
            except MalformedFilename as exc:
                stats.skipped_malformed += 1
                log.warning("skipping malformed catalog entry %s: %s", path, exc)
                continue
            if last_emitted is not None and captured < last_emitted:
                raise MalformedResponse(
                    f"catalog out of order at {path}", page_offset=cursor.isoformat()
                )
            last_emitted = captured
            stats.emitted += 1
            yield ImageRecord(
                site_code=site.site_code,
                site_name=site.site_name,
                state=site.state,
                path=path,
                captured_utc=captured,
            )

        if len(items) < page_size:
            return
        if fresh == 0:
            raise MalformedResponse(
                "catalog page made no progress", page_offset=cursor.isoformat()
            )
        cursor = last_emitted if last_emitted is not None else cursor


def fetch_parameter_series(
    endpoint: str,
    sites: list[str],
    params: list[ParameterId],
    start_utc: datetime,
    end_utc: datetime,
    stats: Optional[FetchStats] = None,
    session: Optional[requests.Session] = None,
    max_attempts: int = 5,
) -> list[ParameterSample]:
    """Fetch the tab-delimited parameter export for the given sites/slots.

    Absent measurements stay explicit nulls. Duplicate (site, timestamp)
    rows resolve last-write-wins with a warning counter.
    """
    if not sites or not params:
        raise ValueError("sites and params must be non-empty")
    stats = stats if stats is not None else FetchStats()

    query = urlencode(
        {
            "sites": ",".join(sites),
            "params": ",".join(p.slot for p in params),
            "start": start_utc.astimezone(timezone.utc).isoformat(),
            "end": end_utc.astimezone(timezone.utc).isoformat(),
        }
    )
    url = f"{endpoint}?{query}"
    resp = _get_with_retry(url, stats, max_attempts=max_attempts, session=session)

    lines = [ln for ln in resp.text.splitlines() if ln and not ln.startswith("#")]
    if not lines:
        return []
    header = lines[0].split("\t")
    fixed = ["site_code", "site_name", "timestamp_utc"]
    if header[: len(fixed)] != fixed:
        raise MalformedResponse(f"series export header unexpected: {header[:3]}")
    slot_cols = header[len(fixed):]
    unknown = [c for c in slot_cols if c not in SLOTS]
    if unknown:
        raise MalformedResponse(f"series export with unknown slots: {unknown}")

    by_key: dict[tuple[str, datetime], ParameterSample] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split("\t")
        if len(cells) != len(header):
            raise MalformedResponse(f"row {lineno} has {len(cells)} cells, want {len(header)}")
        site_code, site_name, stamp = cells[0], cells[1], cells[2]
        try:
            ts = datetime.fromisoformat(stamp)
        except ValueError as exc:
            raise MalformedResponse(f"row {lineno}: bad timestamp {stamp!r}") from exc
        if ts.tzinfo is None:
            raise MalformedResponse(f"row {lineno}: naive timestamp {stamp!r}")
        values: dict[str, Optional[float]] = {}
        for col, cell in zip(slot_cols, cells[len(fixed):]):
            if cell == "":
                values[col] = None
                continue
            try:
                num = float(cell)
            except ValueError as exc:
                raise MalformedResponse(f"row {lineno}: bad value {cell!r} in {col}") from exc
            if not math.isfinite(num):
                raise MalformedResponse(f"row {lineno}: non-finite value in {col}")
            values[col] = num
        key = (site_code, ts)
        if key in by_key:
            stats.duplicate_rows += 1
            log.warning("duplicate series row for %s at %s; keeping the later one", *key)
        by_key[key] = ParameterSample(site_code, site_name, ts, values)

    samples = sorted(by_key.values(), key=lambda s: (s.site_code, s.timestamp))
    stats.emitted += len(samples)
    return samples


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

CATALOG_COLUMNS = (
    "image_path",
    "site_code",
    "site_name",
    "timestamp_utc",
    "state",
    "day_night",
    "water_fraction",
)

PARAMETERS_COLUMNS = ("site_code", "site_name", "timestamp_utc") + SLOTS


def _check_header(found: list[str], expected: tuple[str, ...], path) -> None:
    if list(found) == list(expected):
        return
    missing = [c for c in expected if c not in found]
    extra = [c for c in found if c not in expected]
    if not missing and not extra:
        detail = f"columns reordered: found {found}, expected {list(expected)}"
    else:
        detail = f"missing {missing}, extra {extra}"
    raise SchemaMismatch(f"{path}: {detail}", missing=missing, extra=extra)


def write_catalog_csv(records: list[ImageRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CATALOG_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.path,
                    rec.site_code,
                    rec.site_name,
                    rec.captured_utc.isoformat(),
                    rec.state,
                    rec.day_night.value,
                    "" if rec.water_fraction is None else repr(rec.water_fraction),
                ]
            )


def read_catalog_csv(path) -> list[ImageRecord]:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path}: empty file", missing=CATALOG_COLUMNS)
        _check_header(header, CATALOG_COLUMNS, path)
        for row in reader:
            image_path, site_code, site_name, stamp, state, day_night, frac = row
            records.append(
                ImageRecord(
                    site_code=site_code,
                    site_name=site_name,
                    path=image_path,
                    captured_utc=datetime.fromisoformat(stamp),
                    state=state,
                    day_night=DayNight(day_night),
                    water_fraction=None if frac == "" else float(frac),
                )
            )
    return records


def write_parameters_csv(samples: list[ParameterSample], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PARAMETERS_COLUMNS)
        for s in samples:
            row = [s.site_code, s.site_name, s.timestamp.isoformat()]
            row.extend(
                "" if s.values[slot] is None else repr(s.values[slot]) for slot in SLOTS
            )
            writer.writerow(row)


def read_parameters_csv(path) -> list[ParameterSample]:
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaMismatch(f"{path}: empty file", missing=PARAMETERS_COLUMNS)
        _check_header(header, PARAMETERS_COLUMNS, path)
        for row in reader:
            site_code, site_name, stamp = row[:3]
            values = {
                slot: (None if cell == "" else float(cell))
                for slot, cell in zip(SLOTS, row[3:])
            }
            samples.append(
                ParameterSample(site_code, site_name, datetime.fromisoformat(stamp), values)
            )
    return samples
