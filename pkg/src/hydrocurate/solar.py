"""Local-time conversion, sunrise/sunset geometry, and day/night labels.

Sunrise and sunset come from the NOAA general solar-position equations
with the standard refraction zenith of 90.833 degrees; accuracy is about
one minute at mid-latitudes. Polar day and polar night fall out of the
hour-angle equation having no solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from enum import Enum
from typing import Optional, Union
from zoneinfo import ZoneInfo

from .errors import UnclassifiedRecord, UnknownZone
from .ingest import DayNight, ImageRecord, SiteDescriptor

REFRACTION_ZENITH_DEG = 90.833


class Regime(str, Enum):
    NORMAL = "normal"
    POLAR_DAY = "polar_day"
    POLAR_NIGHT = "polar_night"


@dataclass(frozen=True)
class SolarDay:
    """Sun events for one civil date in the site-local zone."""

    date: date
    sunrise_local: Optional[datetime]
    sunset_local: Optional[datetime]
    solar_noon_local: datetime
    regime: Regime


def _julian_century(day: date) -> float:
    # Evaluated at 12:00 UTC of the civil date; sub-day drift in the solar
    # parameters is below the algorithm's one-minute accuracy.
    jd_noon = day.toordinal() + 1721425.0
    return (jd_noon - 2451545.0) / 36525.0


def _sun_declination_deg(t: float) -> float:
    mean_long = (280.46646 + t * (36000.76983 + t * 0.0003032)) % 360.0
    mean_anom = 357.52911 + t * (35999.05029 - 0.0001537 * t)
    eq_center = (
        math.sin(math.radians(mean_anom)) * (1.914602 - t * (0.004817 + 0.000014 * t))
        + math.sin(math.radians(2.0 * mean_anom)) * (0.019993 - 0.000101 * t)
        + math.sin(math.radians(3.0 * mean_anom)) * 0.000289
    )
    apparent_long = (
        mean_long + eq_center - 0.00569
        - 0.00478 * math.sin(math.radians(125.04 - 1934.136 * t))
    )
    obliq = _obliquity_corrected_deg(t)
    return math.degrees(
        math.asin(math.sin(math.radians(obliq)) * math.sin(math.radians(apparent_long)))
    )


def _obliquity_corrected_deg(t: float) -> float:
    seconds = 21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))
    mean_obliq = 23.0 + (26.0 + seconds / 60.0) / 60.0
    return mean_obliq + 0.00256 * math.cos(math.radians(125.04 - 1934.136 * t))


def _equation_of_time_min(t: float) -> float:
    mean_long = (280.46646 + t * (36000.76983 + t * 0.0003032)) % 360.0
    mean_anom = 357.52911 + t * (35999.05029 - 0.0001537 * t)
    eccent = 0.016708634 - t * (0.000042037 + 0.0000001267 * t)
    var_y = math.tan(math.radians(_obliquity_corrected_deg(t) / 2.0)) ** 2
    ml = math.radians(mean_long)
    ma = math.radians(mean_anom)
    return 4.0 * math.degrees(
        var_y * math.sin(2.0 * ml)
        - 2.0 * eccent * math.sin(ma)
        + 4.0 * eccent * var_y * math.sin(ma) * math.cos(2.0 * ml)
        - 0.5 * var_y * var_y * math.sin(4.0 * ml)
        - 1.25 * eccent * eccent * math.sin(2.0 * ma)
    )


ZoneLike = Union[str, ZoneInfo]


def _as_zone(zone: ZoneLike) -> ZoneInfo:
    if isinstance(zone, ZoneInfo):
        return zone
    try:
        return ZoneInfo(zone)
    except Exception as exc:
        raise UnknownZone(f"cannot load timezone {zone!r}: {exc}") from exc


def to_local(captured_utc: datetime, zone: ZoneLike) -> datetime:
    """Re-express the same instant in the site zone (DST-aware)."""
    if captured_utc.tzinfo is None:
        raise ValueError("captured_utc must be offset-aware")
    return captured_utc.astimezone(_as_zone(zone))


def solar_events(day: date, lat_deg: float, lon_deg: float, zone: ZoneLike) -> SolarDay:
    """Sunrise/sunset for one local civil date, or the polar regime."""
    if not -90.0 <= lat_deg <= 90.0:
        raise ValueError(f"latitude {lat_deg} outside [-90, 90]")
    tz = _as_zone(zone)
    t = _julian_century(day)
    decl = _sun_declination_deg(t)
    eqtime = _equation_of_time_min(t)

    noon_utc_min = 720.0 - 4.0 * lon_deg - eqtime
    midnight_utc = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
    noon_local = (midnight_utc + timedelta(minutes=noon_utc_min)).astimezone(tz)

    lat = math.radians(lat_deg)
    decl_r = math.radians(decl)
    cos_hour_angle = (
        math.cos(math.radians(REFRACTION_ZENITH_DEG)) / (math.cos(lat) * math.cos(decl_r))
        - math.tan(lat) * math.tan(decl_r)
    )
    if cos_hour_angle < -1.0:
        return SolarDay(day, None, None, noon_local, Regime.POLAR_DAY)
    if cos_hour_angle > 1.0:
        return SolarDay(day, None, None, noon_local, Regime.POLAR_NIGHT)

    half_day_min = 4.0 * math.degrees(math.acos(cos_hour_angle))
    sunrise = (midnight_utc + timedelta(minutes=noon_utc_min - half_day_min)).astimezone(tz)
    sunset = (midnight_utc + timedelta(minutes=noon_utc_min + half_day_min)).astimezone(tz)
    return SolarDay(day, sunrise, sunset, noon_local, Regime.NORMAL)


# Primary zone per U.S. state, used when the site registry does not carry
# an explicit zone column. Split-zone states map to their dominant zone.
STATE_ZONES: dict[str, str] = {
    "AL": "America/Chicago", "AK": "America/Anchorage", "AZ": "America/Phoenix",
    "AR": "America/Chicago", "CA": "America/Los_Angeles", "CO": "America/Denver",
    "CT": "America/New_York", "DC": "America/New_York", "DE": "America/New_York",
    "FL": "America/New_York", "GA": "America/New_York", "HI": "Pacific/Honolulu",
    "IA": "America/Chicago", "ID": "America/Boise", "IL": "America/Chicago",
    "IN": "America/Indiana/Indianapolis", "KS": "America/Chicago",
    "KY": "America/New_York", "LA": "America/Chicago", "MA": "America/New_York",
    "MD": "America/New_York", "ME": "America/New_York", "MI": "America/Detroit",
    "MN": "America/Chicago", "MO": "America/Chicago", "MS": "America/Chicago",
    "MT": "America/Denver", "NC": "America/New_York", "ND": "America/Chicago",
    "NE": "America/Chicago", "NH": "America/New_York", "NJ": "America/New_York",
    "NM": "America/Denver", "NV": "America/Los_Angeles", "NY": "America/New_York",
    "OH": "America/New_York", "OK": "America/Chicago", "OR": "America/Los_Angeles",
    "PA": "America/New_York", "RI": "America/New_York", "SC": "America/New_York",
    "SD": "America/Chicago", "TN": "America/Chicago", "TX": "America/Chicago",
    "UT": "America/Denver", "VA": "America/New_York", "VT": "America/New_York",
    "WA": "America/Los_Angeles", "WI": "America/Chicago", "WV": "America/New_York",
    "WY": "America/Denver",
}


class ZoneResolver:
    """Maps a site to exactly one IANA zone.

    Order: explicit registry zone, then the per-state table, then a pure
    UTC-offset zone derived from longitude. No network lookups.
    """

    def __init__(self, overrides: Optional[dict[str, str]] = None):
        self.overrides = dict(overrides or {})

    def resolve(self, site: SiteDescriptor) -> ZoneInfo:
        zone_id = self.overrides.get(site.site_code) or site.zone_id
        if zone_id:
            return _as_zone(zone_id)
        if site.state in STATE_ZONES:
            return _as_zone(STATE_ZONES[site.state])
        offset = round(site.longitude / 15.0)
        if offset == 0:
            return _as_zone("UTC")
        # Etc/GMT zone names carry the inverted POSIX sign.
        return _as_zone(f"Etc/GMT{'+' if offset < 0 else '-'}{abs(offset)}")


def classify_day_night(
    rec: ImageRecord, site: SiteDescriptor, resolver: Optional[ZoneResolver] = None
) -> DayNight:
    """Day iff sunrise <= local capture time <= sunset (boundaries inclusive)."""
    zone = (resolver or ZoneResolver()).resolve(site)
    local = to_local(rec.captured_utc, zone)
    events = solar_events(local.date(), site.latitude, site.longitude, zone)
    if events.regime == Regime.POLAR_DAY:
        return DayNight.DAY
    if events.regime == Regime.POLAR_NIGHT:
        return DayNight.NIGHT
    if events.sunrise_local <= local <= events.sunset_local:
        return DayNight.DAY
    return DayNight.NIGHT


def classify_catalog(
    records: list[ImageRecord],
    sites_by_code: dict[str, SiteDescriptor],
    resolver: Optional[ZoneResolver] = None,
) -> list[ImageRecord]:
    """Annotate local_time and day_night in place; returns the same list."""
    resolver = resolver or ZoneResolver()
    for rec in records:
        site = sites_by_code.get(rec.site_code)
        if site is None:
            raise UnknownZone(f"site {rec.site_code} missing from the registry")
        zone = resolver.resolve(site)
        rec.local_time = to_local(rec.captured_utc, zone)
        rec.day_night = classify_day_night(rec, site, resolver)
    return records


def filter_daytime(records: list[ImageRecord]) -> tuple[list[ImageRecord], int]:
    """Keep the Day records; report the drop count for the funnel."""
    for rec in records:
        if rec.day_night == DayNight.UNCLASSIFIED:
            raise UnclassifiedRecord(f"{rec.path} was never classified")
    kept = [rec for rec in records if rec.day_night == DayNight.DAY]
    return kept, len(records) - len(kept)
