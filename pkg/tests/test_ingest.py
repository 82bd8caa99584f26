"""Filename grammar, fetchers against the mock endpoints, CSV round trips."""

import math
from datetime import datetime, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrocurate.errors import (
    EndpointUnavailable,
    MalformedFilename,
    MalformedResponse,
    SchemaMismatch,
)
from hydrocurate.ingest import (
    ALL_PARAMETER_IDS,
    CATALOG_COLUMNS,
    SLOTS,
    DayNight,
    FetchStats,
    ImageRecord,
    Parameter,
    ParameterId,
    ParameterSample,
    SiteDescriptor,
    fetch_image_catalog,
    fetch_parameter_series,
    format_image_filename,
    parse_image_filename,
    read_catalog_csv,
    read_parameters_csv,
    write_catalog_csv,
    write_parameters_csv,
)
from mock_endpoints import MockHydroServer

UTC = timezone.utc


def make_site(code="06805500", name="Platte_River", portal=None, state="NE"):
    return SiteDescriptor(
        site_code=code,
        site_name=name,
        state=state,
        latitude=41.0,
        longitude=-98.0,
        portal_name=portal or name,
    )


class TestFilenameGrammar:
    def test_documented_example(self):
        site, ts = parse_image_filename("Platte_River__2022-06-01T14-15-00Z.jpg")
        assert site == "Platte_River"
        assert ts == datetime(2022, 6, 1, 14, 15, tzinfo=UTC)

    def test_colon_separator(self):
        site, ts = parse_image_filename("Green_Bay__2022-06-01T14:15:00Z.jpg")
        assert site == "Green_Bay"
        assert ts == datetime(2022, 6, 1, 14, 15, tzinfo=UTC)

    def test_missing_separator(self):
        with pytest.raises(MalformedFilename):
            parse_image_filename("no-separator.jpg")

    def test_bad_timestamp(self):
        with pytest.raises(MalformedFilename):
            parse_image_filename("Site__not-a-time.jpg")

    def test_wrong_extension(self):
        with pytest.raises(MalformedFilename):
            parse_image_filename("Site__2022-06-01T14-15-00Z.png")

    def test_empty_site(self):
        with pytest.raises(MalformedFilename):
            parse_image_filename("__2022-06-01T14-15-00Z.jpg")

    @given(
        site=st.from_regex(r"[A-Za-z0-9][A-Za-z0-9_\-]{0,28}", fullmatch=True),
        ts=st.datetimes(
            min_value=datetime(2000, 1, 1), max_value=datetime(2099, 12, 31)
        ).map(lambda d: d.replace(microsecond=0, tzinfo=UTC)),
        sep=st.sampled_from(["-", ":"]),
    )
    @settings(max_examples=200)
    def test_round_trip_bijection(self, site, ts, sep):
        name = format_image_filename(site, ts, time_separator=sep)
        parsed_site, parsed_ts = parse_image_filename(name)
        assert (parsed_site, parsed_ts) == (site, ts)
        assert format_image_filename(parsed_site, parsed_ts, time_separator=sep) == name


def fill_catalog(server, site, count, start, step=timedelta(minutes=15)):
    entries = []
    for i in range(count):
        ts = start + i * step
        name = format_image_filename(site.portal_name, ts)
        entries.append((ts, f"archive/{site.site_code}/{name}"))
    server.catalog[site.portal_name] = entries
    return entries


class TestCatalogFetch:
    def test_pagination_exactly_once(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            entries = fill_catalog(server, site, 2500, start)
            records = list(
                fetch_image_catalog(server.images_url, site, start, start + timedelta(days=60),
                                    page_size=1000)
            )
        assert len(records) == 2500
        assert len({r.path for r in records}) == 2500
        times = [r.captured_utc for r in records]
        assert times == sorted(times)
        assert times[0] == entries[0][0]

    def test_empty_range(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            records = list(
                fetch_image_catalog(server.images_url, site, start, start + timedelta(seconds=1))
            )
        assert records == []

    def test_retry_after_transient_failure(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        stats = FetchStats()
        with MockHydroServer() as server:
            fill_catalog(server, site, 2500, start)
            server.fail_at_requests = {2}  # second page fails once
            records = list(
                fetch_image_catalog(server.images_url, site, start, start + timedelta(days=60),
                                    page_size=1000, stats=stats)
            )
        assert len(records) == 2500
        assert stats.retries >= 1

    def test_endpoint_down_bounded_attempts(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            fill_catalog(server, site, 10, start)
            server.fail_at_requests = set(range(1, 20))
            with pytest.raises(EndpointUnavailable):
                list(
                    fetch_image_catalog(server.images_url, site, start,
                                        start + timedelta(days=1), max_attempts=3)
                )

    def test_malformed_page_aborts_with_offset(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            fill_catalog(server, site, 10, start)
            server.malformed_images_page = True
            with pytest.raises(MalformedResponse) as exc:
                list(fetch_image_catalog(server.images_url, site, start, start + timedelta(days=1)))
        assert exc.value.page_offset is not None

    def test_bad_filename_skipped_and_counted(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        stats = FetchStats()
        with MockHydroServer() as server:
            entries = fill_catalog(server, site, 5, start)
            entries.insert(2, (entries[1][0] + timedelta(minutes=1), "archive/garbage.jpg"))
            records = list(
                fetch_image_catalog(server.images_url, site, start, start + timedelta(days=1),
                                    stats=stats)
            )
        assert len(records) == 5
        assert stats.skipped_malformed == 1

    def test_fetch_is_idempotent(self):
        site = make_site()
        start = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            fill_catalog(server, site, 123, start)
            first = [
                r.path for r in fetch_image_catalog(server.images_url, site, start,
                                                    start + timedelta(days=10), page_size=50)
            ]
            second = [
                r.path for r in fetch_image_catalog(server.images_url, site, start,
                                                    start + timedelta(days=10), page_size=50)
            ]
        assert first == second


def series_text(rows, slots=("turbidity_fnu", "cdom_ppb_qse")):
    header = "site_code\tsite_name\ttimestamp_utc\t" + "\t".join(slots)
    lines = [header]
    for site_code, name, ts, values in rows:
        cells = [site_code, name, ts.isoformat()]
        cells.extend("" if v is None else repr(v) for v in values)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


class TestParameterSeries:
    def params(self):
        return [
            ParameterId(Parameter.TURBIDITY, "fnu"),
            ParameterId(Parameter.CDOM, "ppb_qse"),
        ]

    def test_no_data_in_range(self):
        with MockHydroServer() as server:
            server.series_text = series_text([])
            samples = fetch_parameter_series(
                server.series_url, ["06805500"], self.params(),
                datetime(2022, 1, 1, tzinfo=UTC), datetime(2022, 2, 1, tzinfo=UTC),
            )
        assert samples == []

    def test_interleaved_nulls_preserved(self):
        t0 = datetime(2022, 6, 1, tzinfo=UTC)
        rows = [
            ("A", "Site_A", t0, (1.5, None)),
            ("A", "Site_A", t0 + timedelta(minutes=5), (None, 12.0)),
            ("A", "Site_A", t0 + timedelta(minutes=10), (2.5, 13.0)),
        ]
        with MockHydroServer() as server:
            server.series_text = series_text(rows)
            samples = fetch_parameter_series(
                server.series_url, ["A"], self.params(),
                t0, t0 + timedelta(hours=1),
            )
        assert len(samples) == 3
        assert samples[0].values["turbidity_fnu"] == 1.5
        assert samples[0].values["cdom_ppb_qse"] is None
        assert samples[1].values["turbidity_fnu"] is None
        for s in samples:
            for v in s.values.values():
                assert v is None or math.isfinite(v)

    def test_duplicate_rows_last_write_wins(self):
        t0 = datetime(2022, 6, 1, tzinfo=UTC)
        rows = [
            ("A", "Site_A", t0, (1.0, None)),
            ("A", "Site_A", t0, (2.0, None)),
        ]
        stats = FetchStats()
        with MockHydroServer() as server:
            server.series_text = series_text(rows)
            samples = fetch_parameter_series(
                server.series_url, ["A"], self.params(), t0, t0 + timedelta(hours=1),
                stats=stats,
            )
        assert len(samples) == 1
        assert samples[0].values["turbidity_fnu"] == 2.0
        assert stats.duplicate_rows == 1

    def test_non_finite_rejected(self):
        t0 = datetime(2022, 6, 1, tzinfo=UTC)
        with MockHydroServer() as server:
            server.series_text = series_text([("A", "Site_A", t0, (float("nan"), None))])
            with pytest.raises(MalformedResponse):
                fetch_parameter_series(
                    server.series_url, ["A"], self.params(), t0, t0 + timedelta(hours=1)
                )

    def test_empty_sites_rejected(self):
        with pytest.raises(ValueError):
            fetch_parameter_series(
                "http://unused", [], self.params(),
                datetime(2022, 1, 1, tzinfo=UTC), datetime(2022, 2, 1, tzinfo=UTC),
            )


def random_records(n, rng):
    records = []
    base = datetime(2022, 1, 1, tzinfo=UTC)
    for i in range(n):
        ts = base + timedelta(minutes=int(rng.integers(0, 10_000_000)))
        records.append(
            ImageRecord(
                site_code=f"site{int(rng.integers(0, 50)):03d}",
                site_name=f"Name_{int(rng.integers(0, 50))}",
                path=f"archive/img_{i}.jpg",
                captured_utc=ts,
                state="NE",
                day_night=[DayNight.DAY, DayNight.NIGHT, DayNight.UNCLASSIFIED][
                    int(rng.integers(0, 3))
                ],
                water_fraction=None if rng.random() < 0.3 else float(rng.random()),
            )
        )
    return records


class TestCsvRoundTrips:
    def test_empty_catalog_header_only(self, tmp_path):
        path = tmp_path / "catalog.csv"
        write_catalog_csv([], path)
        assert path.read_text().strip() == ",".join(CATALOG_COLUMNS)
        assert read_catalog_csv(path) == []

    def test_catalog_round_trip_random(self, tmp_path):
        import numpy as np

        rng = np.random.default_rng(11)
        records = random_records(10_000, rng)
        path = tmp_path / "catalog.csv"
        write_catalog_csv(records, path)
        back = read_catalog_csv(path)
        assert back == records

    def test_shuffled_columns_rejected(self, tmp_path):
        path = tmp_path / "catalog.csv"
        cols = list(CATALOG_COLUMNS)
        cols[0], cols[1] = cols[1], cols[0]
        path.write_text(",".join(cols) + "\n")
        with pytest.raises(SchemaMismatch) as exc:
            read_catalog_csv(path)
        assert "reordered" in str(exc.value)

    def test_missing_column_named(self, tmp_path):
        path = tmp_path / "catalog.csv"
        path.write_text(",".join(CATALOG_COLUMNS[:-1]) + "\n")
        with pytest.raises(SchemaMismatch) as exc:
            read_catalog_csv(path)
        assert "water_fraction" in str(exc.value.missing)

    def test_parameters_round_trip(self, tmp_path):
        import numpy as np

        rng = np.random.default_rng(12)
        base = datetime(2022, 1, 1, tzinfo=UTC)
        samples = []
        for i in range(500):
            values = {
                slot: (None if rng.random() < 0.5 else float(rng.normal()))
                for slot in SLOTS
            }
            samples.append(
                ParameterSample(f"s{i % 7}", f"Site {i % 7}", base + timedelta(minutes=i), values)
            )
        path = tmp_path / "parameters.csv"
        write_parameters_csv(samples, path)
        assert read_parameters_csv(path) == samples


class TestSchemaTypes:
    def test_sixteen_slots(self):
        assert len(SLOTS) == 16
        assert len(ALL_PARAMETER_IDS) == 16

    def test_unit_scoping(self):
        with pytest.raises(ValueError):
            ParameterId(Parameter.TURBIDITY, "rfu")

    def test_naive_timestamp_rejected(self):
        with pytest.raises(ValueError):
            ImageRecord("a", "b", "p.jpg", datetime(2022, 1, 1))

    def test_non_finite_sample_rejected(self):
        with pytest.raises(ValueError):
            ParameterSample(
                "a", "b", datetime(2022, 1, 1, tzinfo=UTC), {"turbidity_fnu": float("inf")}
            )

    def test_null_distinct_from_zero(self):
        s = ParameterSample(
            "a", "b", datetime(2022, 1, 1, tzinfo=UTC), {"turbidity_fnu": 0.0}
        )
        assert s.values["turbidity_fnu"] == 0.0
        assert s.values["cdom_ppb_qse"] is None

    def test_site_bounds(self):
        with pytest.raises(ValueError):
            SiteDescriptor("x", "X", "NE", 91.0, 0.0, "X")
