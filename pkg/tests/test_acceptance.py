"""Acceptance suite: one test per acceptance criterion, each printing a
PASS line and enforcing its runtime budget. Expected values come from the
independent oracles in oracles.py, never from the code paths under test."""

import json
import sys
import time
from datetime import date, datetime, timedelta, timezone
from fractions import Fraction
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np
import pytest

from hydrocurate.align import Direction, match_nearest, build_dictionary, select_units
from hydrocurate.hpo import (
    EarlyStopPolicy,
    cosine_lr,
    default_space,
    early_stop_decision,
    new_state,
    observe,
    plateau_lr,
    suggest,
)
from hydrocurate.ingest import (
    ImageRecord,
    Parameter,
    ParameterSample,
    SiteDescriptor,
    format_image_filename,
    parse_image_filename,
)
from hydrocurate.metrics import (
    PredictionSet,
    concordance_ccc,
    pearson_r,
    r2_against_mean_baseline,
    regression_report,
    render_value,
    smape,
)
from hydrocurate.orchestrate import StopReason, TrainerSpec, read_ledger, run_study, run_trial
from hydrocurate.pipeline import run_pipeline
from hydrocurate.segval import (
    BinaryMask,
    SegMetrics,
    compare_masks,
    fit_gmm,
    gate_segmentation,
)
from hydrocurate.solar import Regime, ZoneResolver, classify_day_night, solar_events

import oracles
from conftest import EXPECTED_FUNNEL, EXPECTED_ROWS
from mock_trainer import quadratic_objective

UTC = timezone.utc


class Budget:
    """Asserts the criterion body stayed under its stated wall budget."""

    def __init__(self, name, seconds):
        self.name = name
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, *rest):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            if elapsed >= self.seconds:
                raise AssertionError(
                    f"{self.name} took {elapsed:.1f}s, budget {self.seconds}s"
                )
            print(f"ACCEPTANCE PASS: {self.name} ({elapsed:.1f}s)")
        else:
            print(f"ACCEPTANCE FAIL: {self.name}")
        return False


def mask_of(bits):
    bits = np.asarray(bits, dtype=bool)
    return BinaryMask(width=bits.shape[1], height=bits.shape[0], bits=bits)


def test_segmentation_metrics_against_oracle():
    with Budget("segmentation metrics vs brute-force oracle", 10):
        rng = np.random.default_rng(101)
        for _ in range(1000):
            h = int(rng.integers(1, 65))
            w = int(rng.integers(1, 65))
            cand = rng.random((h, w)) < rng.random()
            ref = rng.random((h, w)) < rng.random()
            ours = compare_masks(mask_of(cand), mask_of(ref))
            expected = oracles.brute_force_seg_metrics(cand.tolist(), ref.tolist())
            for key, value in expected.items():
                assert getattr(ours, key) == value, key
            if ours.iou is not None:
                iou = Fraction(ours.tp, ours.tp + ours.fp + ours.fn)
                dice = Fraction(2 * ours.tp, 2 * ours.tp + ours.fp + ours.fn)
                assert dice == 2 * iou / (1 + iou)

        # gate thresholds, including strictness at every boundary
        passing = SegMetrics(0, 0, 0, 0, 0.524, 0.687, 0.541, 0.949, 0.670, 0.472)
        assert gate_segmentation(passing) is True
        for field, bound in (("iou", 0.5), ("dice", 0.2), ("precision", 0.1), ("recall", 0.2)):
            boundary = SegMetrics(
                0, 0, 0, 0,
                iou=bound if field == "iou" else 0.9,
                dice=bound if field == "dice" else 0.9,
                precision=bound if field == "precision" else 0.9,
                recall=bound if field == "recall" else 0.9,
                accuracy=None, specificity=None,
            )
            assert gate_segmentation(boundary) is False, field
        undefined = SegMetrics(0, 0, 0, 0, 0.9, 0.9, 0.9, None, None, None)
        assert gate_segmentation(undefined) is False


def test_gmm_em_recovery_and_monotonicity():
    with Budget("GMM EM recovery and log-likelihood monotonicity", 30):
        rng = np.random.default_rng(202)
        samples = np.concatenate(
            [rng.normal(0.2, 0.01, 2500), rng.normal(0.8, 0.01, 2500)]
        )
        model = fit_gmm(samples, k=2, seed=0)
        means = np.sort(model.means[:, 0])
        assert abs(means[0] - 0.2) <= 0.01
        assert abs(means[1] - 0.8) <= 0.01

        for trial in range(100):
            n = int(rng.integers(60, 200))
            d = int(rng.integers(1, 3))
            k = int(rng.integers(2, 4))
            data = rng.random((n, d))
            trace = np.asarray(
                fit_gmm(data, k=k, seed=trial, max_iter=60).log_likelihood_trace
            )
            assert np.all(np.diff(trace) >= -1e-7)


ZONES = ["America/New_York", "America/Chicago", "America/Denver", "America/Anchorage", "UTC"]


def test_solar_classification_against_oracle():
    with Budget("solar classification vs NOAA-equation oracle", 5):
        rng = np.random.default_rng(303)
        resolver = ZoneResolver()
        for _ in range(1000):
            lat = float(rng.uniform(25, 72))
            lon = float(rng.uniform(-170, -60))
            zone = ZONES[int(rng.integers(0, len(ZONES)))]
            site = SiteDescriptor("s", "S", "XX", lat, lon, "S", zone_id=zone)
            instant = datetime(2018, 1, 1, tzinfo=UTC) + timedelta(
                minutes=int(rng.integers(0, 7 * 365 * 24 * 60))
            )
            rec = ImageRecord("s", "S", "p.jpg", instant)
            ours = classify_day_night(rec, site, resolver).value
            expected = oracles.classify_with_worksheet(instant, lat, lon, ZoneInfo(zone))
            assert ours == expected

        # equator at equinox, in local solar time
        day = date(2022, 3, 20)
        ev = solar_events(day, 0.0, 0.0, "UTC")
        eqtime = oracles.noaa_worksheet_equation_of_time(day)
        sunrise_solar = ev.sunrise_local + timedelta(minutes=eqtime)
        sunset_solar = ev.sunset_local + timedelta(minutes=eqtime)
        assert abs((sunrise_solar - datetime(2022, 3, 20, 6, 0, tzinfo=UTC)).total_seconds()) <= 600
        assert abs((sunset_solar - datetime(2022, 3, 20, 18, 0, tzinfo=UTC)).total_seconds()) <= 600

        assert solar_events(date(2022, 6, 21), 80.0, 0.0, "UTC").regime == Regime.POLAR_DAY
        assert solar_events(date(2022, 12, 21), 80.0, 0.0, "UTC").regime == Regime.POLAR_NIGHT
        assert solar_events(date(2022, 6, 21), -80.0, 0.0, "UTC").regime == Regime.POLAR_NIGHT
        assert solar_events(date(2022, 12, 21), -80.0, 0.0, "UTC").regime == Regime.POLAR_DAY


def test_asof_merge_against_brute_force():
    with Budget("nearest-timestamp merge vs O(n*m) oracle", 20):
        rng = np.random.default_rng(404)
        directions = [Direction.NEAREST, Direction.BACKWARD, Direction.FORWARD]
        for instance in range(200):
            n = int(rng.integers(0, 501))
            m = int(rng.integers(0, 501))
            left = np.sort(rng.integers(0, 100_000, n)).astype(float).tolist()
            right = np.sort(rng.integers(0, 100_000, m)).astype(float).tolist()
            tolerance = float(rng.integers(1, 5_000))
            direction = directions[instance % 3]
            ours = match_nearest(left, right, tolerance, direction)
            expected = oracles.brute_force_match_dense(left, right, tolerance, direction.value)
            assert ours == expected, f"instance {instance} ({direction})"

        # the stated tie rule: equidistant neighbors resolve to the earlier
        assert match_nearest([100.0], [95.0, 105.0], 10.0, Direction.NEAREST) == [0]
        assert oracles.brute_force_match([100.0], [95.0, 105.0], 10.0, "nearest") == [0]


DESIGNED_COUNTS = {
    Parameter.CHLOROPHYLL_A: 281,
    Parameter.CHLOROPHYLLS: 127,
    Parameter.CDOM: 173,
    Parameter.PHYCOCYANIN: 188,
    Parameter.SUSPENDED_SEDIMENTS: 215,
    Parameter.TURBIDITY: 4801,
}
DESIGNED_UNITS = {
    Parameter.CHLOROPHYLL_A: "rfu",
    Parameter.CHLOROPHYLLS: "ug_l_650_700",
    Parameter.CDOM: "ppb_qse",
    Parameter.PHYCOCYANIN: "rfu",
    Parameter.SUSPENDED_SEDIMENTS: "mg_l_regression",
    Parameter.TURBIDITY: "fnu",
}


def test_data_dictionary_rules():
    with Budget("data-dictionary filters and unit selection", 20):
        from hydrocurate.align import AlignedSample
        from hydrocurate.ingest import ParameterId

        t0 = datetime(2022, 6, 1, tzinfo=UTC)
        rows = []
        for param, count in DESIGNED_COUNTS.items():
            pid = ParameterId(param, DESIGNED_UNITS[param])
            for i in range(count):
                rows.append(AlignedSample(f"{param.value}_{i}.jpg", "A", t0, t0,
                                          timedelta(0), pid, float(i % 40)))
            rows.append(AlignedSample(f"{param.value}_neg.jpg", "A", t0, t0,
                                      timedelta(0), pid, -2.0))
        datasets, summary = build_dictionary(rows)
        for param, count in DESIGNED_COUNTS.items():
            assert len(datasets[param]) == count
            assert summary.dropped_negative[param.value] == 1
        ratio = len(datasets[Parameter.TURBIDITY]) / len(datasets[Parameter.CHLOROPHYLLS])
        assert ratio == pytest.approx(480_125 / 12_681, rel=0.005)

        # max-non-null unit selection with the dominant-unit shape
        samples = []
        for i in range(60):
            values = {"turbidity_fnu": float(i)}
            if i < 3:
                values["turbidity_ntu"] = 1.0
            samples.append(ParameterSample("A", "A", t0 + timedelta(minutes=i), values))
        selection = select_units(samples)
        assert selection.chosen[Parameter.TURBIDITY] == "fnu"
        assert selection.counts[Parameter.TURBIDITY] == {
            "fnu": 60, "fbu": 0, "sbu": 0, "ntu": 3,
        }


def test_metric_suite_hand_cases():
    with Budget("metric suite hand cases and Lin inequality", 5):
        # CCC on (1,2,3)/(2,4,6): the spec's stated moments (s_x^2=2/3,
        # s_y^2=8/3, s_xy=4/3, means 2 and 4) give 4/11 under its formula;
        # the printed 4/13 is an arithmetic slip (see the decisions ledger).
        actual = np.array([1.0, 2.0, 3.0])
        predicted = np.array([2.0, 4.0, 6.0])
        expected = oracles.direct_ccc(actual.tolist(), predicted.tolist())
        assert expected == pytest.approx(4.0 / 11.0, abs=1e-15)
        assert concordance_ccc(actual, predicted) == pytest.approx(expected, abs=1e-15)

        mean = np.array([2.0, 2.0, 2.0, 2.0])
        assert r2_against_mean_baseline(
            PredictionSet(np.array([1.0, 2.0, 3.0, 2.0]), mean)
        ) == 0.0

        constant = regression_report(PredictionSet(np.array([1.0, 2.0, 3.0]),
                                                   np.array([2.0, 2.0, 2.0])))
        assert constant.pearson_r is None
        assert render_value(constant.pearson_r) == "NaN"

        rng = np.random.default_rng(505)
        exceeded_100 = False
        for _ in range(1000):
            n = int(rng.integers(2, 50))
            x = rng.normal(scale=rng.uniform(0.2, 4.0), size=n)
            y = rng.normal(scale=rng.uniform(0.2, 4.0), size=n) + rng.uniform(-2, 2)
            s = smape(x, y)
            assert 0.0 <= s <= 200.0
            exceeded_100 = exceeded_100 or s > 100.0
            r = pearson_r(x, y)
            c = concordance_ccc(x, y)
            if r is not None and c is not None:
                assert abs(c) <= abs(r) + 1e-12
        assert exceeded_100


def test_scheduler_traces():
    with Budget("scheduler endpoints and hand-enumerated traces", 5):
        assert cosine_lr(0, 100, 1e-3) == 1e-3
        assert cosine_lr(100, 100, 1e-3) == pytest.approx(0.0, abs=1e-19)
        assert cosine_lr(50, 100, 1e-3) == pytest.approx(5e-4)

        # early stop, patience 5: best at epoch 2, fires at epoch 7
        trace = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.9]
        decisions = [early_stop_decision(trace[:i], patience=5) for i in range(1, 8)]
        assert decisions == [False] * 6 + [True]

        # plateau, patience 2: fires at epoch 3 and again at epoch 5
        lr = 1e-3
        fired_epochs = []
        for i in range(1, 6):
            new_lr = plateau_lr([0.5] * i, lr, patience=2, factor=0.5)
            if new_lr != lr:
                fired_epochs.append(i)
            lr = new_lr
        assert fired_epochs == [3, 5]
        assert lr == pytest.approx(2.5e-4)

        # plateau, patience 1 (the high-volume preset): fires every stagnant epoch
        lr = 1e-3
        fired_epochs = []
        for i in range(1, 4):
            new_lr = plateau_lr([0.5] * i, lr, patience=1, factor=0.5)
            if new_lr != lr:
                fired_epochs.append(i)
            lr = new_lr
        assert fired_epochs == [2, 3]


def sample_random_config(space, rng):
    values = {}
    for dim in space.continuous:
        values[dim.name] = dim.from_unit(float(rng.random()))
    for dim in space.categorical:
        values[dim.name] = dim.choices[int(rng.integers(0, len(dim.choices)))]
    return values


def test_bayesian_optimization_beats_random_and_respects_bounds():
    with Budget("Bayesian optimization vs random search + bound fuzz", 120):
        space = default_space()

        bo_best, rs_best = [], []
        for seed in range(20):
            state = new_state(space)
            for _ in range(20):
                config = suggest(state, seed=seed)
                state = observe(state, config, quadratic_objective(config.values))
            bo_best.append(min(state.objectives))

            rng = np.random.default_rng(seed)
            rs_best.append(
                min(quadratic_objective(sample_random_config(space, rng)) for _ in range(20))
            )
        assert np.median(bo_best) < np.median(rs_best)

        # bound containment over 10,000 fuzzed suggestions on varied states
        states = [new_state(space)]
        state = new_state(space)
        rng = np.random.default_rng(606)
        for i in range(20):
            config = suggest(state, seed=999)
            state = observe(state, config, float(rng.uniform(0.1, 2.0)))
            if len(state.configs) in (2, 4, 6, 8, 12, 16, 20):
                states.append(state)
        heavy = [s for s in states if len(s.configs) >= 5]
        light = [s for s in states if len(s.configs) < 5]
        for i in range(10_000):
            pool = heavy if i % 5 == 0 else light
            st = pool[i % len(pool)]
            values = suggest(st, seed=i).values
            for dim in space.dimensions:
                assert dim.contains(values[dim.name]), (dim.name, values[dim.name])


MOCK = str(Path(__file__).parent / "mock_trainer.py")


def test_orchestrator_determinism_and_containment(tmp_path):
    with Budget("orchestrator determinism, early-stop trace, containment", 60):
        # hand-traced early stop: stop after epoch 7, best epoch 2
        script = tmp_path / "curve.txt"
        script.write_text("".join(f"{v}\n" for v in [1.0] + [0.9] * 6))
        spec = TrainerSpec(
            command=(sys.executable, MOCK, "--script", str(script)),
            architecture="densenet121", max_epochs=50, epoch_timeout_s=30.0,
        )
        from hydrocurate.hpo import TrialConfig

        outcome = run_trial(
            spec,
            TrialConfig("t0001", 1, {"dropout": 0.4, "l2": 1e-3, "learning_rate": 1e-4,
                                     "dense_units": 512, "optimizer": "adam"}),
            policies=[EarlyStopPolicy(patience=5)],
        )
        assert outcome.stopped_reason == StopReason.EARLY_STOP
        assert len(outcome.telemetry) == 7
        assert outcome.best_epoch == 2

        # byte-identical ledger across reruns
        study_spec = TrainerSpec(
            command=(sys.executable, MOCK, "--objective", "quadratic"),
            architecture="densenet121", max_epochs=8, epoch_timeout_s=30.0,
        )
        for name in ("a.jsonl", "b.jsonl"):
            run_study(study_spec, default_space(), budget=6, seed=17,
                      policies=[EarlyStopPolicy(patience=3)],
                      ledger_path=tmp_path / name)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

        # crash containment: failing trials recorded, study still completes
        crashing = TrainerSpec(
            command=(sys.executable, MOCK, "--objective", "quadratic",
                     "--crash-if-dropout-above", "0.42"),
            architecture="densenet121", max_epochs=8, epoch_timeout_s=30.0,
        )
        result = run_study(crashing, default_space(), budget=8, seed=2,
                           ledger_path=tmp_path / "c.jsonl")
        records = read_ledger(tmp_path / "c.jsonl")
        assert len(records) == 8
        assert any(r["status"] == "failed" for r in records)
        assert any(r["status"] == "ok" for r in records)
        result.incumbent  # raises if no successful trial


def test_end_to_end_funnel_and_determinism(e2e, tmp_path):
    with Budget("end-to-end pipeline on the 200-image corpus", 60):
        out_a = run_pipeline(e2e.config, tmp_path / "a")
        out_b = run_pipeline(e2e.config, tmp_path / "b")

        doc = json.loads((out_a / "funnel.json").read_text())
        funnel = [(s["name"], s["before"], s["after"]) for s in doc["stages"]]
        assert funnel == EXPECTED_FUNNEL

        summary = json.loads((out_a / "dictionary_summary.json").read_text())
        assert summary["rows_kept"] == EXPECTED_ROWS

        for name in ("catalog.csv", "parameters.csv", "catalog_day.csv", "segmetrics.csv",
                     "catalog_kept.csv", "funnel.json", "dictionary_summary.json",
                     "dataset_turbidity.csv", "dataset_cdom.csv",
                     "dataset_chlorophyll_a.csv"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes(), name


def test_filename_grammar_bijection_1000():
    with Budget("filename grammar bijection on 1,000 generated names", 5):
        rng = np.random.default_rng(707)
        alphabet = list("ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_-")
        for _ in range(1000):
            length = int(rng.integers(1, 30))
            site = "".join(rng.choice(alphabet) for _ in range(length))
            while site.startswith("_"):
                site = "x" + site[1:]
            ts = datetime(2018, 1, 1, tzinfo=UTC) + timedelta(
                seconds=int(rng.integers(0, 200_000_000))
            )
            sep = "-" if rng.random() < 0.5 else ":"
            name = format_image_filename(site, ts, time_separator=sep)
            parsed_site, parsed_ts = parse_image_filename(name)
            assert (parsed_site, parsed_ts) == (site, ts)
            assert format_image_filename(parsed_site, parsed_ts, time_separator=sep) == name
