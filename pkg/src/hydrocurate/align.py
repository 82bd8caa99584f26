"""Nearest-timestamp alignment of the day-filtered catalog with the
parameter series, unit selection, and per-parameter dataset assembly."""

from __future__ import annotations

import logging
import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Optional

import numpy as np

from .errors import EmptyInput, MixedOffsets, UnsortedInput
from .ingest import (
    PARAMETER_UNITS,
    ImageRecord,
    Parameter,
    ParameterId,
    ParameterSample,
)

log = logging.getLogger("hydrocurate.align")


class Direction(str, Enum):
    NEAREST = "nearest"
    BACKWARD = "backward"
    FORWARD = "forward"


@dataclass(frozen=True)
class AlignedSample:
    """One image joined to its temporally nearest measurement."""

    image_path: str
    site_code: str
    image_time_utc: datetime
    sample_time_utc: datetime
    gap: timedelta  # sample minus image, signed
    parameter: ParameterId
    value: float


@dataclass
class UnitSelection:
    """Unit choice per parameter by maximum non-null count."""

    chosen: dict[Parameter, str] = field(default_factory=dict)
    counts: dict[Parameter, dict[str, int]] = field(default_factory=dict)
    ties: list[Parameter] = field(default_factory=list)
    excluded: list[Parameter] = field(default_factory=list)  # all units null

    def chosen_slots(self) -> dict[Parameter, str]:
        return {p: f"{p.value}_{u}" for p, u in self.chosen.items()}


def select_units(samples: list[ParameterSample]) -> UnitSelection:
    """Pick, per parameter, the unit column with the most non-null values.

    Ties break toward the earlier unit in the catalog listing order; a
    parameter whose units are all null is excluded with a warning.
    """
    if not samples:
        raise EmptyInput("no parameter samples to count")
    selection = UnitSelection()
    for param, units in PARAMETER_UNITS.items():
        counts = {}
        for unit in units:
            slot = f"{param.value}_{unit}"
            counts[unit] = sum(1 for s in samples if s.values[slot] is not None)
        selection.counts[param] = counts
        best_unit = max(units, key=lambda u: counts[u])
        # max() keeps the earliest unit on ties because of listing order
        best = counts[best_unit]
        if best == 0:
            selection.excluded.append(param)
            log.warning("parameter %s has no non-null values in any unit", param.value)
            continue
        if sum(1 for u in units if counts[u] == best) > 1:
            selection.ties.append(param)
        selection.chosen[param] = best_unit
    return selection


def match_nearest(
    left_times: list[float],
    right_times: list[float],
    tolerance: float,
    direction: Direction = Direction.NEAREST,
) -> list[Optional[int]]:
    """Index into right_times for each left time, or None when nothing lies
    within tolerance. Both inputs must be ascending.

    Nearest breaks exact-distance ties toward the earlier sample; equal
    timestamps resolve to the first index.
    """

    def first_index_of(j: int) -> int:
        return bisect_left(right_times, right_times[j])

    out: list[Optional[int]] = []
    for t in left_times:
        back = bisect_right(right_times, t) - 1
        fwd = bisect_left(right_times, t)
        back_ok = back >= 0 and (t - right_times[back]) <= tolerance
        fwd_ok = fwd < len(right_times) and (right_times[fwd] - t) <= tolerance
        if direction == Direction.BACKWARD:
            out.append(first_index_of(back) if back_ok else None)
        elif direction == Direction.FORWARD:
            out.append(fwd if fwd_ok else None)
        else:
            if back_ok and fwd_ok:
                gap_back = t - right_times[back]
                gap_fwd = right_times[fwd] - t
                j = back if gap_back <= gap_fwd else fwd  # tie -> earlier
            elif back_ok:
                j = back
            elif fwd_ok:
                j = fwd
            else:
                out.append(None)
                continue
            out.append(first_index_of(j))
    return out


@dataclass
class MergeStats:
    matched_images: int = 0
    dropped_images: int = 0
    emitted: dict[str, int] = field(default_factory=dict)
    site_name_mismatches: int = 0


def _check_times(times: list[datetime], what: str, site: str) -> list[float]:
    for t in times:
        if t.tzinfo is None:
            raise MixedOffsets(f"{what} for site {site} carries a naive timestamp")
    seconds = [t.timestamp() for t in times]
    if any(a > b for a, b in zip(seconds, seconds[1:])):
        raise UnsortedInput(f"{what} for site {site} not ascending by timestamp")
    return seconds


def asof_merge(
    images: list[ImageRecord],
    samples: list[ParameterSample],
    tolerance: timedelta,
    direction: Direction = Direction.NEAREST,
    selection: Optional[UnitSelection] = None,
    stats: Optional[MergeStats] = None,
) -> list[AlignedSample]:
    """Match each image to at most one sample row per site, then emit one
    AlignedSample per non-null measurement slot of the matched row.

    With a UnitSelection only the chosen slot per parameter is emitted;
    otherwise every slot is. Images with no sample within tolerance drop
    with a count. Output is ordered by (site_code, image time).
    """
    stats = stats if stats is not None else MergeStats()
    if selection is None:
        slots = {ParameterId(p, u): f"{p.value}_{u}" for p, us in PARAMETER_UNITS.items() for u in us}
    else:
        slots = {ParameterId(p, selection.chosen[p]): slot for p, slot in selection.chosen_slots().items()}

    images_by_site: dict[str, list[ImageRecord]] = {}
    for rec in images:
        images_by_site.setdefault(rec.site_code, []).append(rec)
    samples_by_site: dict[str, list[ParameterSample]] = {}
    for s in samples:
        samples_by_site.setdefault(s.site_code, []).append(s)

    out: list[AlignedSample] = []
    tol_s = tolerance.total_seconds()
    for site in sorted(images_by_site):
        recs = images_by_site[site]
        rows = samples_by_site.get(site, [])
        left = _check_times([r.captured_utc for r in recs], "images", site)
        right = _check_times([s.timestamp for s in rows], "samples", site)
        matches = match_nearest(left, right, tol_s, direction)
        for rec, j in zip(recs, matches):
            if j is None:
                stats.dropped_images += 1
                continue
            stats.matched_images += 1
            row = rows[j]
            if row.site_name != rec.site_name:
                stats.site_name_mismatches += 1
                log.warning(
                    "site %s: image name %r vs sample name %r", site, rec.site_name, row.site_name
                )
            for pid, slot in slots.items():
                value = row.values[slot]
                if value is None:
                    continue
                out.append(
                    AlignedSample(
                        image_path=rec.path,
                        site_code=site,
                        image_time_utc=rec.captured_utc,
                        sample_time_utc=row.timestamp,
                        gap=row.timestamp - rec.captured_utc,
                        parameter=pid,
                        value=value,
                    )
                )
                stats.emitted[slot] = stats.emitted.get(slot, 0) + 1
    return out


@dataclass
class DictionarySummary:
    kept: dict[str, int] = field(default_factory=dict)          # parameter -> rows
    dropped_negative: dict[str, int] = field(default_factory=dict)


def build_dictionary(
    aligned: list[AlignedSample],
) -> tuple[dict[Parameter, list[tuple[str, float]]], DictionarySummary]:
    """Per-parameter (image_path, value) rows, keeping only finite,
    non-negative values; zero is included."""
    datasets: dict[Parameter, list[tuple[str, float]]] = {}
    summary = DictionarySummary()
    for row in aligned:
        param = row.parameter.parameter
        summary.kept.setdefault(param.value, 0)
        summary.dropped_negative.setdefault(param.value, 0)
        if not math.isfinite(row.value) or row.value < 0.0:
            summary.dropped_negative[param.value] += 1
            continue
        datasets.setdefault(param, []).append((row.image_path, row.value))
        summary.kept[param.value] += 1
    return datasets, summary


def split_train_val(dataset: list, fraction: float = 0.8, seed: int = 0) -> tuple[list, list]:
    """Deterministic shuffled split; train gets ceil(fraction * n) rows."""
    if not dataset:
        raise EmptyInput("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie strictly between 0 and 1")
    order = np.random.default_rng(seed).permutation(len(dataset))
    n_train = math.ceil(fraction * len(dataset))
    train = [dataset[i] for i in order[:n_train]]
    val = [dataset[i] for i in order[n_train:]]
    return train, val
