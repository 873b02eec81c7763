"""Shared builders for the test suite.

The random single-cell instance generator is deliberately nasty: shared
venues, bursts at identical timestamps, time deltas quantized so the window
boundary is hit exactly, mixed radii, and far-away excursions that create
contradiction evidence.
"""

from __future__ import annotations

import math
import random
from pathlib import Path

import pytest

from geolink import linkage, temporal
from geolink.model import METERS_PER_DEG_LAT, DatasetTag, Event, Params, Region
from geolink.store import EventLog, UserEventIndex


def region(lat: float, lon: float, radius: float = 100.0, place_id: str | None = None) -> Region:
    return Region(lat=lat, lon=lon, radius=radius, place_id=place_id)


def offset_region(base: Region, north_m: float, east_m: float, radius: float | None = None) -> Region:
    """A region displaced from ``base`` by metric offsets (small-angle)."""
    dlat = north_m / METERS_PER_DEG_LAT
    dlon = east_m / (METERS_PER_DEG_LAT * math.cos(math.radians(base.lat)))
    return Region(
        lat=base.lat + dlat,
        lon=base.lon + dlon,
        radius=base.radius if radius is None else radius,
        place_id=base.place_id,
    )


def make_log(tag: DatasetTag, rows: list[tuple[str, int, Region]]) -> EventLog:
    """Build a sorted event log; user names get the side prefix if missing."""
    events = []
    for seq, (user, time, reg) in enumerate(rows):
        if not user.startswith(tag.value + ":"):
            user = tag.qualify(user)
        events.append(Event(user=user, tag=tag, time=time, region=reg, seq=seq))
    events.sort(key=lambda ev: (ev.time, ev.user, ev.seq))
    return EventLog(tag=tag, events=events)


def random_single_cell(
    seed: int,
    n_i: int = 25,
    n_e: int = 18,
    events_mean: int = 10,
    n_venues: int = 9,
    area_m: float = 2_500.0,
    span: int = 86_400,
    alpha: int = 1_800,
) -> tuple[EventLog, EventLog]:
    """Random co-located instance small enough for the brute-force reference.

    All venues sit inside one ``area_m`` square, far below the default grid
    cell edge, so spatial partitioning cannot drop any candidate pair.
    """
    rng = random.Random(seed)
    lat0, lon0 = 38.7, 34.2
    venues = []
    for v in range(n_venues):
        venues.append(
            offset_region(
                region(lat0, lon0, radius=rng.choice([40.0, 80.0, 150.0]), place_id=f"v{v}"),
                north_m=rng.uniform(0, area_m),
                east_m=rng.uniform(0, area_m),
            )
        )
    # A couple of remote spots: visiting one while a partner stays in town
    # is an outright contradiction (too far to travel within the window).
    remote = [
        offset_region(region(lat0, lon0, radius=60.0, place_id=f"far{j}"), north_m=90_000.0 + 30_000.0 * j, east_m=0.0)
        for j in range(2)
    ]

    def one_side(tag: DatasetTag, n_users: int) -> EventLog:
        rows = []
        for u in range(n_users):
            name = f"{tag.value.lower()}{u:03d}"
            count = max(2, int(rng.gauss(events_mean, events_mean / 3)))
            for _ in range(count):
                # Quantized times make exact boundary deltas (0, alpha) common.
                t = rng.randrange(0, span, alpha // 4)
                if rng.random() < 0.06:
                    rows.append((name, t, rng.choice(remote)))
                else:
                    rows.append((name, t, rng.choice(venues)))
        return make_log(tag, rows)

    return one_side(DatasetTag.I, n_i), one_side(DatasetTag.E, n_e)


def engine_scan(
    log_i: EventLog,
    log_e: EventLog,
    params: Params,
    root: Path,
    forward_only: bool = False,
) -> tuple[temporal.CandidateState, UserEventIndex, temporal.ScanStats]:
    stats = temporal.ScanStats()
    idx = UserEventIndex(root)
    cs = temporal.forward_scan(log_i, log_e, params, idx, stats)
    if not forward_only:
        temporal.reverse_scan(log_i, log_e, cs, params, stats)
    return cs, idx, stats


def engine_link(
    log_i: EventLog,
    log_e: EventLog,
    params: Params,
    root: Path,
    weighted: bool = True,
    forward_only: bool = False,
) -> tuple[linkage.LinkResult, temporal.CandidateState, temporal.ScanStats]:
    cs, idx, stats = engine_scan(log_i, log_e, params, root, forward_only=forward_only)
    result = linkage.link(cs, idx, params, weighted=weighted)
    return result, cs, stats


@pytest.fixture
def base_params() -> Params:
    return Params()
