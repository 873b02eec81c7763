"""Windowed temporal filtering: forward and reverse scans over a cell.

The forward scan slides a closed window of span alpha over both event logs at
once. On each insertion the new event is checked against the opposite side's
in-window events: spatially intersecting ones become co-occurrences (and feed
the per-event distinct-user match counts), mutually exclusive ones raise the
pair's alibi tally. A user pair enters the candidate set on its first
co-occurrence while its alibi tally is within the threshold, and is evicted
the moment the tally exceeds it; evicted pairs never re-enter.

The forward pass can only tally alibi events seen while a pair is already a
candidate, so a reverse pass re-slides the window backward with all tallies
reset and recounts every alibi event pair of the surviving candidates; each
such pair is examined exactly once during the sweep. Pairs whose full tally
exceeds the threshold are evicted. After the reverse pass the candidate set
contains exactly the pairs with at least one co-occurrence and an exhaustive
alibi count within the threshold.

Events are written to the per-user index as they leave the forward window,
carrying their final match counts.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

from .model import (
    METERS_PER_DEG_LAT,
    DatasetTag,
    Event,
    MatchCounts,
    Params,
    Region,
    is_alibi,
    regions_intersect,
    temporally_close,
)
from .store import EventLog, UserEventIndex

__all__ = [
    "ScanStats",
    "CandidateState",
    "WindowSpatialIndex",
    "window_slides",
    "forward_scan",
    "reverse_scan",
]


@dataclass
class ScanStats:
    """Cheap counters for one scan pass; serializable for per-cell reports."""

    events_i: int = 0
    events_e: int = 0
    c_checks: int = 0
    a_checks: int = 0
    pairs_admitted: int = 0
    evicted_forward: int = 0
    evicted_reverse: int = 0
    max_window_events: int = 0
    out_of_window_comparisons: int = 0  # stays 0; asserted by invariant tests

    @property
    def comparisons(self) -> int:
        return self.c_checks + self.a_checks

    def as_dict(self) -> dict:
        return {
            "events_i": self.events_i,
            "events_e": self.events_e,
            "c_checks": self.c_checks,
            "a_checks": self.a_checks,
            "comparisons": self.comparisons,
            "pairs_admitted": self.pairs_admitted,
            "evicted_forward": self.evicted_forward,
            "evicted_reverse": self.evicted_reverse,
            "max_window_events": self.max_window_events,
            "out_of_window_comparisons": self.out_of_window_comparisons,
        }

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class CandidateState:
    """Candidate user pairs plus alibi tallies and admission bookkeeping.

    Pairs are keyed (user_I, user_E). Alibi tallies outlive eviction so an
    over-threshold pair can never be re-admitted; the candidate set itself
    never contains a pair whose known tally exceeds the threshold.
    """

    def __init__(self) -> None:
        self._partners: dict[str, set[str]] = {}
        self.admitted_at: dict[tuple[str, str], int] = {}
        self.alibi_counts: dict[tuple[str, str], int] = {}
        self.evicted: set[tuple[str, str]] = set()

    @staticmethod
    def pair_key(user_a: str, user_b: str) -> tuple[str, str]:
        if user_a.startswith("I:"):
            return (user_a, user_b)
        return (user_b, user_a)

    def has(self, pair: tuple[str, str]) -> bool:
        return pair in self.admitted_at

    def admit(self, pair: tuple[str, str], now: int) -> bool:
        """Admit unless present or evicted; keeps the first admission time."""
        if pair in self.admitted_at or pair in self.evicted:
            return False
        self.admitted_at[pair] = now
        self._partners.setdefault(pair[0], set()).add(pair[1])
        self._partners.setdefault(pair[1], set()).add(pair[0])
        return True

    def evict(self, pair: tuple[str, str]) -> None:
        self.admitted_at.pop(pair, None)
        self.evicted.add(pair)
        self._partners.get(pair[0], set()).discard(pair[1])
        self._partners.get(pair[1], set()).discard(pair[0])

    def partners_of(self, user: str) -> tuple[str, ...]:
        partners = self._partners.get(user)
        return tuple(sorted(partners)) if partners else ()

    def alibi_count(self, pair: tuple[str, str]) -> int:
        return self.alibi_counts.get(pair, 0)

    def add_alibi(self, pair: tuple[str, str]) -> int:
        n = self.alibi_counts.get(pair, 0) + 1
        self.alibi_counts[pair] = n
        return n

    def reset_alibi_counts(self) -> None:
        self.alibi_counts = {}

    def pairs(self) -> list[tuple[str, str]]:
        return sorted(self.admitted_at)

    def __len__(self) -> int:
        return len(self.admitted_at)


class WindowSpatialIndex:
    """Uniform hash grid over the in-window events of one side.

    Bucket edges are sized to the largest region diameter seen in the cell,
    so any two intersecting regions land in the same or adjacent buckets:
    queries overapproximate (callers re-check exact intersection) but never
    miss. Insert/remove are O(1); query cost scales with local density.
    """

    def __init__(self, max_radius_m: float, reference_lat: float) -> None:
        # Degenerate all-point datasets still need a positive bucket edge.
        edge_m = max(2.0 * max_radius_m, 1.0)
        self.max_radius_m = max_radius_m
        self._lat_edge_deg = edge_m / METERS_PER_DEG_LAT
        cos_ref = max(0.01, math.cos(math.radians(reference_lat)))
        self._lon_edge_deg = edge_m / (METERS_PER_DEG_LAT * cos_ref)
        self._buckets: dict[tuple[int, int], list[Event]] = {}

    def _bucket(self, lat: float, lon: float) -> tuple[int, int]:
        return (math.floor(lat / self._lat_edge_deg), math.floor(lon / self._lon_edge_deg))

    def insert(self, ev: Event) -> None:
        self._buckets.setdefault(self._bucket(ev.region.lat, ev.region.lon), []).append(ev)

    def remove(self, ev: Event) -> None:
        key = self._bucket(ev.region.lat, ev.region.lon)
        bucket = self._buckets.get(key)
        if bucket:
            try:
                bucket.remove(ev)
            except ValueError:
                pass
            if not bucket:
                del self._buckets[key]

    def query_intersecting(self, region: Region) -> tuple[list[Event], int]:
        """(exact matches, candidates examined) for disk-intersection."""
        reach_m = region.radius + self.max_radius_m
        dlat = reach_m / METERS_PER_DEG_LAT / self._lat_edge_deg
        dlon = reach_m / (METERS_PER_DEG_LAT * max(0.01, math.cos(region.lat_rad))) / self._lon_edge_deg
        row0 = math.floor(region.lat / self._lat_edge_deg - dlat)
        row1 = math.floor(region.lat / self._lat_edge_deg + dlat)
        col0 = math.floor(region.lon / self._lon_edge_deg - dlon)
        col1 = math.floor(region.lon / self._lon_edge_deg + dlon)
        matches: list[Event] = []
        examined = 0
        for row in range(row0, row1 + 1):
            for col in range(col0, col1 + 1):
                bucket = self._buckets.get((row, col))
                if not bucket:
                    continue
                for other in bucket:
                    examined += 1
                    if regions_intersect(region, other.region):
                        matches.append(other)
        return matches, examined


def window_slides(
    log_i: EventLog,
    log_e: EventLog,
    alpha: int,
    reverse: bool = False,
) -> Iterator[tuple[int, list[Event], list[Event], list[Event], list[Event]]]:
    """Yield (t, inserted_i, inserted_e, removed_i, removed_e) per slide.

    The cursor advances one distinct timestamp at a time. The window is the
    closed interval of span alpha ending (forward) or starting (reverse) at
    the cursor, so events exactly alpha apart are co-resident once; removals
    are events that just fell strictly outside.
    """
    evs_i = log_i.events if not reverse else list(reversed(log_i.events))
    evs_e = log_e.events if not reverse else list(reversed(log_e.events))
    win_i: deque[Event] = deque()
    win_e: deque[Event] = deque()
    pi = pe = 0
    sign = -1 if reverse else 1
    while pi < len(evs_i) or pe < len(evs_e):
        times = []
        if pi < len(evs_i):
            times.append(evs_i[pi].time)
        if pe < len(evs_e):
            times.append(evs_e[pe].time)
        t = max(times) if reverse else min(times)

        removed_i: list[Event] = []
        removed_e: list[Event] = []
        while win_i and sign * (t - win_i[0].time) > alpha:
            removed_i.append(win_i.popleft())
        while win_e and sign * (t - win_e[0].time) > alpha:
            removed_e.append(win_e.popleft())

        inserted_i: list[Event] = []
        inserted_e: list[Event] = []
        while pi < len(evs_i) and evs_i[pi].time == t:
            inserted_i.append(evs_i[pi])
            pi += 1
        while pe < len(evs_e) and evs_e[pe].time == t:
            inserted_e.append(evs_e[pe])
            pe += 1
        win_i.extend(inserted_i)
        win_e.extend(inserted_e)
        yield t, inserted_i, inserted_e, removed_i, removed_e
    # Final drain: everything still resident leaves the window.
    yield (win_i[0].time if win_i else 0), [], [], list(win_i), list(win_e)


def _max_radius(*logs: EventLog) -> float:
    radius = 0.0
    for log in logs:
        for ev in log.events:
            if ev.region.radius > radius:
                radius = ev.region.radius
    return radius


def _reference_lat(*logs: EventLog) -> float:
    # Widest longitude degrees happen at the highest |lat| in the data; using
    # it for bucket sizing keeps the hash grid conservative (no false misses).
    ref = 0.0
    for log in logs:
        for ev in log.events:
            if abs(ev.region.lat) > abs(ref):
                ref = ev.region.lat
    return ref


def forward_scan(
    log_i: EventLog,
    log_e: EventLog,
    params: Params,
    idx: Optional[UserEventIndex] = None,
    stats: Optional[ScanStats] = None,
) -> CandidateState:
    """Forward pass: build the candidate set and write the match-count index.

    For each inserted event, co-occurrence handling runs before the alibi
    sweep, and I-side insertions of a slide are processed (and made visible)
    before E-side ones. Match sets are updated for every co-occurrence, even
    for pairs the alibi gate keeps out of the candidate set: match counts are
    plain co-occurrence cardinalities.
    """
    stats = stats if stats is not None else ScanStats()
    stats.events_i += len(log_i)
    stats.events_e += len(log_e)
    cs = CandidateState()
    counts = MatchCounts()
    a = params.alibi_threshold

    max_radius = _max_radius(log_i, log_e)
    ref_lat = _reference_lat(log_i, log_e)
    ls = {
        DatasetTag.I: WindowSpatialIndex(max_radius, ref_lat),
        DatasetTag.E: WindowSpatialIndex(max_radius, ref_lat),
    }
    ui: dict[DatasetTag, dict[str, list[Event]]] = {DatasetTag.I: {}, DatasetTag.E: {}}
    resident = 0

    def retire(ev: Event) -> None:
        ls[ev.tag].remove(ev)
        user_events = ui[ev.tag].get(ev.user)
        if user_events is not None:
            user_events.remove(ev)
            if not user_events:
                del ui[ev.tag][ev.user]
        if idx is not None:
            idx.put(ev, counts.pop_count(ev))
        else:
            counts.pop_count(ev)

    def process_insert(ev: Event, now: int) -> None:
        nonlocal resident
        opp = ev.tag.opposite
        # Co-occurrences against the opposite window.
        hits, examined = ls[opp].query_intersecting(ev.region)
        stats.c_checks += examined
        for other in hits:
            if not temporally_close(ev.time, other.time, params.alpha):
                stats.out_of_window_comparisons += 1
                continue
            counts.record(ev, other.user)
            counts.record(other, ev.user)
            pair = cs.pair_key(ev.user, other.user)
            if cs.alibi_count(pair) <= a and cs.admit(pair, now):
                stats.pairs_admitted += 1
        # Alibi sweep over current partners' in-window events.
        opp_ui = ui[opp]
        for partner in cs.partners_of(ev.user):
            pair = cs.pair_key(ev.user, partner)
            for other in opp_ui.get(partner, ()):
                stats.a_checks += 1
                if is_alibi(ev, other, params):
                    if cs.add_alibi(pair) > a:
                        cs.evict(pair)
                        stats.evicted_forward += 1
                        break
        # The event becomes visible to later insertions.
        ls[ev.tag].insert(ev)
        ui[ev.tag].setdefault(ev.user, []).append(ev)
        resident += 1
        stats.max_window_events = max(stats.max_window_events, resident)

    for t, ins_i, ins_e, rem_i, rem_e in window_slides(log_i, log_e, params.alpha):
        for ev in rem_i:
            retire(ev)
        for ev in rem_e:
            retire(ev)
        resident -= len(rem_i) + len(rem_e)
        for ev in ins_i:
            process_insert(ev, t)
        for ev in ins_e:
            process_insert(ev, t)

    if idx is not None:
        idx.finalize()
    return cs


def reverse_scan(
    log_i: EventLog,
    log_e: EventLog,
    cs: CandidateState,
    params: Params,
    stats: Optional[ScanStats] = None,
) -> CandidateState:
    """Backward pass: exhaustively recount candidate alibi tallies.

    Tallies reset on entry; the sweep examines each alibi event pair of every
    still-admitted candidate exactly once, evicting pairs whose full count
    exceeds the threshold. No admissions, no index writes.
    """
    stats = stats if stats is not None else ScanStats()
    cs.reset_alibi_counts()
    a = params.alibi_threshold
    ui: dict[DatasetTag, dict[str, list[Event]]] = {DatasetTag.I: {}, DatasetTag.E: {}}

    def retire(ev: Event) -> None:
        user_events = ui[ev.tag].get(ev.user)
        if user_events is not None:
            user_events.remove(ev)
            if not user_events:
                del ui[ev.tag][ev.user]

    def process_insert(ev: Event) -> None:
        opp_ui = ui[ev.tag.opposite]
        for partner in cs.partners_of(ev.user):
            pair = cs.pair_key(ev.user, partner)
            for other in opp_ui.get(partner, ()):
                stats.a_checks += 1
                if is_alibi(ev, other, params):
                    if cs.add_alibi(pair) > a:
                        cs.evict(pair)
                        stats.evicted_reverse += 1
                        break
        ui[ev.tag].setdefault(ev.user, []).append(ev)

    for _, ins_i, ins_e, rem_i, rem_e in window_slides(log_i, log_e, params.alpha, reverse=True):
        for ev in rem_i:
            retire(ev)
        for ev in rem_e:
            retire(ev)
        for ev in ins_i:
            process_insert(ev)
        for ev in ins_e:
            process_insert(ev)
    return cs
