"""Windowed scans: slides, admissions, evictions, counts, and equivalence
with a direct enumeration of all cross-side event pairs."""

from __future__ import annotations

import itertools

import pytest

from conftest import engine_scan, make_log, offset_region, random_single_cell, region
from geolink import temporal
from geolink.model import (
    DatasetTag,
    Event,
    Params,
    co_occurs,
    is_alibi,
    regions_intersect,
)
from geolink.store import EventLog


def _two_user_logs(i_rows, e_rows):
    return make_log(DatasetTag.I, i_rows), make_log(DatasetTag.E, e_rows)


# ---------------------------------------------------------------------------
# Window mechanics.


def test_window_slides_closed_boundary():
    """Events exactly one window apart are co-resident at the later slide."""
    home = region(40.0, 30.0)
    log_i, log_e = _two_user_logs([("x", 0, home)], [("y", 1800, home)])
    slides = list(temporal.window_slides(log_i, log_e, alpha=1800))
    # At t=1800 the t=0 event must not have been removed yet.
    removed_before_insert = [
        (t, rem_i) for t, ins_i, ins_e, rem_i, rem_e in slides if ins_e
    ]
    assert removed_before_insert == [(1800, [])]


def test_window_slides_evicts_older_than_alpha():
    home = region(40.0, 30.0)
    log_i, log_e = _two_user_logs([("x", 0, home)], [("y", 1801, home)])
    slides = list(temporal.window_slides(log_i, log_e, alpha=1800))
    at_insert = [(t, [ev.time for ev in rem_i]) for t, ins_i, ins_e, rem_i, rem_e in slides if ins_e]
    assert at_insert == [(1801, [0])]


def test_window_slides_cover_every_event_once():
    log_i, log_e = random_single_cell(seed=11, n_i=8, n_e=8)
    inserted = []
    removed = []
    for _, ins_i, ins_e, rem_i, rem_e in temporal.window_slides(log_i, log_e, alpha=1800):
        inserted.extend(ins_i)
        inserted.extend(ins_e)
        removed.extend(rem_i)
        removed.extend(rem_e)
    assert len(inserted) == len(log_i) + len(log_e)
    assert sorted(removed, key=lambda e: (e.tag.value, e.seq)) == sorted(
        inserted, key=lambda e: (e.tag.value, e.seq)
    )


# ---------------------------------------------------------------------------
# Forward scan basics.


def test_forward_scan_admits_co_occurring_pair(tmp_path):
    home = region(40.0, 30.0, place_id="home")
    log_i, log_e = _two_user_logs([("x", 100, home)], [("y", 200, home)])
    cs, idx, stats = engine_scan(log_i, log_e, Params(), tmp_path)
    assert cs.pairs() == [("I:x", "E:y")]
    assert cs.admitted_at[("I:x", "E:y")] == 200
    assert stats.pairs_admitted == 1


def test_forward_scan_respects_radius(tmp_path):
    a = region(40.0, 30.0, radius=100.0)
    b = offset_region(a, north_m=5_000.0, east_m=0.0)  # 5km apart, no overlap
    log_i, log_e = _two_user_logs([("x", 100, a)], [("y", 120, b)])
    cs, _, _ = engine_scan(log_i, log_e, Params(), tmp_path)
    assert cs.pairs() == []


def test_forward_scan_in_window_alibi_evicts(tmp_path):
    """Contradiction arriving while the link evidence is still in-window."""
    home = region(40.0, 30.0)
    away = offset_region(home, north_m=90_000.0, east_m=0.0)
    log_i, log_e = _two_user_logs(
        [("x", 0, home), ("x", 600, away)],
        [("y", 0, home)],
    )
    # x and y share `home` at t=0; at t=600 x shows up 90km away, which the
    # speed bound (42 m/s * 600s = 25.2km) cannot explain.
    cs, _, stats = engine_scan(log_i, log_e, Params(alibi_threshold=0), tmp_path, forward_only=True)
    assert cs.pairs() == []
    assert stats.evicted_forward == 1
    # With a tolerance of one contradiction the pair survives.
    cs2, _, _ = engine_scan(log_i, log_e, Params(alibi_threshold=1), tmp_path / "b", forward_only=True)
    assert cs2.pairs() == [("I:x", "E:y")]


def reverse_necessity_fixture():
    """Four events: the contradiction happens long before the co-occurrence.

    At t=0 the two users are 90km apart (an alibi at zero time delta). Their
    only co-occurrence is at t=5000, by which time the t=0 events have left
    the window, so a forward-only scan never sees the contradiction.
    """
    home = region(40.0, 30.0, place_id="home")
    away = offset_region(home, north_m=90_000.0, east_m=0.0)
    log_i = make_log(DatasetTag.I, [("x", 0, home), ("x", 5000, home)])
    log_e = make_log(DatasetTag.E, [("y", 0, away), ("y", 5000, home)])
    return log_i, log_e


def test_reverse_scan_catches_out_of_window_alibi(tmp_path):
    log_i, log_e = reverse_necessity_fixture()
    params = Params(alibi_threshold=0)
    fwd, _, _ = engine_scan(log_i, log_e, params, tmp_path / "f", forward_only=True)
    assert fwd.pairs() == [("I:x", "E:y")], "forward-only scan must miss the old alibi"
    full, _, stats = engine_scan(log_i, log_e, params, tmp_path / "r")
    assert full.pairs() == []
    assert stats.evicted_reverse == 1


def test_reverse_scan_only_removes(tmp_path):
    for seed in range(6):
        log_i, log_e = random_single_cell(seed=seed, n_i=10, n_e=8, events_mean=7)
        params = Params(alibi_threshold=1, k=1, l=1)
        fwd, _, _ = engine_scan(log_i, log_e, params, tmp_path / f"f{seed}", forward_only=True)
        full, _, _ = engine_scan(log_i, log_e, params, tmp_path / f"r{seed}")
        assert set(full.pairs()) <= set(fwd.pairs())


# ---------------------------------------------------------------------------
# Match counts.


def test_match_counts_from_crowding(tmp_path):
    """Counts are distinct opposite-side users co-occurring with an event."""
    venue = region(40.0, 30.0, place_id="bar")
    log_i = make_log(DatasetTag.I, [("a", 1000, venue), ("b", 1010, venue)])
    log_e = make_log(DatasetTag.E, [("p", 1005, venue), ("q", 1020, venue), ("r", 1030, venue)])
    _, idx, _ = engine_scan(log_i, log_e, Params(), tmp_path)
    counts = {ev.user: c for ev, c in itertools.chain(idx.scan_user("I:a"), idx.scan_user("I:b"))}
    assert counts == {"I:a": 3, "I:b": 3}
    e_counts = {ev.user: c for u in ("E:p", "E:q", "E:r") for ev, c in idx.scan_user(u)}
    assert e_counts == {"E:p": 2, "E:q": 2, "E:r": 2}


def test_match_counts_recorded_even_for_evicted_pairs(tmp_path):
    """Count bookkeeping ignores the alibi gate entirely."""
    home = region(40.0, 30.0)
    away = offset_region(home, north_m=90_000.0, east_m=0.0)
    log_i = make_log(DatasetTag.I, [("x", 0, home), ("x", 600, away)])
    log_e = make_log(DatasetTag.E, [("y", 0, home)])
    _, idx, _ = engine_scan(log_i, log_e, Params(alibi_threshold=0), tmp_path)
    got = {(ev.user, ev.time): c for u in ("I:x", "E:y") for ev, c in idx.scan_user(u)}
    assert got[("I:x", 0)] == 1
    assert got[("E:y", 0)] == 1
    assert got[("I:x", 600)] == 0


# ---------------------------------------------------------------------------
# Spatial window index.


def test_window_spatial_index_matches_linear_scan():
    import random as _random

    rng = _random.Random(13)
    base = region(40.0, 30.0)
    events = []
    for i in range(300):
        r = offset_region(
            base,
            north_m=rng.uniform(0, 4_000),
            east_m=rng.uniform(0, 4_000),
            radius=rng.choice([30.0, 120.0, 400.0]),
        )
        events.append(Event(user=f"I:u{i%7}", tag=DatasetTag.I, time=i, region=r, seq=i))
    ws = temporal.WindowSpatialIndex(max_radius_m=400.0, reference_lat=40.0)
    live = []
    for ev in events:
        ws.insert(ev)
        live.append(ev)
        if len(live) > 40:
            gone = live.pop(0)
            ws.remove(gone)
        probe = offset_region(base, north_m=rng.uniform(0, 4_000), east_m=rng.uniform(0, 4_000), radius=150.0)
        got, examined = ws.query_intersecting(probe)
        expect = [e for e in live if regions_intersect(e.region, probe)]
        assert sorted(got, key=lambda e: e.seq) == sorted(expect, key=lambda e: e.seq)
        assert examined >= len(got)


# ---------------------------------------------------------------------------
# Equivalence with direct enumeration on small random instances.


def brute_candidates(log_i: EventLog, log_e: EventLog, params: Params):
    """All (I-user, E-user) pairs that co-occur and stay under the alibi cap."""
    co = {}
    alibi = {}
    for ei in log_i.events:
        for ee in log_e.events:
            pair = (ei.user, ee.user)
            if co_occurs(ei, ee, params):
                co[pair] = co.get(pair, 0) + 1
            elif is_alibi(ei, ee, params):
                alibi[pair] = alibi.get(pair, 0) + 1
    return {
        pair: alibi.get(pair, 0)
        for pair in co
        if alibi.get(pair, 0) <= params.alibi_threshold
    }


@pytest.mark.parametrize("seed", range(8))
@pytest.mark.parametrize("threshold", [0, 2])
def test_scan_candidates_equal_direct_enumeration(tmp_path, seed, threshold):
    log_i, log_e = random_single_cell(seed=100 + seed, n_i=10, n_e=8, events_mean=8)
    params = Params(alibi_threshold=threshold)
    expected = brute_candidates(log_i, log_e, params)
    cs, _, stats = engine_scan(log_i, log_e, params, tmp_path / f"{seed}_{threshold}")
    assert set(cs.pairs()) == set(expected)
    for pair in cs.pairs():
        assert cs.alibi_count(pair) == expected[pair], pair
    assert stats.out_of_window_comparisons == 0


def test_scan_stats_counters_populated(tmp_path):
    log_i, log_e = random_single_cell(seed=55)
    _, _, stats = engine_scan(log_i, log_e, Params(alibi_threshold=1), tmp_path)
    assert stats.events_i == len(log_i)
    assert stats.events_e == len(log_e)
    assert stats.comparisons == stats.c_checks + stats.a_checks > 0
    assert stats.max_window_events > 0
    assert stats.out_of_window_comparisons == 0


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_forward_comparisons_bounded_by_in_window_pairs(tmp_path, seed):
    # The window index may prune spatially, so the pairs it examines are a
    # subset of all cross-side pairs within the time threshold.
    from geolink.oracle import oracle_link

    log_i, log_e = random_single_cell(seed=seed, n_i=10, n_e=8, events_mean=8)
    params = Params(alibi_threshold=1)
    _, _, stats = engine_scan(log_i, log_e, params, tmp_path / str(seed))
    ref = oracle_link(log_i, log_e, params)
    assert stats.c_checks <= ref.window_pair_count


def test_forward_comparisons_exact_without_spatial_pruning(tmp_path):
    # With every event at one point the index cannot prune anything, and the
    # examined-pair counter must equal the exhaustive in-window pair count.
    import random

    from geolink.oracle import oracle_link

    home = region(40.0, 30.0, radius=100.0)
    rng = random.Random(5)
    rows_i = [(f"x{i % 3}", rng.randrange(0, 20_000), home) for i in range(30)]
    rows_e = [(f"y{i % 3}", rng.randrange(0, 20_000), home) for i in range(24)]
    log_i, log_e = _two_user_logs(rows_i, rows_e)
    params = Params(alpha=1_800)
    _, _, stats = engine_scan(log_i, log_e, params, tmp_path)
    ref = oracle_link(log_i, log_e, params)
    assert stats.c_checks == ref.window_pair_count > 0
