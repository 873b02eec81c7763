"""Greedy pair evaluation, thresholds, disambiguation, and the elbow rule."""

from __future__ import annotations

import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import engine_link, engine_scan, make_log, offset_region, random_single_cell, region
from geolink import linkage
from geolink.model import DatasetTag, Event, Params, Region, temporally_close
from geolink.linkage import PairEvaluation, elbow, evaluate_pair, resolve_ambiguity, satisfies_kl


def _pairs(events):
    """(event, match_count) rows as the index would serve them."""
    return [(ev, c) for ev, c in events]


def _ev(tag: DatasetTag, user: str, time: int, reg: Region, seq: int) -> Event:
    return Event(user=user, tag=tag, time=time, region=reg, seq=seq)


VENUE_A = region(40.0, 30.0, place_id="a")
VENUE_B = region(40.02, 30.02, place_id="b")
VENUE_C = region(40.04, 30.04, place_id="c")


def test_evaluate_pair_single_match_weight():
    x = [( _ev(DatasetTag.I, "I:x", 100, VENUE_A, 0), 2)]
    y = [( _ev(DatasetTag.E, "E:y", 130, VENUE_A, 0), 3)]
    out = evaluate_pair(x, y, Params())
    assert out.k_value == Fraction(1, 6)
    assert out.l_value == 0  # 1/6 of weight is not a full place yet
    assert [ (m.seq_i, m.seq_e) for m in out.matched ] == [(0, 0)]


def test_evaluate_pair_greedy_prefers_heavier_partner():
    # The early event can match a crowded partner now or an exclusive one
    # later; the greedy rule takes the highest weight, not the first seen.
    x = [(_ev(DatasetTag.I, "I:x", 100, VENUE_A, 0), 1)]
    y = [
        (_ev(DatasetTag.E, "E:y", 120, VENUE_A, 0), 4),
        (_ev(DatasetTag.E, "E:y", 400, VENUE_A, 1), 1),
    ]
    out = evaluate_pair(x, y, Params())
    assert [(m.seq_i, m.seq_e) for m in out.matched] == [(0, 1)]
    assert out.k_value == Fraction(1)


def test_evaluate_pair_weight_tie_takes_earliest_partner():
    x = [(_ev(DatasetTag.I, "I:x", 500, VENUE_A, 0), 1)]
    y = [
        (_ev(DatasetTag.E, "E:y", 600, VENUE_A, 3), 2),
        (_ev(DatasetTag.E, "E:y", 300, VENUE_A, 7), 2),
    ]
    out = evaluate_pair(x, y, Params())
    assert [(m.seq_i, m.seq_e) for m in out.matched] == [(0, 7)]


def test_evaluate_pair_consumes_events():
    # Two x-events, one y-event: only one match possible.
    x = [
        (_ev(DatasetTag.I, "I:x", 100, VENUE_A, 0), 1),
        (_ev(DatasetTag.I, "I:x", 150, VENUE_A, 1), 1),
    ]
    y = [(_ev(DatasetTag.E, "E:y", 120, VENUE_A, 0), 1)]
    out = evaluate_pair(x, y, Params())
    assert len(out.matched) == 1
    assert out.k_value == Fraction(1)


def test_evaluate_pair_accumulates_places():
    x = [
        (_ev(DatasetTag.I, "I:x", 100, VENUE_A, 0), 1),
        (_ev(DatasetTag.I, "I:x", 9000, VENUE_B, 1), 1),
        (_ev(DatasetTag.I, "I:x", 20000, VENUE_C, 2), 2),
    ]
    y = [
        (_ev(DatasetTag.E, "E:y", 140, VENUE_A, 0), 1),
        (_ev(DatasetTag.E, "E:y", 9100, VENUE_B, 1), 1),
        (_ev(DatasetTag.E, "E:y", 20100, VENUE_C, 2), 2),
    ]
    out = evaluate_pair(x, y, Params())
    assert out.k_value == Fraction(1) + Fraction(1) + Fraction(1, 4)
    assert out.l_value == 2  # venue c only reaches weight 1/4
    assert out.place_weights[("pid", "c")] == Fraction(1, 4)


def test_unweighted_counts_matches():
    x = [(_ev(DatasetTag.I, "I:x", 100, VENUE_A, 0), 5)]
    y = [(_ev(DatasetTag.E, "E:y", 130, VENUE_A, 0), 7)]
    out = evaluate_pair(x, y, Params(), weighted=False)
    assert out.k_value == Fraction(1)
    assert out.l_value == 1


def test_satisfies_kl_boundaries():
    p = Params(k=2, l=2)
    ev = PairEvaluation(user_x="I:x", user_y="E:y", k_value=Fraction(2), place_weights={("pid", "a"): Fraction(1), ("pid", "b"): Fraction(1)})
    assert satisfies_kl(ev, p)
    ev_low_k = PairEvaluation(user_x="I:x", user_y="E:y", k_value=Fraction(199, 100), place_weights={("pid", "a"): Fraction(1), ("pid", "b"): Fraction(1)})
    assert not satisfies_kl(ev_low_k, p)
    ev_low_l = PairEvaluation(user_x="I:x", user_y="E:y", k_value=Fraction(3), place_weights={("pid", "a"): Fraction(3)})
    assert not satisfies_kl(ev_low_l, p)


def test_resolve_ambiguity_drops_every_contested_pair():
    def pe(x, y):
        return PairEvaluation(user_x=x, user_y=y, k_value=Fraction(5))

    passing = [pe("I:a", "E:p"), pe("I:a", "E:q"), pe("I:b", "E:q"), pe("I:c", "E:r")]
    linked, dropped = resolve_ambiguity(passing)
    assert [ev.pair for ev in linked] == [("I:c", "E:r")]
    assert dropped == [("I:a", "E:p"), ("I:a", "E:q"), ("I:b", "E:q")]


# ---------------------------------------------------------------------------
# Elbow rule.


def test_elbow_documented_example():
    assert elbow([100, 50, 10, 8, 7]) == (2, 10)


def test_elbow_second_example():
    assert elbow([9, 6, 3, 0]) == (1, 6)


def test_elbow_flat_curvature_takes_first_interior():
    assert elbow([10, 8, 6, 4]) == (1, 8)
    assert elbow([5, 5, 5]) == (1, 5)


def test_elbow_input_validation():
    with pytest.raises(ValueError):
        elbow([3, 2])
    with pytest.raises(ValueError):
        elbow([1, 2, 3])


# ---------------------------------------------------------------------------
# End-to-end link() on one instance.


def test_link_end_to_end_small(tmp_path):
    venue1 = region(40.0, 30.0, place_id="v1")
    venue2 = region(40.01, 30.01, place_id="v2")
    far = offset_region(venue1, north_m=200_000.0, east_m=0.0)
    log_i = make_log(
        DatasetTag.I,
        [
            ("good", 1000, venue1),
            ("good", 50_000, venue2),
            ("lonely", 1000, far),
        ],
    )
    log_e = make_log(
        DatasetTag.E,
        [
            ("twin", 1100, venue1),
            ("twin", 50_200, venue2),
            ("stranger", 200_000, venue1),
        ],
    )
    params = Params(k=2, l=2)
    result, cs, _ = engine_link(log_i, log_e, params, tmp_path)
    assert result.linked_pairs() == {("I:good", "E:twin")}
    by_pair = {ev.pair: ev for ev in result.evaluations}
    assert by_pair[("I:good", "E:twin")].k_value == Fraction(2)
    assert by_pair[("I:good", "E:twin")].l_value == 2


def test_link_ambiguous_users_removed(tmp_path):
    venue = region(40.0, 30.0, place_id="v")
    venue2 = region(40.01, 30.01, place_id="w")
    # Widely spaced visits keep every co-occurrence exclusive (weight 1).
    log_i = make_log(
        DatasetTag.I,
        [("a", 1000, venue), ("a", 9000, venue2), ("a", 20000, venue), ("a", 30000, venue2)],
    )
    log_e = make_log(
        DatasetTag.E,
        [("p", 1100, venue), ("p", 9100, venue2), ("q", 20200, venue), ("q", 30200, venue2)],
    )
    params = Params(k=1, l=1)
    result, _, _ = engine_link(log_i, log_e, params, tmp_path)
    # a passes with both p and q, so neither link survives.
    assert result.linked == []
    assert set(result.ambiguous) == {("I:a", "E:p"), ("I:a", "E:q")}


def test_link_unweighted_never_links_less_on_clean_instance(tmp_path):
    log_i, log_e = random_single_cell(seed=77, n_i=12, n_e=10)
    params = Params(k=2, l=1, alibi_threshold=1)
    weighted, _, _ = engine_link(log_i, log_e, params, tmp_path / "w", weighted=True)
    unweighted, _, _ = engine_link(log_i, log_e, params, tmp_path / "u", weighted=False)
    w_by_pair = {ev.pair: ev.k_value for ev in weighted.evaluations}
    u_by_pair = {ev.pair: ev.k_value for ev in unweighted.evaluations}
    assert set(w_by_pair) == set(u_by_pair)
    for pair, k_w in w_by_pair.items():
        assert u_by_pair[pair] >= k_w


# ---------------------------------------------------------------------------
# Structural properties of the greedy evaluation, swept over random pairs.

_PROPERTY_PARAMS = Params(alpha=1_800, k=2, l=1)


@st.composite
def _pair_instance(draw):
    """Two event streams with shared venues, clashes, and skewed counts."""
    base = region(40.0, 30.0, radius=150.0)
    offsets = [(0.0, 0.0), (250.0, 0.0), (0.0, 250.0), (60_000.0, 0.0)]
    place_ids = [None, "pa", "pb"]

    def side(tag, n):
        rows = []
        for seq in range(n):
            time = draw(st.integers(min_value=0, max_value=12)) * 600
            north, east = offsets[draw(st.integers(min_value=0, max_value=3))]
            reg = offset_region(base, north, east)
            if tag is DatasetTag.E:
                pid = place_ids[draw(st.integers(min_value=0, max_value=2))]
                reg = Region(lat=reg.lat, lon=reg.lon, radius=reg.radius, place_id=pid)
            count = draw(st.integers(min_value=1, max_value=4))
            rows.append((Event(user=tag.qualify("u"), tag=tag, time=time, region=reg, seq=seq), count))
        rows.sort(key=lambda item: (item[0].time, item[0].seq))
        return rows

    n_x = draw(st.integers(min_value=1, max_value=8))
    n_y = draw(st.integers(min_value=1, max_value=8))
    return side(DatasetTag.I, n_x), side(DatasetTag.E, n_y)


@settings(max_examples=400, deadline=None)
@given(instance=_pair_instance())
def test_evaluate_pair_structural_invariants(instance):
    x_events, y_events = instance
    params = _PROPERTY_PARAMS
    for weighted in (True, False):
        out = evaluate_pair(x_events, y_events, params, weighted=weighted)
        seqs_i = [m.seq_i for m in out.matched]
        seqs_e = [m.seq_e for m in out.matched]
        # No event is consumed twice on either side.
        assert len(seqs_i) == len(set(seqs_i))
        assert len(seqs_e) == len(set(seqs_e))
        for m in out.matched:
            assert 0 < m.weight <= 1
            assert temporally_close(m.time_i, m.time_e, params.alpha)
        assert out.k_value == sum((m.weight for m in out.matched), Fraction(0))
        by_place: dict = {}
        for m in out.matched:
            by_place[m.place] = by_place.get(m.place, Fraction(0)) + m.weight
        assert by_place == out.place_weights
        if out.l_value >= 1:
            assert out.l_value <= math.floor(out.k_value)


@settings(max_examples=400, deadline=None)
@given(instance=_pair_instance())
def test_unweighted_evaluation_dominates_weighted(instance):
    x_events, y_events = instance
    params = _PROPERTY_PARAMS
    w = evaluate_pair(x_events, y_events, params, weighted=True)
    u = evaluate_pair(x_events, y_events, params, weighted=False)
    # Identical matching, different scoring: dominance is structural.
    assert [(m.seq_i, m.seq_e) for m in u.matched] == [(m.seq_i, m.seq_e) for m in w.matched]
    assert u.k_value >= w.k_value
    assert u.l_value >= w.l_value
    for place, weight in w.place_weights.items():
        assert u.place_weights.get(place, Fraction(0)) >= weight
    if satisfies_kl(w, params):
        assert satisfies_kl(u, params)
