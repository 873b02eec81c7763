"""Brute-force reference linkage: no windows, no grids, no index.

This module answers the same question as the engine by direct definition:
enumerate every cross-side event pair, classify co-occurrence vs mutual
exclusion, count per-event distinct co-occurring users, and decide each user
pair from those exact sets. It deliberately shares only the model-level
predicates with the engine so the two paths can check each other.

Intended for verification on small inputs; refuses anything over
MAX_ORACLE_EVENTS to keep accidental O(n^2) blowups out of pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .model import (
    DatasetTag,
    Event,
    Params,
    co_occurs,
    is_alibi,
    pair_place_key,
    pair_weight,
    regions_intersect,
    temporally_close,
)
from .store import EventLog

__all__ = ["MAX_ORACLE_EVENTS", "OraclePair", "OracleResult", "oracle_link"]

MAX_ORACLE_EVENTS = 50_000


@dataclass
class OraclePair:
    """Exact per-user-pair facts computed by enumeration."""

    user_x: str
    user_y: str
    co_events: list[tuple[Event, Event]] = field(default_factory=list)
    alibi_count: int = 0
    k_value: Fraction = Fraction(0)
    l_value: int = 0
    matched: list[tuple[int, int]] = field(default_factory=list)  # (seq_i, seq_e)
    optimal_k: Optional[Fraction] = None

    @property
    def pair(self) -> tuple[str, str]:
        return (self.user_x, self.user_y)


@dataclass
class OracleResult:
    candidates: dict[tuple[str, str], OraclePair]
    match_counts: dict[tuple[str, int], int]
    passing: list[tuple[str, str]]
    linked: list[tuple[str, str]]
    ambiguous: list[tuple[str, str]]
    alibi_counts: dict[tuple[str, str], int]
    window_pair_count: int = 0  # cross-side event pairs within alpha

    def linked_pairs(self) -> set[tuple[str, str]]:
        return set(self.linked)

    def evaluation_of(self, pair: tuple[str, str]) -> OraclePair:
        return self.candidates[pair]


def _greedy_match(
    events_x: list[Event],
    events_y: list[Event],
    counts: dict[tuple[str, int], int],
    params: Params,
    weighted: bool,
) -> tuple[Fraction, dict, list[tuple[int, int]]]:
    """Same greedy rule as the engine, restated from the definition.

    Timeline order is (time, side I before E, seq); each unmatched event takes
    the highest-weight unmatched co-occurring partner, ties to the earliest
    partner time then smallest seq.
    """
    timeline = sorted(
        events_x + events_y,
        key=lambda ev: (ev.time, 0 if ev.tag is DatasetTag.I else 1, ev.seq),
    )
    used_x: set[int] = set()
    used_y: set[int] = set()
    total = Fraction(0)
    places: dict = {}
    matched: list[tuple[int, int]] = []
    for ev in timeline:
        mine, theirs = (used_x, used_y) if ev.tag is DatasetTag.I else (used_y, used_x)
        if ev.seq in mine:
            continue
        pool = events_y if ev.tag is DatasetTag.I else events_x
        best = None
        for other in pool:
            if other.seq in theirs:
                continue
            if not co_occurs(ev, other, params):
                continue
            w = pair_weight(counts[ev.key()], counts[other.key()])
            cand = (w, other.time, other.seq)
            if best is None or w > best[0] or (w == best[0] and cand[1:] < best[1:3]):
                best = (w, other.time, other.seq, other)
        if best is None:
            continue
        w, _, _, other = best
        if not weighted:
            w = Fraction(1)
        mine.add(ev.seq)
        theirs.add(other.seq)
        ev_i, ev_e = (ev, other) if ev.tag is DatasetTag.I else (other, ev)
        place = pair_place_key(ev_i.region, ev_e.region, params.place_bin_edge)
        places[place] = places.get(place, Fraction(0)) + w
        total += w
        matched.append((ev_i.seq, ev_e.seq))
    return total, places, matched


def _optimal_assignment_k(
    events_x: list[Event],
    events_y: list[Event],
    counts: dict[tuple[str, int], int],
    params: Params,
) -> Fraction:
    """Maximum-total-weight event assignment, for greedy-gap reporting only."""
    edges = []
    for i, ev in enumerate(events_x):
        for j, other in enumerate(events_y):
            if co_occurs(ev, other, params):
                edges.append((i, j, pair_weight(counts[ev.key()], counts[other.key()])))
    if not edges:
        return Fraction(0)
    import numpy as np
    from scipy.optimize import linear_sum_assignment

    weight = np.zeros((len(events_x), len(events_y)))
    for i, j, w in edges:
        weight[i, j] = float(w)
    rows, cols = linear_sum_assignment(weight, maximize=True)
    exact = {(i, j): w for i, j, w in edges}
    return sum((exact.get((i, j), Fraction(0)) for i, j in zip(rows, cols)), Fraction(0))


def oracle_link(
    log_i: EventLog,
    log_e: EventLog,
    params: Params,
    weighted: bool = True,
    with_optimal: bool = False,
) -> OracleResult:
    """Decide every cross-side user pair by exhaustive enumeration."""
    n = len(log_i) + len(log_e)
    if n > MAX_ORACLE_EVENTS:
        raise ValueError(f"oracle refuses {n} events (cap {MAX_ORACLE_EVENTS})")

    co_pairs: dict[tuple[str, str], OraclePair] = {}
    alibi_counts: dict[tuple[str, str], int] = {}
    match_users: dict[tuple[str, int], set[str]] = {}
    window_pairs = 0

    for ev_i in log_i.events:
        for ev_e in log_e.events:
            # Both classifications need temporal closeness; skip the rest.
            if not temporally_close(ev_i.time, ev_e.time, params.alpha):
                continue
            window_pairs += 1
            pair = (ev_i.user, ev_e.user)
            if regions_intersect(ev_i.region, ev_e.region):
                entry = co_pairs.get(pair)
                if entry is None:
                    entry = co_pairs[pair] = OraclePair(user_x=ev_i.user, user_y=ev_e.user)
                entry.co_events.append((ev_i, ev_e))
                match_users.setdefault(ev_i.key(), set()).add(ev_e.user)
                match_users.setdefault(ev_e.key(), set()).add(ev_i.user)
            elif is_alibi(ev_i, ev_e, params):
                alibi_counts[pair] = alibi_counts.get(pair, 0) + 1

    match_counts = {key: len(users) for key, users in match_users.items()}

    events_by_user: dict[str, list[Event]] = {}
    for log in (log_i, log_e):
        for ev in log.events:
            events_by_user.setdefault(ev.user, []).append(ev)

    candidates: dict[tuple[str, str], OraclePair] = {}
    for pair in sorted(co_pairs):
        entry = co_pairs[pair]
        entry.alibi_count = alibi_counts.get(pair, 0)
        if entry.alibi_count > params.alibi_threshold:
            continue
        counts = match_counts
        k_value, places, matched = _greedy_match(
            events_by_user[entry.user_x],
            events_by_user[entry.user_y],
            counts,
            params,
            weighted,
        )
        entry.k_value = k_value
        entry.l_value = sum(1 for w in places.values() if w >= 1)
        entry.matched = matched
        if with_optimal:
            entry.optimal_k = _optimal_assignment_k(
                events_by_user[entry.user_x], events_by_user[entry.user_y], counts, params
            )
        candidates[pair] = entry

    passing = [
        pair
        for pair, entry in sorted(candidates.items())
        if entry.k_value >= params.k_threshold and entry.l_value >= params.l
    ]
    # A user in two passing pairs invalidates all of that user's pairs.
    count_x: dict[str, int] = {}
    count_y: dict[str, int] = {}
    for x, y in passing:
        count_x[x] = count_x.get(x, 0) + 1
        count_y[y] = count_y.get(y, 0) + 1
    linked = [(x, y) for x, y in passing if count_x[x] == 1 and count_y[y] == 1]
    ambiguous = sorted(set(passing) - set(linked))

    return OracleResult(
        candidates=candidates,
        match_counts=match_counts,
        passing=passing,
        linked=linked,
        ambiguous=ambiguous,
        alibi_counts=alibi_counts,
        window_pair_count=window_pairs,
    )
