"""Linkage decisions: per-pair greedy matching, thresholds, disambiguation.

A candidate user pair is scored by greedily pairing up their events: walking
all events of both users in timestamp order, each yet-unmatched event grabs
the co-occurring unmatched event on the other side with the highest weight
(weights come from the stored match counts; ties go to the earliest partner,
then the smallest sequence id). Matched events are consumed and never reused.
The pair links when the total matched weight reaches k spread over at least l
distinct places that each accumulate weight >= 1. Users that would link to
more than one partner are removed entirely, both of their pairs with them.

All weight arithmetic is exact (Fraction), so threshold comparisons have no
floating-point edge cases.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .model import DatasetTag, Event, Params, co_occurs, pair_place_key, pair_weight
from .store import UserEventIndex
from .temporal import CandidateState

__all__ = [
    "MatchedEvents",
    "PairEvaluation",
    "LinkResult",
    "evaluate_pair",
    "satisfies_kl",
    "resolve_ambiguity",
    "elbow",
    "link",
]


@dataclass(frozen=True)
class MatchedEvents:
    """One consumed event pair inside a linkage set."""

    seq_i: int
    seq_e: int
    time_i: int
    time_e: int
    weight: Fraction
    place: tuple


@dataclass
class PairEvaluation:
    """Greedy linkage evidence for one candidate user pair."""

    user_x: str  # I side
    user_y: str  # E side
    matched: list[MatchedEvents] = field(default_factory=list)
    k_value: Fraction = Fraction(0)
    place_weights: dict = field(default_factory=dict)

    @property
    def l_value(self) -> int:
        return sum(1 for w in self.place_weights.values() if w >= 1)

    @property
    def pair(self) -> tuple[str, str]:
        return (self.user_x, self.user_y)


@dataclass
class LinkResult:
    """Outcome of the linkage stage for one run."""

    threshold_k: Fraction
    threshold_l: int
    evaluations: list[PairEvaluation]
    passing: list[PairEvaluation]
    linked: list[PairEvaluation]
    ambiguous: list[tuple[str, str]]

    def linked_pairs(self) -> set[tuple[str, str]]:
        return {ev.pair for ev in self.linked}


_SIDE_ORDER = {DatasetTag.I: 0, DatasetTag.E: 1}


def evaluate_pair(
    x_events: Sequence[tuple[Event, int]],
    y_events: Sequence[tuple[Event, int]],
    params: Params,
    weighted: bool = True,
) -> PairEvaluation:
    """Greedily build the linkage set for one (I-user, E-user) pair.

    ``x_events``/``y_events`` are the users' (event, match count) streams in
    ascending time order, as served by the index. Partner choice always uses
    the crowding weights, so both modes build the same matching; unweighted
    mode only scores every matched pair as 1 instead of its weight. That
    makes the unweighted total a count of the weighted matching's pairs,
    which can never fall below the weighted total.
    """
    if not x_events or not y_events:
        return PairEvaluation(
            user_x=x_events[0][0].user if x_events else "",
            user_y=y_events[0][0].user if y_events else "",
        )
    user_x = x_events[0][0].user
    user_y = y_events[0][0].user

    timeline: list[tuple[int, int, int, Event, int, bool]] = []
    for ev, count in x_events:
        timeline.append((ev.time, _SIDE_ORDER[ev.tag], ev.seq, ev, count, True))
    for ev, count in y_events:
        timeline.append((ev.time, _SIDE_ORDER[ev.tag], ev.seq, ev, count, False))
    timeline.sort(key=lambda item: item[:3])

    # Partners outside the time threshold cannot co-occur, so each event only
    # scans the window-sized slice of the (time-sorted) opposite stream.
    x_times = [ev.time for ev, _ in x_events]
    y_times = [ev.time for ev, _ in y_events]

    matched_x: set[int] = set()
    matched_e: set[int] = set()
    evaluation = PairEvaluation(user_x=user_x, user_y=user_y)

    for _, _, _, ev, count, from_x in timeline:
        consumed = matched_x if from_x else matched_e
        if ev.seq in consumed:
            continue
        partner_pool = y_events if from_x else x_events
        partner_times = y_times if from_x else x_times
        partner_consumed = matched_e if from_x else matched_x
        lo = bisect.bisect_left(partner_times, ev.time - params.alpha)
        hi = bisect.bisect_right(partner_times, ev.time + params.alpha)
        best = None  # (weight, partner_time, partner_seq, partner_ev, partner_count)
        for other, other_count in partner_pool[lo:hi]:
            if other.seq in partner_consumed:
                continue
            if not co_occurs(ev, other, params):
                continue
            weight = pair_weight(count, other_count)
            if (
                best is None
                or weight > best[0]
                or (weight == best[0] and (other.time, other.seq) < (best[1], best[2]))
            ):
                best = (weight, other.time, other.seq, other, other_count)
        if best is None:
            continue
        weight, _, _, other, _ = best
        if not weighted:
            weight = Fraction(1)
        consumed.add(ev.seq)
        partner_consumed.add(other.seq)
        ev_i, ev_e = (ev, other) if from_x else (other, ev)
        place = pair_place_key(ev_i.region, ev_e.region, params.place_bin_edge)
        evaluation.matched.append(
            MatchedEvents(
                seq_i=ev_i.seq,
                seq_e=ev_e.seq,
                time_i=ev_i.time,
                time_e=ev_e.time,
                weight=weight,
                place=place,
            )
        )
        evaluation.k_value += weight
        evaluation.place_weights[place] = evaluation.place_weights.get(place, Fraction(0)) + weight
    return evaluation


def satisfies_kl(evaluation: PairEvaluation, params: Params) -> bool:
    """Total weight at least k over at least l places of weight >= 1 each."""
    return evaluation.k_value >= params.k_threshold and evaluation.l_value >= params.l


def resolve_ambiguity(passing: Iterable[PairEvaluation]) -> tuple[list[PairEvaluation], list[tuple[str, str]]]:
    """Keep only pairs whose users appear in exactly one passing pair.

    When a user shows up in two passing pairs, all of that user's pairs are
    dropped (no winner is picked). Returns (linked, dropped_pairs).
    """
    passing = list(passing)
    seen_x: dict[str, int] = {}
    seen_y: dict[str, int] = {}
    for ev in passing:
        seen_x[ev.user_x] = seen_x.get(ev.user_x, 0) + 1
        seen_y[ev.user_y] = seen_y.get(ev.user_y, 0) + 1
    linked: list[PairEvaluation] = []
    dropped: list[tuple[str, str]] = []
    for ev in passing:
        if seen_x[ev.user_x] == 1 and seen_y[ev.user_y] == 1:
            linked.append(ev)
        else:
            dropped.append(ev.pair)
    return linked, sorted(dropped)


def elbow(values: Sequence) -> tuple[int, object]:
    """Knee of a descending curve by largest-magnitude second difference.

    SD[i] = v[i+1] + v[i-1] - 2*v[i] over interior indices; the largest |SD|
    wins, ties to the smallest index. Returns (index, value at index).
    """
    values = list(values)
    if len(values) < 3:
        raise ValueError(f"elbow needs at least 3 values, got {len(values)}")
    if any(a < b for a, b in zip(values, values[1:])):
        raise ValueError("elbow expects values sorted in descending order")
    best_idx = 1
    best_mag = None
    for i in range(1, len(values) - 1):
        mag = abs(values[i + 1] + values[i - 1] - 2 * values[i])
        if best_mag is None or mag > best_mag:
            best_mag = mag
            best_idx = i
    return best_idx, values[best_idx]


def _load_events(idx: UserEventIndex, cache: dict, user: str) -> list[tuple[Event, int]]:
    events = cache.get(user)
    if events is None:
        events = list(idx.scan_user(user))
        cache[user] = events
    return events


def link(
    cs: CandidateState,
    idx: UserEventIndex,
    params: Params,
    weighted: bool = True,
    auto_kl: bool = False,
) -> LinkResult:
    """Evaluate every candidate pair and apply thresholds + disambiguation.

    With ``auto_kl`` the k and l thresholds are picked by the elbow rule on
    the descending k-value and l-value curves of the evaluations themselves.
    Pairs are grouped by the denser side's user so each of those users'
    event streams is loaded once.
    """
    pairs = cs.pairs()
    # Denser side drives the join order; its per-user streams load once.
    n_i = len(idx.users(DatasetTag.I))
    n_e = len(idx.users(DatasetTag.E))
    dense_first = n_i >= n_e
    pairs = sorted(pairs, key=(lambda p: (p[0], p[1])) if dense_first else (lambda p: (p[1], p[0])))

    cache: dict[str, list[tuple[Event, int]]] = {}
    evaluations: list[PairEvaluation] = []
    for user_x, user_y in pairs:
        x_events = _load_events(idx, cache, user_x)
        y_events = _load_events(idx, cache, user_y)
        evaluation = evaluate_pair(x_events, y_events, params, weighted=weighted)
        if not evaluation.user_x:
            evaluation.user_x = user_x
        if not evaluation.user_y:
            evaluation.user_y = user_y
        evaluations.append(evaluation)
    evaluations.sort(key=lambda ev: ev.pair)

    if auto_kl:
        k_curve = sorted((ev.k_value for ev in evaluations), reverse=True)
        l_curve = sorted((ev.l_value for ev in evaluations), reverse=True)
        _, threshold_k = elbow(k_curve)
        _, threshold_l = elbow(l_curve)
        threshold_k = Fraction(threshold_k)
        threshold_l = max(1, int(threshold_l))
        if threshold_k < threshold_l:
            threshold_k = Fraction(threshold_l)
        params = Params(
            alpha=params.alpha,
            lambda_mps=params.lambda_mps,
            alibi_threshold=params.alibi_threshold,
            k=threshold_k,
            l=threshold_l,
            min_cell_edge=params.min_cell_edge,
            strip_fraction=params.strip_fraction,
            place_bin_edge=params.place_bin_edge,
            tie_epsilon=params.tie_epsilon,
        )

    passing = [ev for ev in evaluations if satisfies_kl(ev, params)]
    linked, ambiguous = resolve_ambiguity(passing)
    return LinkResult(
        threshold_k=params.k_threshold,
        threshold_l=params.l,
        evaluations=evaluations,
        passing=passing,
        linked=linked,
        ambiguous=ambiguous,
    )
