"""Domain types and event-pair predicates for cross-dataset location linkage.

Everything in this module is pure: no I/O, no hidden state. The predicates
defined here are the single source of truth for both the batch engine and the
brute-force reference checker, which deliberately share nothing else.

Conventions used throughout the package:

* Times are integer seconds (epoch-like, nonnegative).
* An observation's location is an uncertainty disk: a center on the WGS84
  sphere plus a radius in meters. Two observations may be the same physical
  visit only if their disks intersect.
* Events come from exactly two datasets, tagged ``I`` and ``E``. All pair
  predicates are cross-side by contract.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Union

__all__ = [
    "EARTH_RADIUS_M",
    "METERS_PER_DEG_LAT",
    "DatasetTag",
    "Region",
    "Event",
    "Params",
    "MatchCounts",
    "haversine_m",
    "region_distance",
    "regions_intersect",
    "temporally_close",
    "co_occurs",
    "runaway_possible",
    "is_alibi",
    "pair_weight",
    "pair_place_key",
    "event_place_key",
]

# Mean Earth radius. Shared by every distance computation in the package so
# that boundary decisions (intersect / alibi) are consistent everywhere.
EARTH_RADIUS_M = 6_371_000.0

# Meters per degree of latitude on the sphere above (~111.19 km).
METERS_PER_DEG_LAT = EARTH_RADIUS_M * math.pi / 180.0


class DatasetTag(Enum):
    """Which of the two input datasets an event belongs to."""

    I = "I"
    E = "E"

    @property
    def opposite(self) -> "DatasetTag":
        return DatasetTag.E if self is DatasetTag.I else DatasetTag.I

    def qualify(self, token: str) -> str:
        """Prefix a raw per-dataset user token into a globally unique id."""
        return f"{self.value}:{token}"

    @staticmethod
    def of_user(user: str) -> "DatasetTag":
        """Recover the side of a qualified user id."""
        side, sep, _ = user.partition(":")
        if not sep or side not in ("I", "E"):
            raise ValueError(f"user id {user!r} is not side-qualified")
        return DatasetTag(side)


@dataclass(frozen=True, slots=True)
class Region:
    """An uncertainty disk: center (degrees) plus radius (meters).

    ``place_id`` is an optional stable venue identifier (e.g. a tower or
    check-in venue id). When present it is preferred over spatial binning for
    place diversity accounting.
    """

    lat: float
    lon: float
    radius: float
    place_id: Optional[str] = None
    # Derived, cached at construction; excluded from repr to keep dumps small.
    lat_rad: float = field(init=False, repr=False, compare=False, default=0.0)
    lon_rad: float = field(init=False, repr=False, compare=False, default=0.0)

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude out of range: {self.lon}")
        if not (math.isfinite(self.radius) and self.radius >= 0.0):
            raise ValueError(f"radius must be finite and >= 0: {self.radius}")
        object.__setattr__(self, "lat_rad", math.radians(self.lat))
        object.__setattr__(self, "lon_rad", math.radians(self.lon))


@dataclass(frozen=True, slots=True)
class Event:
    """One observation: a user seen in a region at an integer second.

    ``seq`` is a per-ingestion monotonically increasing sequence number; it
    breaks (user, time) ties deterministically and is unique within a side.
    """

    user: str
    tag: DatasetTag
    time: int
    region: Region
    seq: int = 0

    def __post_init__(self) -> None:
        if self.time < 0:
            raise ValueError(f"event time must be >= 0: {self.time}")

    def key(self) -> tuple[str, int]:
        """Identity of this event within its side."""
        return (self.tag.value, self.seq)


def _as_threshold(value: Union[int, float, Fraction]) -> Fraction:
    return value if isinstance(value, Fraction) else Fraction(value)


@dataclass(frozen=True)
class Params:
    """Engine parameters. Validated once, passed everywhere by value.

    alpha: temporal closeness threshold, seconds. Two events can witness
        the same visit only if their times differ by at most alpha.
    lambda_mps: maximum plausible travel speed, m/s. Below-threshold travel
        keeps two disjoint sightings explainable by movement.
    alibi_threshold: maximum tolerated count of mutually-exclusive event
        pairs before a user pair is disqualified.
    k / l: linkage evidence thresholds — total matched weight at least k,
        spread over at least l distinct places each with weight >= 1.
    min_cell_edge: smallest spatial-grid cell edge, meters.
    strip_fraction: width of the cell border strip as a fraction of
        min_cell_edge; events inside a strip are counted for the neighbor
        cell as well.
    place_bin_edge: edge of the square fallback place bin, meters.
    tie_epsilon: relative tolerance for dominating-cell count ties.
    """

    alpha: int = 1800
    lambda_mps: float = 42.0
    alibi_threshold: int = 0
    k: Union[int, float, Fraction] = 1
    l: int = 1
    min_cell_edge: float = 10_000.0
    strip_fraction: float = 0.125
    place_bin_edge: float = 1_000.0
    tie_epsilon: float = 0.0

    def __post_init__(self) -> None:
        if not (isinstance(self.alpha, int) and self.alpha > 0):
            raise ValueError(f"alpha must be a positive integer: {self.alpha!r}")
        if not (self.lambda_mps > 0):
            raise ValueError(f"lambda_mps must be > 0: {self.lambda_mps}")
        if not (isinstance(self.alibi_threshold, int) and self.alibi_threshold >= 0):
            raise ValueError(f"alibi_threshold must be an integer >= 0: {self.alibi_threshold!r}")
        k = _as_threshold(self.k)
        if not k > 0:
            raise ValueError(f"k must be > 0: {self.k}")
        if not (isinstance(self.l, int) and self.l >= 1):
            raise ValueError(f"l must be an integer >= 1: {self.l!r}")
        if k < self.l:
            raise ValueError(f"k must be >= l (k={self.k}, l={self.l})")
        if not (self.min_cell_edge > 0):
            raise ValueError(f"min_cell_edge must be > 0: {self.min_cell_edge}")
        if not (0.0 < self.strip_fraction < 0.5):
            raise ValueError(f"strip_fraction must be in (0, 0.5): {self.strip_fraction}")
        if not (self.place_bin_edge > 0):
            raise ValueError(f"place_bin_edge must be > 0: {self.place_bin_edge}")
        if not (0.0 <= self.tie_epsilon < 1.0):
            raise ValueError(f"tie_epsilon must be in [0, 1): {self.tie_epsilon}")

    @property
    def k_threshold(self) -> Fraction:
        return _as_threshold(self.k)


def haversine_m(lat1_rad: float, lon1_rad: float, lat2_rad: float, lon2_rad: float) -> float:
    """Great-circle distance in meters between two radian coordinates."""
    dlat = lat2_rad - lat1_rad
    dlon = lon2_rad - lon1_rad
    a = math.sin(dlat / 2.0) ** 2 + math.cos(lat1_rad) * math.cos(lat2_rad) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def region_distance(r1: Region, r2: Region) -> float:
    """Distance in meters between two uncertainty disks; 0 iff they intersect."""
    d = haversine_m(r1.lat_rad, r1.lon_rad, r2.lat_rad, r2.lon_rad)
    return max(0.0, d - r1.radius - r2.radius)


def regions_intersect(r1: Region, r2: Region) -> bool:
    """True iff the two disks overlap (tangency counts as overlap)."""
    d = haversine_m(r1.lat_rad, r1.lon_rad, r2.lat_rad, r2.lon_rad)
    return d - r1.radius - r2.radius <= 0.0


def temporally_close(t1: int, t2: int, alpha: int) -> bool:
    """True iff the two times are within alpha seconds (inclusive)."""
    return abs(t1 - t2) <= alpha


def _require_cross_side(a: Event, b: Event) -> None:
    if a.tag is b.tag:
        raise ValueError(
            f"cross-side predicate applied to two {a.tag.value}-side events "
            f"(users {a.user!r}, {b.user!r})"
        )


def co_occurs(i: Event, e: Event, p: Params) -> bool:
    """Could the two events witness the same visit of one physical person?

    Requires temporal closeness and intersecting regions. Same-side pairs are
    rejected as a programming error.
    """
    _require_cross_side(i, e)
    return temporally_close(i.time, e.time, p.alpha) and regions_intersect(i.region, e.region)


def runaway_possible(i: Event, e: Event, p: Params) -> bool:
    """Could one person have traveled between the two regions in time?

    True when the disk gap is coverable at lambda_mps within |dt| seconds.
    Zero-gap (intersecting) regions are trivially coverable.
    """
    return region_distance(i.region, e.region) <= p.lambda_mps * abs(i.time - e.time)


def is_alibi(i: Event, e: Event, p: Params) -> bool:
    """Mutual exclusion: close in time, disjoint in space, travel implausible.

    An alibi pair proves the two events cannot belong to the same person.
    By construction an event pair is never both a co-occurrence and an alibi.
    """
    return (
        temporally_close(i.time, e.time, p.alpha)
        and not regions_intersect(i.region, e.region)
        and not runaway_possible(i, e, p)
    )


def pair_weight(count_i: int, count_e: int) -> Fraction:
    """Evidence weight of a matched event pair.

    Each side contributes the reciprocal of the number of distinct opposite-
    side users its event co-occurs with; the weight is the product. Exclusive
    pairs (1, 1) carry full weight 1; crowded co-occurrences are discounted.
    """
    if count_i < 1 or count_e < 1:
        raise ValueError(f"match counts must be >= 1 for a matched pair: ({count_i}, {count_e})")
    return Fraction(1, count_i * count_e)


def _spatial_bin(lat: float, lon: float, edge_m: float) -> tuple[str, int, int]:
    row = math.floor(lat * METERS_PER_DEG_LAT / edge_m)
    col = math.floor(lon * METERS_PER_DEG_LAT * math.cos(math.radians(lat)) / edge_m)
    return ("bin", row, col)


def pair_place_key(region_i: Region, region_e: Region, edge_m: float):
    """Place identity credited to a matched event pair (exactly one place).

    The E-side venue id wins when present; otherwise the square spatial bin
    containing the midpoint of the two centers.
    """
    if region_e.place_id is not None:
        return ("pid", region_e.place_id)
    mid_lat = (region_i.lat + region_e.lat) / 2.0
    mid_lon = (region_i.lon + region_e.lon) / 2.0
    return _spatial_bin(mid_lat, mid_lon, edge_m)


def event_place_key(region: Region, edge_m: float):
    """Place identity of a single event (used for diversity eligibility)."""
    if region.place_id is not None:
        return ("pid", region.place_id)
    return _spatial_bin(region.lat, region.lon, edge_m)


class MatchCounts:
    """Distinct-opposite-side-user co-occurrence tallies, keyed per event.

    The forward scan records, for every event, the set of opposite-side users
    it co-occurs with; the count is the set's size. Counts are >= 0 and, for
    any event that participates in a matched pair, >= 1.
    """

    __slots__ = ("_users",)

    def __init__(self) -> None:
        self._users: dict[tuple[str, int], set[str]] = {}

    def record(self, event: Event, opposite_user: str) -> None:
        self._users.setdefault(event.key(), set()).add(opposite_user)

    def count(self, event: Event) -> int:
        users = self._users.get(event.key())
        return len(users) if users else 0

    def pop_count(self, event: Event) -> int:
        """Final count for an event leaving the window; frees its set."""
        users = self._users.pop(event.key(), None)
        return len(users) if users else 0

    def __len__(self) -> int:
        return len(self._users)
