"""Synthetic second dataset derived from a base log, with known ground truth.

A fraction of the base users get a shadow identity in the derived dataset:
each of a selected user's base events is re-emitted with a fresh id, with a
per-user probability drawn once from a clamped Gaussian, at a time jittered
uniformly around the original, in the same region. The mapping from shadow
id to base id is returned as ground truth for precision/recall scoring.

Also ships a base-log builder so the pipeline can be exercised end to end on
data with realistic structure (per-user venue schedules with session
coherence, shared venues across users) without any private inputs.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .model import METERS_PER_DEG_LAT, DatasetTag, Event, Region
from .store import EventLog

__all__ = [
    "SynthConfig",
    "generate",
    "make_base_log",
    "write_truth",
    "read_truth",
]


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the shadow-dataset generator.

    usage_ratio: fraction of base users that get a shadow identity.
    checkin_prob_mean: mean per-event emission probability.
    checkin_prob_stddev: stddev of the per-user probability draw; defaults
        to a quarter of the mean.
    jitter_window: shadow times fall uniformly in +-jitter_window seconds
        of the base event (clamped at 0).
    location_noise_prob / location_noise_m: optional noisy-location variant;
        with the given probability a shadow event's center is displaced by
        the given distance in a seeded random direction, emulating coarse or
        wrong tower assignment. Off by default.
    """

    usage_ratio: float
    checkin_prob_mean: float
    checkin_prob_stddev: Optional[float] = None
    jitter_window: int = 900
    rng_seed: int = 0
    location_noise_prob: float = 0.0
    location_noise_m: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 < self.usage_ratio <= 1.0):
            raise ValueError(f"usage_ratio must be in (0, 1]: {self.usage_ratio}")
        if not (0.0 <= self.checkin_prob_mean <= 1.0):
            raise ValueError(f"checkin_prob_mean must be in [0, 1]: {self.checkin_prob_mean}")
        if self.checkin_prob_stddev is not None and self.checkin_prob_stddev < 0:
            raise ValueError("checkin_prob_stddev must be >= 0")
        if self.jitter_window < 0:
            raise ValueError("jitter_window must be >= 0")
        if not (0.0 <= self.location_noise_prob <= 1.0):
            raise ValueError("location_noise_prob must be in [0, 1]")
        if self.location_noise_m < 0:
            raise ValueError("location_noise_m must be >= 0")

    @property
    def stddev(self) -> float:
        return self.checkin_prob_stddev if self.checkin_prob_stddev is not None else 0.25 * self.checkin_prob_mean


def _displace(region: Region, distance_m: float, bearing_rad: float) -> Region:
    dlat = distance_m * math.cos(bearing_rad) / METERS_PER_DEG_LAT
    cos_lat = max(0.01, math.cos(math.radians(region.lat)))
    dlon = distance_m * math.sin(bearing_rad) / (METERS_PER_DEG_LAT * cos_lat)
    return Region(
        lat=min(max(region.lat + dlat, -90.0), 90.0),
        lon=min(max(region.lon + dlon, -180.0), 180.0),
        radius=region.radius,
        place_id=None,
    )


def generate(base: EventLog, cfg: SynthConfig) -> tuple[EventLog, dict[str, str]]:
    """Derive the shadow dataset and its ground-truth mapping from a base log.

    Deterministic for a fixed (base, cfg): users are visited in sorted-id
    order, events in log order, all randomness from one seeded generator.
    """
    rng = random.Random(cfg.rng_seed)
    users = base.users()
    n_selected = int(cfg.usage_ratio * len(users))
    if n_selected < 1:
        raise ValueError(
            f"usage_ratio {cfg.usage_ratio} selects no users out of {len(users)}"
        )
    selected = sorted(rng.sample(users, n_selected))

    events_by_user: dict[str, list[Event]] = {}
    for ev in base.events:
        events_by_user.setdefault(ev.user, []).append(ev)

    truth: dict[str, str] = {}
    out: list[Event] = []
    tag = DatasetTag.E
    seq = 0
    for ordinal, base_user in enumerate(selected):
        shadow = tag.qualify(f"s{ordinal:06d}")
        truth[shadow] = base_user
        p_user = min(1.0, max(0.0, rng.gauss(cfg.checkin_prob_mean, cfg.stddev)))
        for ev in events_by_user[base_user]:
            if rng.random() >= p_user:
                continue
            t = max(0, ev.time + rng.randint(-cfg.jitter_window, cfg.jitter_window))
            region = ev.region
            if cfg.location_noise_prob > 0.0 and rng.random() < cfg.location_noise_prob:
                region = _displace(region, cfg.location_noise_m, rng.uniform(0.0, 2.0 * math.pi))
            out.append(Event(user=shadow, tag=tag, time=t, region=region, seq=seq))
            seq += 1
    out.sort(key=lambda ev: (ev.time, ev.user, ev.seq))
    return EventLog(tag=tag, events=out), truth


def write_truth(truth: dict[str, str], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for shadow in sorted(truth):
            fh.write(f"{shadow}\t{truth[shadow]}\n")


def read_truth(path: str | Path) -> dict[str, str]:
    truth: dict[str, str] = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            shadow, base = line.split("\t")
            truth[shadow] = base
    return truth


def make_base_log(
    n_users: int,
    events_per_user: float,
    n_days: int,
    seed: int,
    n_places: int = 400,
    places_per_user: int = 4,
    place_radius_m: float = 60.0,
    area_edge_km: float = 40.0,
    session_gap: int = 3600,
    center_lat: float = 39.0,
    center_lon: float = 33.0,
) -> EventLog:
    """Synthesize a base event log with per-user venue schedules.

    Each user owns a few venues drawn from a popularity-skewed shared pool
    and emits events at random times; events closer than ``session_gap``
    stay at the same venue, so a user never contradicts themselves under a
    plausible travel-speed bound. Venue sharing makes coincidental cross-user
    co-occurrences possible, which is what linkage has to survive.
    """
    if n_users < 1 or n_days < 1 or n_places < 1:
        raise ValueError("n_users, n_days and n_places must all be >= 1")
    rng = random.Random(seed)
    half_deg_lat = (area_edge_km * 1000.0 / 2.0) / METERS_PER_DEG_LAT
    cos_lat = max(0.01, math.cos(math.radians(center_lat)))
    half_deg_lon = (area_edge_km * 1000.0 / 2.0) / (METERS_PER_DEG_LAT * cos_lat)
    places = [
        Region(
            lat=center_lat + rng.uniform(-half_deg_lat, half_deg_lat),
            lon=center_lon + rng.uniform(-half_deg_lon, half_deg_lon),
            radius=place_radius_m,
            place_id=f"p{i:04d}",
        )
        for i in range(n_places)
    ]
    # Popularity-skewed venue picks: low indices get shared across users.
    weights = [1.0 / (i + 1) ** 0.8 for i in range(n_places)]

    span = n_days * 86_400
    tag = DatasetTag.I
    events: list[Event] = []
    seq = 0
    for u in range(n_users):
        user = tag.qualify(f"u{u:05d}")
        k = max(2, places_per_user + rng.randint(-1, 2))
        own = rng.choices(range(n_places), weights=weights, k=k)
        n_events = max(1, int(rng.gauss(events_per_user, events_per_user * 0.2)))
        times = sorted(rng.randrange(span) for _ in range(n_events))
        venue = rng.choice(own)
        prev_t = None
        for t in times:
            if prev_t is not None and t - prev_t > session_gap:
                venue = rng.choice(own)
            prev_t = t
            events.append(Event(user=user, tag=tag, time=t, region=places[venue], seq=seq))
            seq += 1
    events.sort(key=lambda ev: (ev.time, ev.user, ev.seq))
    return EventLog(tag=tag, events=events)
