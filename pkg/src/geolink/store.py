"""Ingestion and storage: raw rows -> event logs -> on-disk per-user index.

Input rows come from headered CSV (``user,time,lat,lon[,radius][,duration]
[,place_id]``). Rows with a duration describe a period observation and are
expanded into point events spaced one alpha apart so that window scans see
long-lived observations in every window they overlap.

The per-user event index is an ordered persistent map. Entries are buffered,
spilled to sorted run files, and k-way merged on finalize; keys are encoded
big-endian so byte order equals (user, time, seq) order and a single seek per
user serves the time-ascending scan the linkage stage needs.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .model import DatasetTag, Event, Params, Region

__all__ = [
    "RawRecord",
    "IngestReport",
    "EventLog",
    "expansion_times",
    "expand_period_event",
    "parse_csv",
    "ingest",
    "load_csv",
    "write_event_log",
    "read_event_log",
    "write_raw_csv",
    "UserEventIndex",
]

DEFAULT_RADIUS_M = 500.0


@dataclass(frozen=True)
class RawRecord:
    """One input row before validation and expansion."""

    user: str
    time: int
    lat: float
    lon: float
    radius: Optional[float] = None
    duration: Optional[int] = None
    place_id: Optional[str] = None


@dataclass
class IngestReport:
    """Per-ingestion accounting; rejected rows never abort the batch."""

    rows_read: int = 0
    rows_rejected: int = 0
    events_emitted: int = 0
    period_rows_expanded: int = 0
    diagnostics: list[str] = field(default_factory=list)

    MAX_DIAGNOSTICS = 50

    def reject(self, lineno: int, reason: str) -> None:
        self.rows_rejected += 1
        if len(self.diagnostics) < self.MAX_DIAGNOSTICS:
            self.diagnostics.append(f"line {lineno}: {reason}")


@dataclass
class EventLog:
    """A side's events, sorted by (time, user, seq)."""

    tag: DatasetTag
    events: list[Event]

    def __len__(self) -> int:
        return len(self.events)

    def users(self) -> list[str]:
        return sorted({ev.user for ev in self.events})

    def check_sorted(self) -> None:
        key = lambda ev: (ev.time, ev.user, ev.seq)
        for a, b in zip(self.events, self.events[1:]):
            if key(a) > key(b):
                raise ValueError(f"event log not sorted at seq {b.seq}")


def expansion_times(time: int, duration: int, alpha: int) -> list[int]:
    """Emission times for a period observation: start, every alpha, the end.

    The end time appears once even when it lands on the stride. Emission count
    is bounded by ceil(duration / alpha) + 1.
    """
    if duration < 0:
        raise ValueError(f"duration must be >= 0: {duration}")
    times = list(range(time, time + duration + 1, alpha))
    if times[-1] != time + duration:
        times.append(time + duration)
    return times


def expand_period_event(
    r: RawRecord,
    alpha: int,
    tag: DatasetTag = DatasetTag.I,
    default_radius: float = DEFAULT_RADIUS_M,
) -> list[Event]:
    """Expand one raw record into point events (one event if no duration)."""
    region = Region(
        lat=r.lat,
        lon=r.lon,
        radius=r.radius if r.radius is not None else default_radius,
        place_id=r.place_id,
    )
    user = tag.qualify(r.user)
    times = expansion_times(r.time, r.duration or 0, alpha)
    return [Event(user=user, tag=tag, time=t, region=region, seq=i) for i, t in enumerate(times)]


def _parse_optional_float(text: str) -> Optional[float]:
    text = text.strip()
    return float(text) if text else None


def _parse_optional_int(text: str) -> Optional[int]:
    text = text.strip()
    return int(text) if text else None


def parse_csv(lines: Iterable[str]) -> Iterator[tuple[int, RawRecord | str]]:
    """Yield (lineno, RawRecord) per data row, or (lineno, message) on error.

    The header row names the columns; user/time/lat/lon are required, the
    rest optional. Unknown columns are ignored.
    """
    reader = csv.reader(lines)
    header: list[str] | None = None
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if header is None:
            header = [c.strip().lower() for c in row]
            missing = {"user", "time", "lat", "lon"} - set(header)
            if missing:
                raise ValueError(f"CSV header missing required columns: {sorted(missing)}")
            continue
        cols = dict(zip(header, row))
        try:
            record = RawRecord(
                user=cols["user"].strip(),
                time=int(cols["time"].strip()),
                lat=float(cols["lat"].strip()),
                lon=float(cols["lon"].strip()),
                radius=_parse_optional_float(cols.get("radius", "")),
                duration=_parse_optional_int(cols.get("duration", "")),
                place_id=(cols.get("place_id", "").strip() or None),
            )
        except (KeyError, ValueError) as exc:
            yield lineno, f"malformed row: {exc}"
            continue
        if not record.user:
            yield lineno, "malformed row: empty user"
            continue
        yield lineno, record


def ingest(
    rows: Iterable[tuple[int, RawRecord | str]],
    tag: DatasetTag,
    params: Params,
    default_radius: float = DEFAULT_RADIUS_M,
) -> tuple[EventLog, IngestReport]:
    """Validate, expand, side-qualify and time-sort raw rows into an EventLog.

    ``rows`` is the (lineno, record-or-error) stream from parse_csv; plain
    RawRecord iterables are accepted too. Bad rows are counted and skipped.
    """
    report = IngestReport()
    events: list[Event] = []
    seq = 0
    for item in rows:
        if isinstance(item, RawRecord):
            lineno, record = report.rows_read + 1, item
        else:
            lineno, record = item
        report.rows_read += 1
        if isinstance(record, str):
            report.reject(lineno, record)
            continue
        try:
            if record.time < 0:
                raise ValueError(f"time must be >= 0: {record.time}")
            if record.duration is not None and record.duration < 0:
                raise ValueError(f"duration must be >= 0: {record.duration}")
            expanded = expand_period_event(record, params.alpha, tag, default_radius)
        except ValueError as exc:
            report.reject(lineno, str(exc))
            continue
        if len(expanded) > 1:
            report.period_rows_expanded += 1
        for ev in expanded:
            events.append(Event(user=ev.user, tag=tag, time=ev.time, region=ev.region, seq=seq))
            seq += 1
    events.sort(key=lambda ev: (ev.time, ev.user, ev.seq))
    report.events_emitted = len(events)
    return EventLog(tag=tag, events=events), report


def load_csv(
    path: str | Path,
    tag: DatasetTag,
    params: Params,
    default_radius: float = DEFAULT_RADIUS_M,
) -> tuple[EventLog, IngestReport]:
    with open(path, newline="") as fh:
        return ingest(parse_csv(fh), tag, params, default_radius)


# ---------------------------------------------------------------------------
# Event-log TSV mirror (debuggable, byte-stable, lossless round trip).

_LOG_HEADER = ["user", "time", "lat", "lon", "radius", "place_id", "seq"]


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_event_log(log: EventLog, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\t".join(_LOG_HEADER) + "\n")
        for ev in log.events:
            r = ev.region
            fh.write(
                "\t".join(
                    (
                        ev.user,
                        str(ev.time),
                        _fmt_float(r.lat),
                        _fmt_float(r.lon),
                        _fmt_float(r.radius),
                        r.place_id or "",
                        str(ev.seq),
                    )
                )
                + "\n"
            )


def read_event_log(path: str | Path, tag: DatasetTag) -> EventLog:
    events: list[Event] = []
    with open(path, newline="") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header != _LOG_HEADER:
            raise ValueError(f"unexpected event log header in {path}: {header}")
        for line in fh:
            user, time_s, lat, lon, radius, place_id, seq = line.rstrip("\n").split("\t")
            events.append(
                Event(
                    user=user,
                    tag=tag,
                    time=int(time_s),
                    region=Region(float(lat), float(lon), float(radius), place_id or None),
                    seq=int(seq),
                )
            )
    return EventLog(tag=tag, events=events)


def write_raw_csv(log: EventLog, path: str | Path) -> None:
    """Write a log as ingestable CSV, stripping the side qualifier again."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    prefix = log.tag.value + ":"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user", "time", "lat", "lon", "radius", "place_id"])
        for ev in log.events:
            user = ev.user[len(prefix):] if ev.user.startswith(prefix) else ev.user
            r = ev.region
            writer.writerow(
                [user, ev.time, _fmt_float(r.lat), _fmt_float(r.lon), _fmt_float(r.radius), r.place_id or ""]
            )


# ---------------------------------------------------------------------------
# On-disk per-user event index.

_RUN_ENTRY = struct.Struct(">HI")  # key length, value length


def _encode_key(user: str, time: int, seq: int) -> bytes:
    # NUL-terminated user keeps prefixes from interleaving; big-endian ints
    # make byte order equal (user, time, seq) order.
    return user.encode("utf-8") + b"\x00" + struct.pack(">QQ", time, seq)


def _encode_value(ev: Event, match_count: int) -> bytes:
    r = ev.region
    fieldsv = (
        ev.user,
        str(ev.time),
        _fmt_float(r.lat),
        _fmt_float(r.lon),
        _fmt_float(r.radius),
        r.place_id or "",
        str(ev.seq),
        str(match_count),
    )
    return "\t".join(fieldsv).encode("utf-8")


def _decode_value(raw: bytes, tag: DatasetTag) -> tuple[Event, int]:
    user, time_s, lat, lon, radius, place_id, seq, count = raw.decode("utf-8").split("\t")
    ev = Event(
        user=user,
        tag=tag,
        time=int(time_s),
        region=Region(float(lat), float(lon), float(radius), place_id or None),
        seq=int(seq),
    )
    return ev, int(count)


class _Shard:
    """One side's sorted-run store under <dir>: run files + merged index."""

    def __init__(self, directory: Path, tag: DatasetTag, run_buffer: int) -> None:
        self.dir = directory
        self.tag = tag
        self.run_buffer = run_buffer
        self.buffer: list[tuple[bytes, bytes]] = []
        self.run_paths: list[Path] = []
        self.offsets: dict[str, tuple[int, int]] = {}
        self.finalized = False

    def put(self, ev: Event, match_count: int) -> None:
        self.buffer.append((_encode_key(ev.user, ev.time, ev.seq), _encode_value(ev, match_count)))
        if len(self.buffer) >= self.run_buffer:
            self._spill()

    def _spill(self) -> None:
        if not self.buffer:
            return
        self.dir.mkdir(parents=True, exist_ok=True)
        self.buffer.sort(key=lambda kv: kv[0])
        path = self.dir / f"run-{len(self.run_paths):05d}.idx"
        with open(path, "wb") as fh:
            for key, value in self.buffer:
                fh.write(_RUN_ENTRY.pack(len(key), len(value)))
                fh.write(key)
                fh.write(value)
            fh.flush()
            os.fsync(fh.fileno())
        self.run_paths.append(path)
        self.buffer = []

    @staticmethod
    def _iter_run(path: Path) -> Iterator[tuple[bytes, bytes]]:
        with open(path, "rb") as fh:
            while True:
                head = fh.read(_RUN_ENTRY.size)
                if not head:
                    return
                klen, vlen = _RUN_ENTRY.unpack(head)
                yield fh.read(klen), fh.read(vlen)

    def finalize(self) -> None:
        self._spill()
        self.dir.mkdir(parents=True, exist_ok=True)
        index_path = self.dir / "index.dat"
        offsets: dict[str, tuple[int, int]] = {}
        with open(index_path, "wb") as fh:
            merged = heapq.merge(*(self._iter_run(p) for p in self.run_paths), key=lambda kv: kv[0])
            for key, value in merged:
                user = key[: key.index(b"\x00")].decode("utf-8")
                if user not in offsets:
                    offsets[user] = (fh.tell(), 0)
                start, n = offsets[user]
                offsets[user] = (start, n + 1)
                fh.write(_RUN_ENTRY.pack(len(key), len(value)))
                fh.write(key)
                fh.write(value)
            fh.flush()
            os.fsync(fh.fileno())
        with open(self.dir / "offsets.tsv", "w") as fh:
            for user in sorted(offsets):
                start, n = offsets[user]
                fh.write(f"{user}\t{start}\t{n}\n")
        self.offsets = offsets
        self.finalized = True

    def load(self) -> None:
        offsets_path = self.dir / "offsets.tsv"
        self.offsets = {}
        if offsets_path.exists():
            with open(offsets_path) as fh:
                for line in fh:
                    user, start, n = line.rstrip("\n").split("\t")
                    self.offsets[user] = (int(start), int(n))
        self.finalized = True

    def scan_user(self, user: str) -> Iterator[tuple[Event, int]]:
        if not self.finalized:
            raise RuntimeError("index not finalized; call finalize() first")
        entry = self.offsets.get(user)
        if entry is None:
            return
        start, n = entry
        with open(self.dir / "index.dat", "rb") as fh:
            fh.seek(start)
            for _ in range(n):
                klen, vlen = _RUN_ENTRY.unpack(fh.read(_RUN_ENTRY.size))
                fh.read(klen)
                yield _decode_value(fh.read(vlen), self.tag)

    def users(self) -> list[str]:
        return sorted(self.offsets)


class UserEventIndex:
    """Ordered persistent map (user, time, seq) -> (event, match count).

    Holds both sides under one root, sharded as <root>/I and <root>/E; the
    side qualifier on user ids routes lookups. Writes happen during the
    forward scan; ``finalize`` merges the runs and makes scans available.
    """

    def __init__(self, root: str | Path, run_buffer: int = 100_000) -> None:
        self.root = Path(root)
        self._shards = {
            DatasetTag.I: _Shard(self.root / "I", DatasetTag.I, run_buffer),
            DatasetTag.E: _Shard(self.root / "E", DatasetTag.E, run_buffer),
        }

    def put(self, ev: Event, match_count: int) -> None:
        if match_count < 0:
            raise ValueError(f"match count must be >= 0: {match_count}")
        self._shards[ev.tag].put(ev, match_count)

    def finalize(self) -> None:
        for shard in self._shards.values():
            shard.finalize()

    @classmethod
    def open(cls, root: str | Path) -> "UserEventIndex":
        idx = cls(root)
        for shard in idx._shards.values():
            shard.load()
        return idx

    def scan_user(self, user: str) -> Iterator[tuple[Event, int]]:
        """That user's (event, match count) entries in ascending time order."""
        return self._shards[DatasetTag.of_user(user)].scan_user(user)

    def users(self, tag: DatasetTag) -> list[str]:
        return self._shards[tag].users()
