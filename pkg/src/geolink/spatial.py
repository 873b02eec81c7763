"""Spatial pre-filtering: quad-tree grid, border strips, dominating cells.

The grid splits the combined bounding box of both datasets until every
occupied leaf has an edge in [min_cell_edge, 2*min_cell_edge); empty leaves
are never split. Each user is then assigned to the cell(s) where most of
their events fall, with events near a cell border also counted for the
neighbor so that users straddling a border still share a cell. Downstream
stages only ever compare users whose dominating cell sets intersect.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .model import METERS_PER_DEG_LAT, DatasetTag, Event, Params
from .store import EventLog

__all__ = [
    "CellBounds",
    "GridTree",
    "build_grid",
    "cells_for_event",
    "count_user_cells",
    "dominating_grids",
    "partition_datasets",
    "write_manifest",
    "read_manifest",
]

_BOUNDARY_NUDGE_DEG = 1e-9  # ~0.1 mm; just enough to cross a border


@dataclass(frozen=True)
class CellBounds:
    """Axis-aligned lat/lon rectangle; south/west edges inclusive."""

    lat0: float
    lat1: float
    lon0: float
    lon1: float

    @property
    def center(self) -> tuple[float, float]:
        return ((self.lat0 + self.lat1) / 2.0, (self.lon0 + self.lon1) / 2.0)

    def edge_meters(self) -> tuple[float, float]:
        """(height, width) in meters, width measured at center latitude."""
        center_lat = (self.lat0 + self.lat1) / 2.0
        height = (self.lat1 - self.lat0) * METERS_PER_DEG_LAT
        width = (self.lon1 - self.lon0) * METERS_PER_DEG_LAT * math.cos(math.radians(center_lat))
        return height, width

    def min_edge_meters(self) -> float:
        return min(self.edge_meters())


class _Node:
    __slots__ = ("bounds", "cell_id", "children", "occupied")

    def __init__(self, bounds: CellBounds, cell_id: str, occupied: bool) -> None:
        self.bounds = bounds
        self.cell_id = cell_id
        self.children: Optional[list["_Node"]] = None
        self.occupied = occupied


class GridTree:
    """Deterministic quad-tree over the combined event sample."""

    def __init__(self, root: _Node, min_cell_edge: float) -> None:
        self._root = root
        self.min_cell_edge = min_cell_edge
        self._leaves: dict[str, _Node] = {}
        self._collect(root)

    def _collect(self, node: _Node) -> None:
        if node.children is None:
            self._leaves[node.cell_id] = node
        else:
            for child in node.children:
                self._collect(child)

    @property
    def bounds(self) -> CellBounds:
        return self._root.bounds

    def leaves(self) -> dict[str, CellBounds]:
        return {cid: n.bounds for cid, n in sorted(self._leaves.items())}

    def occupied_leaves(self) -> dict[str, CellBounds]:
        return {cid: n.bounds for cid, n in sorted(self._leaves.items()) if n.occupied}

    def leaf_bounds(self, cell_id: str) -> CellBounds:
        return self._leaves[cell_id].bounds

    def clamp(self, lat: float, lon: float) -> tuple[float, float, bool]:
        """Pull a point into the root box; flag whether clamping happened."""
        b = self._root.bounds
        clat = min(max(lat, b.lat0), b.lat1)
        clon = min(max(lon, b.lon0), b.lon1)
        return clat, clon, (clat != lat or clon != lon)

    def leaf_for(self, lat: float, lon: float) -> str:
        """Leaf containing the (clamped) point; midpoint ties go north/east."""
        lat, lon, _ = self.clamp(lat, lon)
        node = self._root
        while node.children is not None:
            b = node.bounds
            mid_lat = (b.lat0 + b.lat1) / 2.0
            mid_lon = (b.lon0 + b.lon1) / 2.0
            quadrant = (2 if lat >= mid_lat else 0) + (1 if lon >= mid_lon else 0)
            node = node.children[quadrant]
        return node.cell_id


def _expand_to_min(lo: float, hi: float, min_span: float, bound_lo: float, bound_hi: float) -> tuple[float, float]:
    span = hi - lo
    if span >= min_span:
        return lo, hi
    pad = (min_span - span) / 2.0
    lo, hi = lo - pad, hi + pad
    if lo < bound_lo:
        hi += bound_lo - lo
        lo = bound_lo
    if hi > bound_hi:
        lo -= hi - bound_hi
        hi = bound_hi
    return max(lo, bound_lo), min(hi, bound_hi)


def build_grid(sample: Iterable[Event], min_cell_edge: float) -> GridTree:
    """Build the grid from a sample of events (normally both full logs).

    Deterministic in the event multiset: the tree depends only on the
    bounding box and on which quadrants contain points.
    """
    points = [(ev.region.lat, ev.region.lon) for ev in sample]
    if not points:
        raise ValueError("cannot build a grid from an empty event sample")
    lats = [p[0] for p in points]
    lons = [p[1] for p in points]
    lat0, lat1 = min(lats), max(lats)
    lon0, lon1 = min(lons), max(lons)
    # Expand degenerate boxes so the root is at least one minimum cell.
    center_lat = (lat0 + lat1) / 2.0
    min_lat_span = min_cell_edge / METERS_PER_DEG_LAT
    cos_lat = max(0.01, math.cos(math.radians(center_lat)))
    min_lon_span = min_cell_edge / (METERS_PER_DEG_LAT * cos_lat)
    lat0, lat1 = _expand_to_min(lat0, lat1, min_lat_span, -90.0, 90.0)
    lon0, lon1 = _expand_to_min(lon0, lon1, min_lon_span, -180.0, 180.0)

    root = _Node(CellBounds(lat0, lat1, lon0, lon1), "r", occupied=True)

    def split(node: _Node, pts: list[tuple[float, float]]) -> None:
        node.occupied = bool(pts)
        if not pts:
            return
        if node.bounds.min_edge_meters() < 2.0 * min_cell_edge:
            return
        b = node.bounds
        mid_lat = (b.lat0 + b.lat1) / 2.0
        mid_lon = (b.lon0 + b.lon1) / 2.0
        quads = [
            CellBounds(b.lat0, mid_lat, b.lon0, mid_lon),  # SW
            CellBounds(b.lat0, mid_lat, mid_lon, b.lon1),  # SE
            CellBounds(mid_lat, b.lat1, b.lon0, mid_lon),  # NW
            CellBounds(mid_lat, b.lat1, mid_lon, b.lon1),  # NE
        ]
        buckets: list[list[tuple[float, float]]] = [[], [], [], []]
        for lat, lon in pts:
            q = (2 if lat >= mid_lat else 0) + (1 if lon >= mid_lon else 0)
            buckets[q].append((lat, lon))
        node.children = [
            _Node(quads[q], node.cell_id + str(q), occupied=bool(buckets[q])) for q in range(4)
        ]
        for q in range(4):
            split(node.children[q], buckets[q])

    split(root, points)
    return GridTree(root, min_cell_edge)


def cells_for_event(
    tree: GridTree,
    ev: Event,
    strip_fraction: float,
    diagnostics: Optional[dict[str, int]] = None,
) -> frozenset[str]:
    """Home leaf plus adjacent leaves whose border is within the strip.

    The strip is strip_fraction * min_cell_edge meters wide; an event near one
    border is counted for the neighbor across it, near a corner also for the
    diagonal neighbor. At most four cells total.
    """
    lat, lon, clamped = tree.clamp(ev.region.lat, ev.region.lon)
    if clamped and diagnostics is not None:
        diagnostics["outside_root"] = diagnostics.get("outside_root", 0) + 1
    home = tree.leaf_for(lat, lon)
    b = tree.leaf_bounds(home)
    strip_m = strip_fraction * tree.min_cell_edge
    cos_lat = max(0.01, math.cos(math.radians(lat)))

    d_south = (lat - b.lat0) * METERS_PER_DEG_LAT
    d_north = (b.lat1 - lat) * METERS_PER_DEG_LAT
    d_west = (lon - b.lon0) * METERS_PER_DEG_LAT * cos_lat
    d_east = (b.lon1 - lon) * METERS_PER_DEG_LAT * cos_lat

    dy = -1 if d_south <= strip_m else (1 if d_north <= strip_m else 0)
    dx = -1 if d_west <= strip_m else (1 if d_east <= strip_m else 0)

    def probe_lat(direction: int) -> float:
        return b.lat0 - _BOUNDARY_NUDGE_DEG if direction < 0 else b.lat1 + _BOUNDARY_NUDGE_DEG

    def probe_lon(direction: int) -> float:
        return b.lon0 - _BOUNDARY_NUDGE_DEG if direction < 0 else b.lon1 + _BOUNDARY_NUDGE_DEG

    root = tree.bounds
    cells = {home}
    probes: list[tuple[float, float]] = []
    if dy:
        probes.append((probe_lat(dy), lon))
    if dx:
        probes.append((lat, probe_lon(dx)))
    if dy and dx:
        probes.append((probe_lat(dy), probe_lon(dx)))
    for plat, plon in probes:
        if not (root.lat0 <= plat <= root.lat1 and root.lon0 <= plon <= root.lon1):
            continue  # border of the root box has no neighbor
        cells.add(tree.leaf_for(plat, plon))
    return frozenset(cells)


def count_user_cells(
    tree: GridTree,
    logs: Iterable[EventLog],
    strip_fraction: float,
    diagnostics: Optional[dict[str, int]] = None,
) -> dict[str, dict[str, int]]:
    """Per-user, per-cell event tallies under the strip counting rule."""
    counts: dict[str, dict[str, int]] = {}
    for log in logs:
        for ev in log.events:
            per_user = counts.setdefault(ev.user, {})
            for cell in cells_for_event(tree, ev, strip_fraction, diagnostics):
                per_user[cell] = per_user.get(cell, 0) + 1
    return counts


def dominating_grids(
    counts: dict[str, dict[str, int]],
    tie_epsilon: float = 0.0,
) -> dict[str, frozenset[str]]:
    """Each user's argmax cell(s); counts within (1-eps) of the max all win."""
    assignment: dict[str, frozenset[str]] = {}
    for user, per_cell in counts.items():
        if not per_cell:
            continue
        top = max(per_cell.values())
        threshold = (1.0 - tie_epsilon) * top
        assignment[user] = frozenset(c for c, n in per_cell.items() if n >= threshold)
    return assignment


def partition_datasets(
    log_i: EventLog,
    log_e: EventLog,
    assignment: dict[str, frozenset[str]],
) -> dict[str, tuple[EventLog, EventLog]]:
    """Per-cell event logs: every event of every user dominated by the cell.

    A user's events all travel together (wherever they fall), so a user pair
    is compared downstream iff their dominating sets share a cell. Cells with
    no assigned users are omitted.
    """
    cell_users: dict[str, set[str]] = {}
    for user, cells in assignment.items():
        for cell in cells:
            cell_users.setdefault(cell, set()).add(user)
    partitions: dict[str, tuple[EventLog, EventLog]] = {}
    for cell in sorted(cell_users):
        users = cell_users[cell]
        part_i = [ev for ev in log_i.events if ev.user in users]
        part_e = [ev for ev in log_e.events if ev.user in users]
        partitions[cell] = (
            EventLog(tag=DatasetTag.I, events=part_i),
            EventLog(tag=DatasetTag.E, events=part_e),
        )
    return partitions


def write_manifest(
    path: str | Path,
    tree: GridTree,
    assignment: dict[str, frozenset[str]],
    partitions: dict[str, tuple[EventLog, EventLog]],
    params: Params,
    diagnostics: Optional[dict[str, int]] = None,
) -> None:
    cells = []
    for cell, (part_i, part_e) in sorted(partitions.items()):
        b = tree.leaf_bounds(cell)
        cells.append(
            {
                "cell": cell,
                "bounds": [b.lat0, b.lat1, b.lon0, b.lon1],
                "users_i": len({ev.user for ev in part_i.events}),
                "users_e": len({ev.user for ev in part_e.events}),
                "events_i": len(part_i),
                "events_e": len(part_e),
            }
        )
    multi = sorted(u for u, cs in assignment.items() if len(cs) > 1)
    payload = {
        "min_cell_edge": params.min_cell_edge,
        "strip_fraction": params.strip_fraction,
        "root_bounds": [tree.bounds.lat0, tree.bounds.lat1, tree.bounds.lon0, tree.bounds.lon1],
        "leaf_count": len(tree.leaves()),
        "cells": cells,
        "multi_cell_users": multi,
        "diagnostics": diagnostics or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: str | Path) -> dict:
    with open(path) as fh:
        return json.load(fh)
