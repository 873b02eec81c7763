"""Scoring and reporting: precision, recall, distributions, stage funnels.

Precision is undefined (None), not zero, when nothing was linked. Recall has
two denominators: the eligible variant counts only shadow users whose events
span at least l distinct places (users below that diversity floor cannot
possibly link), the all-users variant counts every shadow user.

Everything here emits plain text and delimited files; rendering lives in the
separate report module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Optional

from .model import Params, event_place_key
from .store import EventLog

__all__ = [
    "MetricsReport",
    "precision",
    "recall",
    "kl_distribution",
    "stage_funnel_exact",
    "write_curve_csv",
    "write_kl_histogram_csv",
]


def precision(
    linked: Iterable[tuple[str, str]],
    truth: dict[str, str],
) -> tuple[Optional[float], int, int]:
    """(precision or None if nothing linked, correct count, linked count)."""
    linked = list(linked)
    if not linked:
        return None, 0, 0
    correct = sum(1 for x, y in linked if truth.get(y) == x)
    return correct / len(linked), correct, len(linked)


def eligible_users(truth: dict[str, str], events_e: EventLog, params: Params) -> set[str]:
    """Shadow users whose events span at least l distinct places."""
    places: dict[str, set] = {}
    for ev in events_e.events:
        if ev.user in truth:
            places.setdefault(ev.user, set()).add(event_place_key(ev.region, params.place_bin_edge))
    return {user for user, ps in places.items() if len(ps) >= params.l}


def recall(
    linked: Iterable[tuple[str, str]],
    truth: dict[str, str],
    events_e: EventLog,
    params: Params,
) -> tuple[Optional[float], float, int, int]:
    """(eligible recall or None, all-users recall, correct, eligible count).

    Eligible recall is None when no shadow user meets the diversity floor.
    """
    correct_users = {y for x, y in linked if truth.get(y) == x}
    eligible = eligible_users(truth, events_e, params)
    all_users_recall = len(correct_users) / len(truth) if truth else 0.0
    if not eligible:
        return None, all_users_recall, len(correct_users), 0
    eligible_correct = len(correct_users & eligible)
    return eligible_correct / len(eligible), all_users_recall, len(correct_users), len(eligible)


def kl_distribution(evaluations: Iterable) -> dict[tuple[int, int], int]:
    """Histogram of (floor(k_value), l_value) over pair evaluations."""
    hist: dict[tuple[int, int], int] = {}
    for ev in evaluations:
        key = (int(ev.k_value), ev.l_value)  # Fraction floors toward zero; k >= 0
        hist[key] = hist.get(key, 0) + 1
    return hist


def stage_funnel_exact(
    users_i: set[str],
    users_e: set[str],
    assignment: dict[str, frozenset[str]],
    candidate_pairs: int,
    passing_pairs: int,
    linked_pairs: int,
) -> dict[str, int]:
    """Pair counts at each pruning stage; exact even with multi-cell users."""
    cells_i: dict[str, frozenset[str]] = {u: assignment.get(u, frozenset()) for u in users_i}
    cells_e: dict[str, frozenset[str]] = {u: assignment.get(u, frozenset()) for u in users_e}
    per_cell_i: dict[str, int] = {}
    per_cell_e: dict[str, int] = {}
    for u, cells in cells_i.items():
        for c in cells:
            per_cell_i[c] = per_cell_i.get(c, 0) + 1
    for u, cells in cells_e.items():
        for c in cells:
            per_cell_e[c] = per_cell_e.get(c, 0) + 1
    total = sum(n * per_cell_e.get(c, 0) for c, n in per_cell_i.items())
    # Pairs sharing >1 cell were counted once per shared cell; both users must
    # be multi-cell for that, so the correction loop stays tiny.
    multi_i = [u for u, cs in cells_i.items() if len(cs) > 1]
    multi_e = [u for u, cs in cells_e.items() if len(cs) > 1]
    for ux in multi_i:
        for uy in multi_e:
            shared = len(cells_i[ux] & cells_e[uy])
            if shared > 1:
                total -= shared - 1
    return {
        "pairs_unfiltered": len(users_i) * len(users_e),
        "pairs_after_spatial": total,
        "pairs_after_temporal": candidate_pairs,
        "pairs_passing_kl": passing_pairs,
        "pairs_linked": linked_pairs,
    }


@dataclass
class MetricsReport:
    """One run's scores and funnel, serializable as text and key=value."""

    precision: Optional[float] = None
    correct: int = 0
    linked: int = 0
    recall_eligible: Optional[float] = None
    recall_all_users: float = 0.0
    eligible: int = 0
    truth_size: int = 0
    funnel: dict[str, int] = field(default_factory=dict)
    comparisons: int = 0
    histogram: dict[tuple[int, int], int] = field(default_factory=dict)
    threshold_k: str = ""
    threshold_l: int = 0

    def to_kv(self) -> str:
        lines = []
        fmt = lambda v: "n/a" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v))
        lines.append(f"precision={fmt(self.precision)}")
        lines.append(f"correct_links={self.correct}")
        lines.append(f"linked_pairs={self.linked}")
        lines.append(f"recall_eligible={fmt(self.recall_eligible)}")
        lines.append(f"recall_all_users={fmt(self.recall_all_users)}")
        lines.append(f"eligible_users={self.eligible}")
        lines.append(f"truth_users={self.truth_size}")
        lines.append(f"threshold_k={self.threshold_k}")
        lines.append(f"threshold_l={self.threshold_l}")
        lines.append(f"comparisons={self.comparisons}")
        for stage in sorted(self.funnel):
            lines.append(f"funnel.{stage}={self.funnel[stage]}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        out = ["linkage metrics", "==============="]
        p = "n/a" if self.precision is None else f"{self.precision:.4f}"
        r = "n/a" if self.recall_eligible is None else f"{self.recall_eligible:.4f}"
        out.append(f"precision          {p}  ({self.correct}/{self.linked})")
        out.append(f"recall (eligible)  {r}  (eligible users: {self.eligible})")
        out.append(f"recall (all users) {self.recall_all_users:.4f}  (truth users: {self.truth_size})")
        out.append(f"thresholds         k={self.threshold_k} l={self.threshold_l}")
        if self.funnel:
            out.append("stage funnel:")
            for stage in (
                "pairs_unfiltered",
                "pairs_after_spatial",
                "pairs_after_temporal",
                "pairs_passing_kl",
                "pairs_linked",
            ):
                if stage in self.funnel:
                    out.append(f"  {stage:<22} {self.funnel[stage]}")
        if self.comparisons:
            out.append(f"event comparisons  {self.comparisons}")
        return "\n".join(out) + "\n"


def write_curve_csv(path: str | Path, x_name: str, series_names: list[str], rows: list[tuple]) -> None:
    """Delimited curve data (one x column, one column per series)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join([x_name] + series_names) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")


def write_kl_histogram_csv(path: str | Path, histogram: dict[tuple[int, int], int]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("k_floor,l_value,pairs\n")
        for (k, l), n in sorted(histogram.items()):
            fh.write(f"{k},{l},{n}\n")
