"""Spatio-temporal record linkage across two event datasets.

The package links user identities between an "internal" dataset (side I) and
an "external" dataset (side E) by finding pairs whose events repeatedly
co-occur in space and time, never contradict each other faster than a human
could travel, and spread over enough distinct places to be diverse evidence
rather than one crowded room.
"""

from .model import DatasetTag, Event, Params, Region, pair_weight
from .store import EventLog, UserEventIndex, ingest, load_csv
from .temporal import CandidateState, forward_scan, reverse_scan
from .linkage import LinkResult, evaluate_pair, link
from .oracle import oracle_link
from .synth import SynthConfig, generate, make_base_log

__version__ = "0.1.0"

__all__ = [
    "CandidateState",
    "DatasetTag",
    "Event",
    "EventLog",
    "LinkResult",
    "Params",
    "Region",
    "SynthConfig",
    "UserEventIndex",
    "__version__",
    "evaluate_pair",
    "forward_scan",
    "generate",
    "ingest",
    "link",
    "load_csv",
    "make_base_log",
    "oracle_link",
    "pair_weight",
    "reverse_scan",
]
