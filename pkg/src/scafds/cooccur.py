"""Fraud co-occurrence frequency f(u, v, t) over rolling day windows."""

from __future__ import annotations

import csv
from bisect import insort
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels

DEFAULT_WINDOWS = (90, 180, 365)


class EventSource(str, Enum):
    SAR_REGISTRY = "SAR_registry"
    INTERNAL_SAR = "internal_SAR"
    FOREIGN_FIU = "foreign_FIU"
    LAW_ENFORCEMENT = "law_enforcement"


@dataclass(frozen=True, order=True)
class FraudEvent:
    time: int
    institution: str
    source: EventSource = EventSource.SAR_REGISTRY

    def __post_init__(self):
        if self.time < 0:
            raise ValueError("event time must be nonnegative")


@dataclass
class FraudEventLog:
    """Append-only, time-sorted confirmed-fraud events.

    Per-institution sorted time arrays are cached for the counting kernel and
    invalidated on append.
    """

    events: list = field(default_factory=list)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: (e.time, e.institution))
        self._times = None

    def __len__(self):
        return len(self.events)

    @property
    def last_time(self):
        return self.events[-1].time if self.events else None

    def append(self, event):
        insort(self.events, event, key=lambda e: (e.time, e.institution))
        self._times = None

    def times(self, institution, upto=None):
        if self._times is None:
            grouped = {}
            for e in self.events:
                grouped.setdefault(e.institution, []).append(e.time)
            self._times = {k: np.array(v, dtype=np.int64) for k, v in grouped.items()}
        arr = self._times.get(institution, np.zeros(0, dtype=np.int64))
        if upto is not None:
            arr = arr[: np.searchsorted(arr, upto, side="right")]
        return arr

    def institutions(self):
        return sorted({e.institution for e in self.events})


def _validate_windows(windows):
    windows = tuple(int(w) for w in windows)
    if any(w <= 0 for w in windows) or any(b <= a for a, b in zip(windows, windows[1:])):
        raise ValueError(f"windows must be positive and strictly increasing: {windows}")
    return windows


def cooccurrence_frequency(log, u, v, t, window):
    """Share of u's events up to t that are followed by a v event within ``window`` days.

    Only events with time <= t are visible. Returns 0.0 when u has no events.
    """
    if u == v:
        raise ValueError("self co-occurrence is undefined")
    if window <= 0:
        raise ValueError("window must be positive")
    ut = log.times(u, upto=t)
    if len(ut) == 0:
        return 0.0
    vt = log.times(v, upto=t)
    return kernels.cooccurrence_count(ut, vt, window) / len(ut)


def edge_feature_vector(log, u, v, t, windows=DEFAULT_WINDOWS):
    windows = _validate_windows(windows)
    return np.array([cooccurrence_frequency(log, u, v, t, w) for w in windows])


def edge_feature_matrix(log, pairs, t, windows=DEFAULT_WINDOWS):
    """Window vectors for many (u, v) pairs at snapshot time t."""
    windows = _validate_windows(windows)
    out = np.zeros((len(pairs), len(windows)))
    for i, (u, v) in enumerate(pairs):
        out[i] = edge_feature_vector(log, u, v, t, windows)
    return out


@dataclass(frozen=True)
class Disposition:
    u: str
    v: str
    time: int
    strength: float = 1.0
    source: EventSource = EventSource.SAR_REGISTRY


def apply_disposition(log, disposition):
    """Return a new log with paired confirmed events for u and v at the disposition time."""
    out = FraudEventLog(list(log.events))
    out.append(FraudEvent(disposition.time, disposition.u, disposition.source))
    out.append(FraudEvent(disposition.time, disposition.v, disposition.source))
    return out


def read_events_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"institution", "time", "source"} <= set(rows[0]):
        raise ValueError(f"{path}: header must be institution,time,source")
    return FraudEventLog([FraudEvent(int(r["time"]), r["institution"], EventSource(r["source"])) for r in rows])


def write_events_csv(log, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["institution", "time", "source"])
        for e in log.events:
            w.writerow([e.institution, e.time, e.source.value])
