"""Sequential Monte Carlo outage histories and system contingencies.

Each branch alternates between up and down states with exponentially
distributed times to failure (mean ``8760 / failure_rate`` hours) and times
to repair (mean ``mttr`` hours). Overlapping down intervals of different
components are merged into a single system contingency.

Random substreams: component ``c`` (index in sorted branch-id order) of
horizon segment ``s`` draws from
``numpy.random.SeedSequence(entropy=seed, spawn_key=(s, c))``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .feeder import DEFAULT_RELIABILITY, HOURS_PER_YEAR, Feeder


@dataclass(frozen=True)
class ComponentReliability:
    component_id: str
    failure_rate: float  # failures per year
    mttr: float  # hours

    def __post_init__(self):
        if self.failure_rate < 0:
            raise ValueError(f"{self.component_id}: failure rate must be >= 0")
        if not self.mttr > 0:
            raise ValueError(f"{self.component_id}: mttr must be > 0")


@dataclass(frozen=True)
class SimulationHorizon:
    years: int
    seed: int = 0

    def __post_init__(self):
        if self.years < 1:
            raise ValueError("horizon must span at least one year")

    @property
    def hours(self) -> int:
        return HOURS_PER_YEAR * self.years


@dataclass(frozen=True)
class ContingencyEvent:
    index: int
    failed_components: frozenset[str]
    start_hour: float
    duration: float

    @property
    def end_hour(self) -> float:
        return self.start_hour + self.duration

    @property
    def hours(self) -> range:
        """Absolute hour indices touched by the event."""
        return range(math.floor(self.start_hour), math.ceil(self.end_hour))


def read_reliability_table(path: str | Path) -> dict[str, tuple[float, float]]:
    """Read ``component_class_or_id, failure_rate_per_year, mttr_hours`` rows."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.DictReader(line for line in fh if line.strip() and not line.lstrip().startswith("#"))
        for lineno, row in enumerate(rows, start=2):
            try:
                key = row["component_class_or_id"].strip()
                table[key] = (float(row["failure_rate_per_year"]), float(row["mttr_hours"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad reliability row ({exc})") from None
    return table


def component_reliabilities(
    feeder: Feeder, table: Mapping[str, tuple[float, float]] | None = None
) -> list[ComponentReliability]:
    """Reliability of every branch, sorted by id.

    Precedence: per-id table row, per-class table row, value in the feeder
    file, class default.
    """
    table = table or {}
    out = []
    for br in sorted(feeder.branches, key=lambda b: b.id):
        rate, mttr = DEFAULT_RELIABILITY[br.kind]
        if br.failure_rate is not None:
            rate = br.failure_rate
        if br.mttr_hours is not None:
            mttr = br.mttr_hours
        if br.kind in table:
            rate, mttr = table[br.kind]
        if br.id in table:
            rate, mttr = table[br.id]
        out.append(ComponentReliability(br.id, rate, mttr))
    return out


def component_rng(seed: int, segment: int, component_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(segment, component_index))
    return np.random.default_rng(ss)


def sample_component_history(
    rel: ComponentReliability, horizon: SimulationHorizon | float, rng: np.random.Generator
) -> list[tuple[float, float]]:
    """Down intervals ``(start_hour, duration)`` over ``[0, horizon)``."""
    end = horizon.hours if isinstance(horizon, SimulationHorizon) else float(horizon)
    if rel.failure_rate == 0:
        return []
    mean_up = HOURS_PER_YEAR / rel.failure_rate
    t = 0.0
    out = []
    while True:
        t += rng.exponential(mean_up)
        if t >= end:
            return out
        repair = rng.exponential(rel.mttr)
        out.append((t, min(repair, end - t)))
        t += repair


def merge_system_contingencies(
    histories: Mapping[str, Sequence[tuple[float, float]]], start_index: int = 0
) -> list[ContingencyEvent]:
    """Union overlapping (or touching) down intervals into contingencies."""
    intervals = sorted(
        (start, start + dur, cid) for cid, hist in histories.items() for start, dur in hist if dur > 0
    )
    events: list[ContingencyEvent] = []
    cur_start = cur_end = None
    members: set[str] = set()

    def flush():
        events.append(
            ContingencyEvent(start_index + len(events), frozenset(members), cur_start, cur_end - cur_start)
        )

    for start, end, cid in intervals:
        if cur_end is not None and start <= cur_end:
            cur_end = max(cur_end, end)
            members.add(cid)
            continue
        if cur_end is not None:
            flush()
        cur_start, cur_end, members = start, end, {cid}
    if cur_end is not None:
        flush()
    return events


def segment_years(years: int, segments: int) -> list[int]:
    if segments < 1:
        raise ValueError("need at least one segment")
    segments = min(segments, years)
    base, extra = divmod(years, segments)
    return [base + (1 if s < extra else 0) for s in range(segments)]


def sample_contingencies(
    reliabilities: Iterable[ComponentReliability], horizon: SimulationHorizon, segments: int = 1
) -> list[ContingencyEvent]:
    """Chronological system contingencies over the whole horizon.

    The horizon is cut into ``segments`` independent pieces (all components
    start up at each segment boundary); the event list depends only on
    (seed, years, segments, reliabilities).
    """
    rels = list(reliabilities)
    events: list[ContingencyEvent] = []
    offset = 0.0
    for s, seg_years in enumerate(segment_years(horizon.years, segments)):
        seg_hours = float(seg_years * HOURS_PER_YEAR)
        histories = {}
        for c, rel in enumerate(rels):
            hist = sample_component_history(rel, seg_hours, component_rng(horizon.seed, s, c))
            histories[rel.component_id] = [(offset + t, d) for t, d in hist]
        events += merge_system_contingencies(histories, start_index=len(events))
        offset += seg_hours
    return events
