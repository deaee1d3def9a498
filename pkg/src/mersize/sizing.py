"""MER power and energy sizing from per-contingency substation deficits.

For an event the net power the MER must supply in hour ``k`` is
``P_net[k] = max(0, P_base[k] - P_after[k])``. The MER starts serving
``delay`` hours after the event begins and stops when the event ends; each
event hour ``[k, k+1)`` is weighted by the fraction of it that falls inside
the served window, so partial hours at either end are prorated linearly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .contingency import ContingencyEvent
from .reconfig import RestorationPlan

log = logging.getLogger(__name__)

CLAMP_EPS_KW = 1e-6


class AlignmentError(ValueError):
    """Base and post-contingency series do not cover the same hours."""


class Status(str, Enum):
    NO_INTERRUPTION = "no_interruption"
    RESTORABLE = "restorable"
    NEEDS_MER = "needs_mer"
    UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class HourlySeries:
    """Values (kW) at absolute hour indices."""

    hours: tuple[int, ...]
    kw: tuple[float, ...]

    def __post_init__(self):
        if len(self.hours) != len(self.kw):
            raise ValueError("hours and values differ in length")

    @classmethod
    def of(cls, hours: Iterable[int], kw: Iterable[float]) -> "HourlySeries":
        return cls(tuple(int(h) for h in hours), tuple(float(x) for x in kw))


def net_power_series(p_base: HourlySeries, p_after: HourlySeries, event: ContingencyEvent | None = None) -> HourlySeries:
    """Clamped deficit over the event hours (or over the common index)."""
    if p_base.hours != p_after.hours:
        raise AlignmentError("P_base and P_after are indexed by different hours")
    if event is not None and p_base.hours != tuple(event.hours):
        raise AlignmentError(
            f"series hours {p_base.hours[:1]}..{p_base.hours[-1:]} do not match event {event.index} hours"
        )
    raw = np.asarray(p_base.kw) - np.asarray(p_after.kw)
    if raw.size and raw.min() < -CLAMP_EPS_KW:
        log.debug("clamped negative net power (min %.4g kW)", raw.min())
    return HourlySeries(p_base.hours, tuple(float(x) for x in np.maximum(raw, 0.0)))


def served_weights(event: ContingencyEvent, delay_hours: float) -> np.ndarray:
    """Fraction of each event hour during which the MER is serving load."""
    lo = event.start_hour + delay_hours
    hi = event.end_hour
    hours = np.arange(event.hours.start, event.hours.stop, dtype=float)
    return np.clip(np.minimum(hours + 1.0, hi) - np.maximum(hours, lo), 0.0, 1.0)


@dataclass(frozen=True)
class ContingencyOutcome:
    event: ContingencyEvent
    plan: RestorationPlan
    status: Status
    response_delay_hours: float | None
    served_hours: tuple[int, ...] = ()
    served_weights: tuple[float, ...] = ()
    p_net: HourlySeries | None = None
    e_net: float = 0.0
    p_max: float = 0.0
    p_avg: float = 0.0
    served_duration: float = 0.0
    skipped_hours: tuple[int, ...] = ()

    @property
    def needs_mer(self) -> bool:
        return self.status in (Status.NEEDS_MER, Status.UNREACHABLE)

    @property
    def unserved(self) -> bool:
        return self.needs_mer and self.served_duration == 0.0


def contingency_outcome(
    event: ContingencyEvent,
    plan: RestorationPlan,
    delay_hours: float | None,
    p_base: HourlySeries | None = None,
    p_after: HourlySeries | None = None,
    interrupts_load: bool = True,
) -> ContingencyOutcome:
    """Served energy and power statistics of one contingency.

    A plan without isolated load yields a non-sizing outcome, counted as
    restorable when the event de-energized load before switching.
    ``delay_hours`` of ``None`` means the MER cannot reach the site: the
    event still needs a MER but serves nothing.
    """
    if not plan.needs_mer:
        status = Status.RESTORABLE if interrupts_load else Status.NO_INTERRUPTION
        return ContingencyOutcome(event, plan, status, delay_hours)
    if delay_hours is None:
        return ContingencyOutcome(event, plan, Status.UNREACHABLE, None)
    if delay_hours < 0:
        raise ValueError("response delay must be >= 0")
    if p_base is None or p_after is None:
        raise ValueError("a contingency needing a MER requires both power series")

    p_net = net_power_series(p_base, p_after, event)
    weights = served_weights(event, delay_hours)
    kw = np.asarray(p_net.kw)
    # hours whose power flow was skipped carry NaN and contribute nothing
    valid = ~np.isnan(kw)
    weights = np.where(valid, weights, 0.0)
    kw0 = np.where(valid, kw, 0.0)
    served = weights > 0
    e_net = float(np.dot(weights, kw0))
    duration = float(weights.sum())
    p_max = float(kw0[served].max()) if served.any() else 0.0
    p_avg = e_net / duration if duration > 0 else 0.0
    hours = np.asarray(p_net.hours)
    return ContingencyOutcome(
        event=event,
        plan=plan,
        status=Status.NEEDS_MER,
        response_delay_hours=float(delay_hours),
        served_hours=tuple(int(h) for h in hours[served]),
        served_weights=tuple(float(w) for w in weights[served]),
        p_net=p_net,
        e_net=e_net,
        p_max=p_max,
        p_avg=p_avg,
        served_duration=duration,
        skipped_hours=tuple(int(h) for h in hours[~valid]),
    )


@dataclass(frozen=True)
class SizingReport:
    n_cont: int
    t_cont: float
    t_avg: float
    e_avg: float
    p_max: float
    p_avg: float
    energy_per_hour: float  # E_avg / t_avg
    restorable_fraction: float
    n_events: int
    n_restorable: int
    n_needs_mer: int
    n_unreachable: int
    n_no_interruption: int
    no_mer_needed: bool
    skipped_hours: int = 0
    extras: dict = field(default_factory=dict)

    def as_dict(self, digits: int | None = None) -> dict:
        out = {
            "n_cont": self.n_cont,
            "t_cont_hours": self.t_cont,
            "t_avg_hours": self.t_avg,
            "E_avg_kwh": self.e_avg,
            "P_max_kw": self.p_max,
            "P_avg_kw": self.p_avg,
            "E_avg_over_t_avg_kw": self.energy_per_hour,
            "restorable_fraction": self.restorable_fraction,
            "n_events": self.n_events,
            "n_restorable": self.n_restorable,
            "n_needs_mer": self.n_needs_mer,
            "n_unreachable": self.n_unreachable,
            "n_no_interruption": self.n_no_interruption,
            "no_mer_needed": self.no_mer_needed,
            "skipped_hours": self.skipped_hours,
        }
        out.update(self.extras)
        if digits is not None:
            out = {k: (round(v, digits) if isinstance(v, float) else v) for k, v in out.items()}
        return out


def aggregate(outcomes: Sequence[ContingencyOutcome]) -> SizingReport:
    """Average the sizing statistics over contingencies that need a MER.

    Sums are accumulated with ``math.fsum`` so the result does not depend on
    the order of ``outcomes``.
    """
    sizing = [o for o in outcomes if o.needs_mer]
    counts = {s: sum(1 for o in outcomes if o.status is s) for s in Status}
    n = len(sizing)
    interrupted = counts[Status.RESTORABLE] + n
    restorable_fraction = counts[Status.RESTORABLE] / interrupted if interrupted else 0.0
    skipped = sum(len(o.skipped_hours) for o in sizing)
    common = dict(
        restorable_fraction=restorable_fraction,
        n_events=len(outcomes),
        n_restorable=counts[Status.RESTORABLE],
        n_needs_mer=counts[Status.NEEDS_MER],
        n_unreachable=counts[Status.UNREACHABLE],
        n_no_interruption=counts[Status.NO_INTERRUPTION],
        skipped_hours=skipped,
    )
    if n == 0:
        return SizingReport(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, no_mer_needed=True, **common)
    t_cont = math.fsum(o.event.duration for o in sizing)
    t_avg = t_cont / n
    e_avg = math.fsum(o.e_net for o in sizing) / n
    return SizingReport(
        n_cont=n,
        t_cont=t_cont,
        t_avg=t_avg,
        e_avg=e_avg,
        p_max=math.fsum(o.p_max for o in sizing) / n,
        p_avg=math.fsum(o.p_avg for o in sizing) / n,
        energy_per_hour=e_avg / t_avg if t_avg > 0 else 0.0,
        no_mer_needed=False,
        **common,
    )
