"""End-to-end MER sizing run: load data, simulate, size, and write reports.

Order of work:

1. intact-network substation injection for every hour of the profile year;
2. outage sampling over the horizon;
3. a restoration plan per contingency;
4. post-contingency power flow, batched per distinct radial configuration;
5. routing from the nearest depot to the MER connection bus;
6. per-contingency sizing and aggregation.

Power-flow jobs are formed from the whole event list before any work is
distributed, so the numbers do not depend on the worker count.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .contingency import (
    ContingencyEvent,
    SimulationHorizon,
    component_reliabilities,
    read_reliability_table,
    sample_contingencies,
)
from .feeder import HOURS_PER_YEAR, Feeder, LoadProfile, load_feeder, read_profile_csv
from .powerflow import base_year, compile_network, dump_voltages
from .reconfig import RestorationPlan, build_restoration_plan, interrupts_load, operable_graph
from .routing import RoadNetwork, Route, load_road_network, response_delay, route_to_bus
from .sizing import ContingencyOutcome, HourlySeries, SizingReport, Status, aggregate, contingency_outcome

log = logging.getLogger(__name__)

REPORT_DIGITS = 6
PF_CHUNK_HOURS = 1460


class ConfigError(ValueError):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("mersize") / "data" / name))


BUNDLED_FEEDERS = ("ieee13", "ieee123")


@dataclass(frozen=True)
class RunConfig:
    feeder: str
    reliability: str | None = None
    roads: str | None = None
    profile: str | None = None
    years: int = 200
    seed: int = 0
    installation_minutes: float = 15.0
    replications: int = 1
    workers: int = 1
    reconfigure: bool = True
    lossless_base: bool = False
    dump_diagnostics: str | None = None
    dump_powerflow: str | None = None
    out: str | None = None

    def __post_init__(self):
        if self.years < 1:
            raise ConfigError("years must be >= 1")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.installation_minutes < 0:
            raise ConfigError("installation time must be >= 0")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        aliases = {"install_min": "installation_minutes"}
        kwargs = {}
        for key, value in data.items():
            key = key.replace("-", "_")
            if key == "no_reconfig":
                kwargs["reconfigure"] = not value
                continue
            key = aliases.get(key, key)
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    def resolved(self) -> "RunConfig":
        """Copy with bundled names expanded and default data files filled in."""
        feeder = self.feeder
        bundled = feeder in BUNDLED_FEEDERS
        if bundled:
            feeder = str(data_path(f"{feeder}.feeder"))
        elif not Path(feeder).is_file():
            raise ConfigError(f"feeder file not found: {feeder}")
        roads = self.roads
        if roads is None:
            if not bundled:
                raise ConfigError("a road network file is required for a non-bundled feeder")
            roads = str(data_path(f"{self.feeder}_roads.csv"))
        reliability = self.reliability or str(data_path("table1_reliability.csv"))
        for label, path in (("feeder", feeder), ("roads", roads), ("reliability", reliability), ("profile", self.profile)):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} file not found: {path}")
        return RunConfig(**{**asdict(self), "feeder": feeder, "roads": roads, "reliability": reliability})


@dataclass
class RunResult:
    report: SizingReport
    outcomes: list[ContingencyOutcome]
    events: list[ContingencyEvent]
    report_dict: dict
    nonconverged_hours: list[tuple[int, int]] = field(default_factory=list)  # (event index, hour)


# ----------------------------------------------------------------------
# power-flow jobs


@dataclass(frozen=True)
class _Job:
    closed_set: frozenset[str]
    hours: tuple[int, ...]  # hour-of-year indices, sorted


def _solve_job(feeder: Feeder, job: _Job, want_voltages: bool):
    net = compile_network(feeder, job.closed_set)
    kw, ok, rows = [], [], []
    hours = np.asarray(job.hours, dtype=int)
    for start in range(0, len(hours), PF_CHUNK_HOURS):
        chunk = hours[start : start + PF_CHUNK_HOURS]
        res = net.solve_hours(chunk)
        kw.append(res.substation_kw)
        ok.append(res.converged)
        if want_voltages:
            rows += dump_voltages(res, net, chunk)
    return np.concatenate(kw), np.concatenate(ok), rows


_WORKER_FEEDER: Feeder | None = None


def _init_worker(feeder: Feeder) -> None:
    global _WORKER_FEEDER
    _WORKER_FEEDER = feeder


def _solve_job_in_worker(args):
    job, want_voltages = args
    return _solve_job(_WORKER_FEEDER, job, want_voltages)


def _run_jobs(feeder: Feeder, jobs: Sequence[_Job], workers: int, want_voltages: bool) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_solve_job(feeder, j, want_voltages) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(feeder,)) as pool:
        return list(pool.map(_solve_job_in_worker, [(j, want_voltages) for j in jobs], chunksize=1))


def _lossless_energized_kw(feeder: Feeder, energized: frozenset[str], hours: np.ndarray) -> np.ndarray:
    hours = np.asarray(hours, dtype=int) % HOURS_PER_YEAR
    total = np.zeros(len(hours))
    for ld in feeder.loads:
        if ld.shunt or ld.bus not in energized:
            continue
        m = np.asarray(feeder.profile[ld.profile].multipliers)[hours] if ld.profile else 1.0
        total += m * ld.total_kw
    return total


# ----------------------------------------------------------------------
# orchestration


def prepare_feeder(config: RunConfig) -> Feeder:
    feeder = load_feeder(config.feeder)
    if config.profile:
        values = read_profile_csv(config.profile)
        feeder = feeder.with_profiles([LoadProfile(Path(config.profile).stem, values)])
    return feeder


def plan_events(
    feeder: Feeder, events: Iterable[ContingencyEvent], reconfigure: bool
) -> list[tuple[RestorationPlan, bool]]:
    """(plan, interrupts load) per event, memoized on the failed set."""
    cache: dict[frozenset[str], tuple[RestorationPlan, bool]] = {}
    out = []
    for ev in events:
        key = ev.failed_components
        if key not in cache:
            plan = build_restoration_plan(operable_graph(feeder, key, reconfigure))
            cache[key] = (plan, interrupts_load(feeder, key))
        out.append(cache[key])
    return out


@dataclass
class Evaluation:
    outcomes: list[ContingencyOutcome]
    nonconverged_hours: list[tuple[int, int]]
    voltages: dict


def evaluate_events(
    feeder: Feeder,
    roads: RoadNetwork,
    events: Sequence[ContingencyEvent],
    *,
    reconfigure: bool = True,
    installation_minutes: float = 15.0,
    lossless_base: bool = False,
    workers: int = 1,
    keep_voltages: bool = False,
) -> Evaluation:
    """Restoration, power flow, routing and sizing for a list of events."""
    base = base_year(feeder, lossless_base)
    if not base.converged.all():
        log.warning("base case failed to converge at %d hours", int((~base.converged).sum()))
    plans = plan_events(feeder, events, reconfigure)

    # group post-contingency power flows by radial configuration
    wanted: dict[frozenset[str], set[int]] = defaultdict(set)
    for ev, (plan, _) in zip(events, plans):
        if plan.needs_mer and not lossless_base:
            wanted[plan.closed_set].update(h % HOURS_PER_YEAR for h in ev.hours)
    jobs = [_Job(cs, tuple(sorted(hrs))) for cs, hrs in sorted(wanted.items(), key=lambda kv: sorted(kv[0]))]
    results = _run_jobs(feeder, jobs, workers, keep_voltages)
    after: dict[frozenset[str], dict[int, float]] = {}
    voltages: dict[tuple[frozenset[str], int], list] = defaultdict(list)
    for job, (kw, ok, rows) in zip(jobs, results):
        after[job.closed_set] = {h: (float(p) if c else math.nan) for h, p, c in zip(job.hours, kw, ok)}
        for row in rows:
            voltages[(job.closed_set, row[0])].append(row[1:])

    route_cache: dict[str, Route] = {}
    outcomes: list[ContingencyOutcome] = []
    nonconverged: list[tuple[int, int]] = []
    for ev, (plan, interrupts) in zip(events, plans):
        if not plan.needs_mer:
            outcomes.append(contingency_outcome(ev, plan, None, interrupts_load=interrupts))
            continue
        bus = plan.mer_connection_bus
        if bus not in route_cache:
            route_cache[bus] = route_to_bus(roads, bus)
        delay = response_delay(route_cache[bus], installation_minutes)
        hours = np.arange(ev.hours.start, ev.hours.stop)
        p_base = np.where(base.converged[hours % HOURS_PER_YEAR], base.at(hours), math.nan)
        if lossless_base:
            p_after = _lossless_energized_kw(feeder, plan.energized_buses, hours)
        else:
            table_after = after[plan.closed_set]
            p_after = np.array([table_after[h % HOURS_PER_YEAR] for h in hours])
        nonconverged += [(ev.index, int(h)) for h, a, b in zip(hours, p_base, p_after) if math.isnan(a - b)]
        outcomes.append(
            contingency_outcome(ev, plan, delay, HourlySeries.of(hours, p_base), HourlySeries.of(hours, p_after))
        )
    return Evaluation(outcomes, nonconverged, dict(voltages))


def run(config: RunConfig) -> RunResult:
    config = config.resolved()
    feeder = prepare_feeder(config)
    roads = load_road_network(config.roads)
    table = read_reliability_table(config.reliability)

    horizon = SimulationHorizon(config.years, config.seed)
    events = sample_contingencies(component_reliabilities(feeder, table), horizon, segments=config.replications)
    ev = evaluate_events(
        feeder,
        roads,
        events,
        reconfigure=config.reconfigure,
        installation_minutes=config.installation_minutes,
        lossless_base=config.lossless_base,
        workers=config.workers,
        keep_voltages=config.dump_powerflow is not None,
    )

    report = aggregate(ev.outcomes)
    report_dict = build_report_dict(config, feeder, report)
    result = RunResult(report, ev.outcomes, events, report_dict, ev.nonconverged_hours)
    if config.out:
        write_outputs(config, result)
    if config.dump_diagnostics:
        write_diagnostics(config.dump_diagnostics, ev.outcomes)
    if config.dump_powerflow:
        write_powerflow_dump(config.dump_powerflow, ev.outcomes, ev.voltages)
    return result


# ----------------------------------------------------------------------
# output


def build_report_dict(config: RunConfig, feeder: Feeder, report: SizingReport) -> dict:
    return {
        "feeder": feeder.name,
        "years": config.years,
        "seed": config.seed,
        "replications": config.replications,
        "installation_minutes": round(float(config.installation_minutes), REPORT_DIGITS),
        "reconfigure": config.reconfigure,
        "lossless_base": config.lossless_base,
        "report": report.as_dict(REPORT_DIGITS),
    }


def report_json(result: RunResult) -> str:
    return json.dumps(result.report_dict, sort_keys=True, indent=2) + "\n"


def report_text(result: RunResult) -> str:
    r = result.report
    d = result.report_dict
    rows = [
        ("Average size (kWh)", f"{r.e_avg:.2f}"),
        ("Maximum size (kW)", f"{r.p_max:.2f}"),
        ("Average size (kW)", f"{r.p_avg:.2f}"),
        ("Average size, E_avg / t_avg (kW)", f"{r.energy_per_hour:.2f}"),
        ("Average duration time (hours)", f"{r.t_avg:.2f}"),
        ("Contingencies needing a MER (n_cont)", str(r.n_cont)),
        ("Restorable fraction", f"{100 * r.restorable_fraction:.1f}%"),
    ]
    width = max(len(k) for k, _ in rows)
    lines = [
        f"MER sizing for {d['feeder']}: {d['years']} years, seed {d['seed']}, "
        f"reconfiguration {'on' if d['reconfigure'] else 'off'}",
        "",
    ]
    lines += [f"{k:<{width}}  {v:>12}" for k, v in rows]
    lines += [
        "",
        f"events {r.n_events}: restorable {r.n_restorable}, needs MER {r.n_needs_mer}, "
        f"unreachable {r.n_unreachable}, no interruption {r.n_no_interruption}",
    ]
    if r.no_mer_needed:
        lines.append("no MER needed: every contingency was restored by switching")
    if result.nonconverged_hours:
        lines += ["", f"non-convergent power-flow hours skipped: {len(result.nonconverged_hours)}"]
        lines += [f"  event {i} hour {h}" for i, h in result.nonconverged_hours[:50]]
    return "\n".join(lines) + "\n"


def write_outputs(config: RunConfig, result: RunResult) -> None:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report_json(result), encoding="utf-8")
    (out / "report.txt").write_text(report_text(result), encoding="utf-8")


def diagnostic_record(o: ContingencyOutcome) -> dict:
    ev, plan = o.event, o.plan
    rnd = lambda x: None if x is None else round(float(x), REPORT_DIGITS)  # noqa: E731
    return {
        "event_index": ev.index,
        "start_hour": rnd(ev.start_hour),
        "duration_hours": rnd(ev.duration),
        "failed_components": sorted(ev.failed_components),
        "fully_restorable": plan.fully_restorable,
        "switch_ops": [list(op) for op in plan.switch_ops],
        "isolated_buses": list(plan.isolated_buses),
        "isolated_load_kw": rnd(plan.isolated_kw),
        "status": o.status.value,
        "mer_connection_bus": plan.mer_connection_bus if o.needs_mer else None,
        "response_delay_hours": rnd(o.response_delay_hours) if o.needs_mer else None,
        "e_net_kwh": rnd(o.e_net),
        "p_max_kw": rnd(o.p_max),
        "p_avg_kw": rnd(o.p_avg),
    }


def write_diagnostics(path: str | Path, outcomes: Iterable[ContingencyOutcome]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(diagnostic_record(o), sort_keys=True) + "\n")


def write_powerflow_dump(path: str | Path, outcomes: Iterable[ContingencyOutcome], voltages: Mapping) -> None:
    """Post-contingency bus voltages for every hour of every MER event."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_index", "hour", "bus", "phase", "v_pu", "angle_deg"])
        for o in outcomes:
            if o.p_net is None:
                continue
            for hour in o.p_net.hours:
                for bus, phase, mag, ang in voltages.get((o.plan.closed_set, hour % HOURS_PER_YEAR), ()):
                    writer.writerow([o.event.index, hour, bus, phase, f"{mag:.8f}", f"{ang:.6f}"])
