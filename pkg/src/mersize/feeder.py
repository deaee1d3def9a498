"""Distribution feeder data model, text format parser/serializer and
structural validation.

A feeder file is a sequence of sections. Every ``[bus]``, ``[branch]`` and
``[load]`` header opens a new record; ``[profile <id>]`` opens a load
profile. Records are ``key = value`` lines, ``#`` starts a comment::

    [bus]
    id = 650
    phases = ABC
    kind = substation
    kv = 4.16

    [branch]
    id = L650-632
    from = 650
    to = 632
    kind = line
    phases = ABC
    z = 0.3465+1.0179j, 0.1560+0.5017j, 0.1580+0.4236j, 0.3375+1.0478j, 0.1535+0.3849j, 0.3414+1.0348j
    length = 0.378788

    [load]
    id = LD634
    bus = 634
    phases = ABC
    model = constant_power
    kw = 160, 120, 120
    kvar = 110, 90, 90
    profile = default

    [profile default]
    file = profile.csv

``z`` holds the upper triangle (aa, ab, ac, bb, bc, cc) of the series
impedance per unit length in ohms; ``length`` multiplies it. Transformer
impedances are referred to the ``from`` side.
"""

from __future__ import annotations

import math
from collections import defaultdict, deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

PHASES = "ABC"
HOURS_PER_YEAR = 8760

BUS_KINDS = ("substation", "load", "junction")
BRANCH_KINDS = ("line", "transformer", "switch")
SWITCH_ROLES = ("sectionalizing", "tie")
LOAD_MODELS = ("constant_power", "constant_current", "constant_impedance")

# Mean failure rate (1/yr) and mean repair time (h) per component class.
DEFAULT_RELIABILITY = {
    "transformer": (0.05882, 144.0),
    "line": (0.13, 5.0),
    "switch": (0.2, 5.0),
}


class FeederError(ValueError):
    """Raised for malformed or structurally invalid feeder data."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:" if source is not None else f"line {line}:"
        super().__init__(f"{where} {message}" if where else message)


def _phase_index(phases: str) -> list[int]:
    return [PHASES.index(p) for p in phases]


def _norm_phases(text: str) -> str:
    raw = text.replace(",", "").replace(" ", "").upper()
    if not raw or any(p not in PHASES for p in raw) or len(set(raw)) != len(raw):
        raise ValueError(f"bad phase set {text!r}")
    return "".join(p for p in PHASES if p in raw)


@dataclass(frozen=True)
class Bus:
    id: str
    phases: str
    kind: str = "junction"
    nominal_kv: float = 4.16  # line-to-line

    def __post_init__(self):
        if not self.phases:
            raise FeederError(f"bus {self.id}: empty phase set")
        if self.kind not in BUS_KINDS:
            raise FeederError(f"bus {self.id}: unknown kind {self.kind!r}")
        if not self.nominal_kv > 0:
            raise FeederError(f"bus {self.id}: nominal voltage must be positive")


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    kind: str
    phases: str
    z: tuple[complex, ...] = (0j,) * 6
    length: float = 1.0
    switch_role: str | None = None
    normally_open: bool = False
    failure_rate: float | None = None
    mttr_hours: float | None = None

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise FeederError(f"branch {self.id}: from and to bus are identical")
        if self.kind not in BRANCH_KINDS:
            raise FeederError(f"branch {self.id}: unknown kind {self.kind!r}")
        if len(self.z) != 6:
            raise FeederError(f"branch {self.id}: impedance needs 6 upper-triangle entries")
        if self.kind == "switch":
            if self.switch_role not in SWITCH_ROLES:
                raise FeederError(f"branch {self.id}: switch needs switch_role sectionalizing|tie")
        elif self.switch_role is not None:
            raise FeederError(f"branch {self.id}: switch_role only applies to switches")
        if self.normally_open and self.switch_role != "tie":
            raise FeederError(f"branch {self.id}: only tie switches may be normally open")
        if self.switch_role == "tie" and not self.normally_open:
            raise FeederError(f"branch {self.id}: tie switches are normally open")
        if self.failure_rate is not None and self.failure_rate < 0:
            raise FeederError(f"branch {self.id}: negative failure rate")
        if self.mttr_hours is not None and not self.mttr_hours > 0:
            raise FeederError(f"branch {self.id}: mttr must be positive")
        if self.length < 0:
            raise FeederError(f"branch {self.id}: negative length")
        idx = set(_phase_index(self.phases))
        zm = self.z_matrix
        for i in range(3):
            if i not in idx and np.any(zm[i] != 0):
                raise FeederError(f"branch {self.id}: impedance on absent phase {PHASES[i]}")

    @property
    def z_matrix(self) -> np.ndarray:
        """Total 3x3 series impedance in ohms (symmetric)."""
        aa, ab, ac, bb, bc, cc = self.z
        m = np.array([[aa, ab, ac], [ab, bb, bc], [ac, bc, cc]], dtype=complex)
        return m * self.length

    @property
    def is_tie(self) -> bool:
        return self.switch_role == "tie"

    @property
    def component_class(self) -> str:
        return self.kind


@dataclass(frozen=True)
class LoadPoint:
    id: str
    bus: str
    phases: str
    kw: tuple[float, ...]
    kvar: tuple[float, ...]
    model: str = "constant_power"
    profile: str | None = None
    shunt: bool = False  # capacitor bank; excluded from load totals

    def __post_init__(self):
        if self.model not in LOAD_MODELS:
            raise FeederError(f"load {self.id}: unknown model {self.model!r}")
        if len(self.kw) != len(self.phases) or len(self.kvar) != len(self.phases):
            raise FeederError(f"load {self.id}: kw/kvar must list one value per phase")
        if not all(math.isfinite(v) for v in (*self.kw, *self.kvar)):
            raise FeederError(f"load {self.id}: non-finite power")

    def per_phase(self) -> np.ndarray:
        """Complex base power per phase A, B, C in kVA (zeros on absent phases)."""
        s = np.zeros(3, dtype=complex)
        for p, kw, kvar in zip(self.phases, self.kw, self.kvar):
            s[PHASES.index(p)] += complex(kw, kvar)
        return s

    @property
    def total_kw(self) -> float:
        return float(sum(self.kw))

    @property
    def total_kvar(self) -> float:
        return float(sum(self.kvar))


@dataclass(frozen=True)
class LoadProfile:
    id: str
    multipliers: tuple[float, ...]

    def __post_init__(self):
        if len(self.multipliers) != HOURS_PER_YEAR:
            raise FeederError(
                f"profile {self.id}: expected {HOURS_PER_YEAR} multipliers, got {len(self.multipliers)}"
            )
        if any(not (m >= 0) or not math.isfinite(m) for m in self.multipliers):
            raise FeederError(f"profile {self.id}: multipliers must be finite and >= 0")


@dataclass(frozen=True)
class Feeder:
    name: str
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    loads: tuple[LoadPoint, ...] = ()
    profiles: tuple[LoadProfile, ...] = ()

    def __post_init__(self):
        _validate(self)

    # ----- lookups -----
    @cached_property
    def bus(self) -> Mapping[str, Bus]:
        return {b.id: b for b in self.buses}

    @cached_property
    def branch(self) -> Mapping[str, Branch]:
        return {b.id: b for b in self.branches}

    @cached_property
    def profile(self) -> Mapping[str, LoadProfile]:
        return {p.id: p for p in self.profiles}

    @property
    def substation_buses(self) -> tuple[str, ...]:
        return tuple(b.id for b in self.buses if b.kind == "substation")

    @cached_property
    def normally_closed(self) -> frozenset[str]:
        return frozenset(b.id for b in self.branches if not b.normally_open)

    @cached_property
    def tie_switches(self) -> frozenset[str]:
        return frozenset(b.id for b in self.branches if b.is_tie)

    @cached_property
    def load_buses(self) -> frozenset[str]:
        """Buses carrying at least one (non-shunt) load point."""
        return frozenset(ld.bus for ld in self.loads if not ld.shunt)

    @cached_property
    def bus_load_kw(self) -> Mapping[str, np.ndarray]:
        """Per-phase base kW of non-shunt loads, per bus."""
        out: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(3))
        for ld in self.loads:
            if not ld.shunt:
                out[ld.bus] = out[ld.bus] + ld.per_phase().real
        return dict(out)

    def total_load(self) -> tuple[float, float]:
        """Sum of base (kW, kVar) over non-shunt load points."""
        kw = sum(ld.total_kw for ld in self.loads if not ld.shunt)
        kvar = sum(ld.total_kvar for ld in self.loads if not ld.shunt)
        return kw, kvar

    def count_branches(self) -> dict[str, int]:
        counts = {"line": 0, "transformer": 0, "sectionalizing": 0, "tie": 0}
        for br in self.branches:
            counts[br.switch_role or br.kind] += 1
        return counts

    def multiplier_matrix(self) -> tuple[tuple[str, ...], np.ndarray]:
        """Profile ids and an (8760, n_profiles) array of hourly multipliers."""
        ids = tuple(p.id for p in self.profiles)
        if not ids:
            return ("__flat__",), np.ones((HOURS_PER_YEAR, 1))
        return ids, np.column_stack([np.asarray(p.multipliers, dtype=float) for p in self.profiles])

    def with_profiles(self, profiles: Iterable[LoadProfile]) -> "Feeder":
        """Copy of the feeder with its profile set replaced.

        A single replacement profile is bound to every load point.
        """
        profiles = tuple(profiles)
        loads = self.loads
        if len(profiles) == 1:
            pid = profiles[0].id
            loads = tuple(replace(ld, profile=pid) for ld in self.loads)
        return Feeder(self.name, self.buses, self.branches, loads, profiles)


# ----------------------------------------------------------------------
# graph helpers


class _DisjointSet:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


SUPER_ROOT = "\x00substations"


def _node(feeder: Feeder, bus_id: str) -> str:
    # all substations collapse into one virtual root: a path between two of
    # them is a loop for radiality purposes
    return SUPER_ROOT if feeder.bus[bus_id].kind == "substation" else bus_id


def reachable_buses(feeder: Feeder, branch_ids: Iterable[str]) -> set[str]:
    """Buses connected to some substation through the given branches."""
    adj: dict[str, list[str]] = defaultdict(list)
    for bid in branch_ids:
        br = feeder.branch[bid]
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    seen = set(feeder.substation_buses)
    queue = deque(seen)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def validate_radiality(feeder: Feeder, closed_set: Iterable[str]) -> bool:
    """True iff the closed branches form a forest with one substation per tree
    and every load bus is energized."""
    closed = list(closed_set)
    unknown = [b for b in closed if b not in feeder.branch]
    if unknown:
        raise KeyError(f"unknown branch id(s): {sorted(unknown)}")
    dsu = _DisjointSet()
    for bid in closed:
        br = feeder.branch[bid]
        if not dsu.union(_node(feeder, br.from_bus), _node(feeder, br.to_bus)):
            return False
    energized = reachable_buses(feeder, closed)
    return feeder.load_buses <= energized


def _validate(feeder: Feeder) -> None:
    seen: set[str] = set()
    for kind, items in (("bus", feeder.buses), ("branch", feeder.branches), ("load", feeder.loads)):
        ids = [x.id for x in items]
        dup = {i for i in ids if ids.count(i) > 1}
        if dup:
            raise FeederError(f"duplicate {kind} id(s): {sorted(dup)}")
        seen.update(ids)
    buses = {b.id: b for b in feeder.buses}
    if not any(b.kind == "substation" for b in feeder.buses):
        raise FeederError("feeder has no substation bus")
    for br in feeder.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in buses:
                raise FeederError(f"branch {br.id}: unknown bus {end!r}")
            missing = set(br.phases) - set(buses[end].phases)
            if missing:
                raise FeederError(f"branch {br.id}: bus {end} lacks phase(s) {''.join(sorted(missing))}")
        if br.kind != "transformer" and not math.isclose(
            buses[br.from_bus].nominal_kv, buses[br.to_bus].nominal_kv
        ):
            raise FeederError(f"branch {br.id}: joins buses of different nominal voltage")
    profile_ids = {p.id for p in feeder.profiles}
    for ld in feeder.loads:
        if ld.bus not in buses:
            raise FeederError(f"load {ld.id}: unknown bus {ld.bus!r}")
        missing = set(ld.phases) - set(buses[ld.bus].phases)
        if missing:
            raise FeederError(f"load {ld.id}: bus {ld.bus} lacks phase(s) {''.join(sorted(missing))}")
        if ld.profile is not None and ld.profile not in profile_ids:
            raise FeederError(f"load {ld.id}: unknown profile {ld.profile!r}")
    if not validate_radiality(feeder, [b.id for b in feeder.branches if not b.normally_open]):
        raise FeederError("normally-closed configuration is not radial or leaves loads unsupplied")


# ----------------------------------------------------------------------
# text format


def _parse_complex(tok: str) -> complex:
    return complex(tok.strip().replace(" ", "").replace("i", "j"))


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.replace(",", " ").split())


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def read_profile_csv(path: str | Path) -> tuple[float, ...]:
    """Hourly multipliers from the last column of a CSV (header optional)."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            raw = raw.split("#", 1)[0].strip()
            if not raw:
                continue
            cell = raw.split(",")[-1].strip()
            try:
                values.append(float(cell))
            except ValueError:
                if values:
                    raise
                continue  # header row
    return tuple(values)


def parse_feeder(text: str, base_dir: str | Path | None = None, source: str | None = None) -> Feeder:
    """Parse a feeder document into a validated :class:`Feeder`."""
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    sections: list[tuple[str, str | None, int, dict[str, tuple[str, int]]]] = []
    name = source or "feeder"
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise FeederError(f"unterminated section header {line!r}", lineno, source)
            head = line[1:-1].split()
            if not head:
                raise FeederError("empty section header", lineno, source)
            kind, arg = head[0].lower(), (head[1] if len(head) > 1 else None)
            if kind not in ("feeder", "bus", "branch", "load", "profile"):
                raise FeederError(f"unknown section [{kind}]", lineno, source)
            if kind == "profile" and arg is None:
                raise FeederError("[profile] needs an id", lineno, source)
            current = {}
            sections.append((kind, arg, lineno, current))
            continue
        if "=" not in line:
            raise FeederError(f"expected 'key = value', got {line!r}", lineno, source)
        if current is None:
            raise FeederError("key/value outside of any section", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in current:
            raise FeederError(f"duplicate key {key!r}", lineno, source)
        current[key.lower()] = (value, lineno)

    buses, branches, loads, profiles = [], [], [], []
    for kind, arg, lineno, rec in sections:
        def get(key, default=None, required=True):
            if key in rec:
                return rec[key][0]
            if default is None and required:
                raise FeederError(f"[{kind}] missing required key {key!r}", lineno, source)
            return default

        try:
            if kind == "feeder":
                name = get("name", name)
            elif kind == "bus":
                buses.append(
                    Bus(
                        id=get("id"),
                        phases=_norm_phases(get("phases", "ABC")),
                        kind=get("kind", "junction").lower(),
                        nominal_kv=float(get("kv", "4.16")),
                    )
                )
            elif kind == "branch":
                bkind = get("kind").lower()
                z = (0j,) * 6
                if "z" in rec:
                    z = tuple(_parse_complex(t) for t in get("z").split(","))
                role = get("switch_role", None, required=False)
                rate = get("failure_rate", None, required=False)
                mttr = get("mttr", None, required=False)
                branches.append(
                    Branch(
                        id=get("id"),
                        from_bus=get("from"),
                        to_bus=get("to"),
                        kind=bkind,
                        phases=_norm_phases(get("phases", "ABC")),
                        z=z,
                        length=float(get("length", "1")),
                        switch_role=role.lower() if role else None,
                        normally_open=_bool(get("normally_open", "false")),
                        failure_rate=float(rate) if rate is not None else None,
                        mttr_hours=float(mttr) if mttr is not None else None,
                    )
                )
            elif kind == "load":
                phases = _norm_phases(get("phases", "ABC"))
                loads.append(
                    LoadPoint(
                        id=get("id"),
                        bus=get("bus"),
                        phases=phases,
                        kw=_floats(get("kw")),
                        kvar=_floats(get("kvar", " ".join("0" for _ in phases))),
                        model=get("model", "constant_power").lower(),
                        profile=get("profile", None, required=False),
                        shunt=_bool(get("shunt", "false")),
                    )
                )
            elif kind == "profile":
                if "file" in rec:
                    values = read_profile_csv(base / get("file"))
                else:
                    values = _floats(get("values"))
                profiles.append(LoadProfile(arg, values))
        except FeederError as exc:
            if exc.line is None:
                raise FeederError(str(exc), lineno, source) from None
            raise
        except (ValueError, OSError) as exc:
            raise FeederError(str(exc), lineno, source) from None

    try:
        return Feeder(name, tuple(buses), tuple(branches), tuple(loads), tuple(profiles))
    except FeederError as exc:
        raise FeederError(str(exc), None, source) from None


def load_feeder(path: str | Path) -> Feeder:
    path = Path(path)
    return parse_feeder(path.read_text(encoding="utf-8"), base_dir=path.parent, source=str(path))


def _fmt_complex(z: complex) -> str:
    return repr(complex(z)).strip("()")


def serialize_feeder(feeder: Feeder) -> str:
    """Render a feeder as a self-contained document (profiles inlined)."""
    out = ["[feeder]", f"name = {feeder.name}", ""]
    for b in feeder.buses:
        out += ["[bus]", f"id = {b.id}", f"phases = {b.phases}", f"kind = {b.kind}", f"kv = {b.nominal_kv!r}", ""]
    for br in feeder.branches:
        out += [
            "[branch]",
            f"id = {br.id}",
            f"from = {br.from_bus}",
            f"to = {br.to_bus}",
            f"kind = {br.kind}",
            f"phases = {br.phases}",
            "z = " + ", ".join(_fmt_complex(z) for z in br.z),
            f"length = {br.length!r}",
        ]
        if br.switch_role:
            out.append(f"switch_role = {br.switch_role}")
        if br.normally_open:
            out.append("normally_open = true")
        if br.failure_rate is not None:
            out.append(f"failure_rate = {br.failure_rate!r}")
        if br.mttr_hours is not None:
            out.append(f"mttr = {br.mttr_hours!r}")
        out.append("")
    for ld in feeder.loads:
        out += [
            "[load]",
            f"id = {ld.id}",
            f"bus = {ld.bus}",
            f"phases = {ld.phases}",
            f"model = {ld.model}",
            "kw = " + ", ".join(repr(v) for v in ld.kw),
            "kvar = " + ", ".join(repr(v) for v in ld.kvar),
        ]
        if ld.profile is not None:
            out.append(f"profile = {ld.profile}")
        if ld.shunt:
            out.append("shunt = true")
        out.append("")
    for p in feeder.profiles:
        out += [f"[profile {p.id}]", "values = " + ", ".join(repr(m) for m in p.multipliers), ""]
    return "\n".join(out)


def base_depths(feeder: Feeder) -> dict[str, int]:
    """Hop count of each bus from its substation in the normal configuration."""
    adj: dict[str, list[str]] = defaultdict(list)
    for bid in feeder.normally_closed:
        br = feeder.branch[bid]
        adj[br.from_bus].append(br.to_bus)
        adj[br.to_bus].append(br.from_bus)
    depth = {s: 0 for s in feeder.substation_buses}
    queue = deque(feeder.substation_buses)
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                queue.append(v)
    return depth
