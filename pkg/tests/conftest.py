from __future__ import annotations

import math

import pytest

from mersize.feeder import Branch, Bus, Feeder, LoadPoint, LoadProfile, load_feeder
from mersize.pipeline import data_path


def bus(id, kind="load", phases="A", kv=2.4 * math.sqrt(3)):
    return Bus(id, phases, kind, kv)


def line(id, a, b, z=0j, kind="line", role=None, phases="A", length=1.0):
    zz = [0j] * 6
    for p in phases:
        zz[{"A": 0, "B": 3, "C": 5}[p]] = z
    return Branch(id, a, b, kind, phases, tuple(zz), length, role, role == "tie")


def load(id, bus_id, kw, kvar=0.0, model="constant_power", profile=None, phase="A"):
    return LoadPoint(id, bus_id, phase, (kw,), (kvar,), model, profile)


def toy_feeder(branches, loads, substations=("S",), profiles=(), name="toy", bus_ids=()):
    """Single-phase feeder; buses not listed in ``bus_ids`` are inferred
    from the branches."""
    ids = list(bus_ids)
    for br in branches:
        for b in (br.from_bus, br.to_bus):
            if b not in ids:
                ids.append(b)
    buses = [bus(b, "substation" if b in substations else "load") for b in ids]
    return Feeder(name, tuple(buses), tuple(branches), tuple(loads), tuple(profiles))


def flat_profile(value=1.0, id="flat"):
    return LoadProfile(id, (value,) * 8760)


@pytest.fixture(scope="session")
def ieee13():
    return load_feeder(data_path("ieee13.feeder"))


@pytest.fixture(scope="session")
def ieee123():
    return load_feeder(data_path("ieee123.feeder"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
