from __future__ import annotations

import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_profile, line, load, toy_feeder
from mersize.feeder import Branch, Bus, Feeder, LoadPoint, LoadProfile
from mersize.powerflow import (
    NonRadialError,
    PowerFlowCase,
    RadialNetwork,
    base_year,
    base_year_run,
    dump_voltages,
    solve,
)

Z_OHM = 0.3 + 0.6j
Z_BASE = 2.4**2  # (kV line-to-neutral)^2 / 1 MVA per phase
A = cmath.exp(-2j * math.pi / 3)


def two_bus(kw=100.0, kvar=0.0, model="constant_power"):
    return toy_feeder([line("L1", "S", "B", z=Z_OHM)], [load("D", "B", kw, kvar, model)])


def closed_form_constant_power(p, q, z=Z_OHM / Z_BASE, e=1.0):
    """Receiving-end voltage of a source-line-load circuit.

    With x = |V|^2 the sending-end equation reduces to
    x^2 + (2(RP + XQ) - E^2) x + (R^2 + X^2)(P^2 + Q^2) = 0; the
    high-voltage root is the operating point and V = (x + conj(Z) S) / E.
    """
    r, x_ = z.real, z.imag
    b = 2 * (r * p + x_ * q) - e**2
    c = (r**2 + x_**2) * (p**2 + q**2)
    x = (-b + math.sqrt(b * b - 4 * c)) / 2
    return (x + z.conjugate() * complex(p, q)) / e


def test_two_bus_constant_power_closed_form():
    sol = solve(PowerFlowCase(two_bus(), two_bus().normally_closed))
    v = closed_form_constant_power(0.1, 0.0)
    assert sol.converged
    assert abs(sol.voltages["B"][0] - v) < 1e-8
    # sending-end power: load plus I^2 R
    p_sub = 100.0 + (Z_OHM.real / Z_BASE) * (0.1**2 / abs(v) ** 2) * 1000.0
    assert sol.substation_kw == pytest.approx(p_sub, rel=1e-9)
    # current in amps: |I| = |S| / |V| in per unit times the base current
    assert abs(sol.branch_currents["L1"][0]) == pytest.approx(0.1 / abs(v) * 1000.0 / 2.4, rel=1e-8)


def test_two_bus_with_reactive_load():
    f = two_bus(80.0, 60.0)
    sol = solve(PowerFlowCase(f, f.normally_closed))
    assert abs(sol.voltages["B"][0] - closed_form_constant_power(0.08, 0.06)) < 1e-8


def test_two_bus_constant_impedance_closed_form():
    f = two_bus(100.0, 30.0, "constant_impedance")
    sol = solve(PowerFlowCase(f, f.normally_closed))
    s = complex(0.1, 0.03)
    # I = conj(S) V  =>  V = E / (1 + Z conj(S))
    assert abs(sol.voltages["B"][0] - 1.0 / (1 + (Z_OHM / Z_BASE) * s.conjugate())) < 1e-8


def test_two_bus_constant_current_closed_form():
    f = two_bus(100.0, 0.0, "constant_current")
    sol = solve(PowerFlowCase(f, f.normally_closed))
    z, p = Z_OHM / Z_BASE, 0.1
    # unity power factor: V = r e^{j t} with |r + Z P| = 1
    r = math.sqrt(1 - (z.imag * p) ** 2) - z.real * p
    v = r / (r + z * p)
    assert abs(sol.voltages["B"][0] - v) < 1e-8
    assert abs(abs(sol.branch_currents["L1"][0]) - p * 1000.0 / 2.4) < 1e-6


def test_balanced_three_phase_matches_single_phase():
    kv = 2.4 * math.sqrt(3)
    z = (Z_OHM, 0j, 0j, Z_OHM, 0j, Z_OHM)
    f = Feeder(
        "bal",
        (Bus("S", "ABC", "substation", kv), Bus("B", "ABC", "load", kv)),
        (Branch("L1", "S", "B", "line", "ABC", z),),
        (LoadPoint("D", "B", "ABC", (100.0,) * 3, (0.0,) * 3),),
        (),
    )
    sol = solve(PowerFlowCase(f, f.normally_closed))
    v = closed_form_constant_power(0.1, 0.0)
    assert np.allclose(sol.voltages["B"], [v, v * A, v * A**2], atol=1e-8)


def test_zero_load_gives_flat_profile():
    f = two_bus(0.0)
    sol = solve(PowerFlowCase(f, f.normally_closed))
    assert sol.substation_kw == 0.0
    assert sol.voltages["B"][0] == pytest.approx(1.0)
    assert np.isnan(sol.voltages["B"][1:]).all()


def test_non_radial_configuration_rejected():
    f = toy_feeder(
        [line("L1", "S", "B", z=Z_OHM), line("T", "B", "S", kind="switch", role="tie")],
        [load("D", "B", 10.0)],
    )
    with pytest.raises(NonRadialError):
        RadialNetwork(f, {"L1", "T"})


def test_isolated_buses_are_left_out():
    f = toy_feeder([line("L1", "S", "B", z=Z_OHM), line("L2", "B", "C", z=Z_OHM)], [load("D", "C", 50.0)])
    sol = solve(PowerFlowCase(f, {"L1"}))
    assert set(sol.voltages) == {"S", "B"}
    assert sol.substation_kw == 0.0


def test_voltage_violations_are_reported():
    f = two_bus(2000.0)
    sol = solve(PowerFlowCase(f, f.normally_closed))
    assert sol.converged
    assert [(b, p) for b, p, _ in sol.voltage_violations] == [("B", "A")]


def test_ieee13_at_peak(ieee13):
    peak = int(np.argmax(ieee13.profile["default"].multipliers))
    sol = solve(PowerFlowCase(ieee13, ieee13.normally_closed, peak))
    assert sol.converged and sol.iterations <= 100
    assert 3466.0 < sol.substation_kw < 1.1 * 3466.0
    assert sol.balance_error < 1e-6


@pytest.mark.parametrize("name", ["ieee13", "ieee123"])
def test_base_year_converges_and_balances(name, request):
    feeder = request.getfixturevalue(name)
    by = base_year(feeder)
    assert by.converged.all()
    assert by.balance_error.max() < 1e-6
    assert (by.substation_kw > 0).all()


def test_base_year_peak_follows_profile(ieee13):
    by = base_year(ieee13)
    assert int(np.argmax(by.substation_kw)) == int(np.argmax(ieee13.profile["default"].multipliers))


def test_base_year_run_tiles_years(ieee13):
    one = base_year_run(ieee13, 1)
    three = base_year_run(ieee13, 3)
    assert three.shape == (3 * 8760,)
    assert np.array_equal(three[8760:17520], one)
    with pytest.raises(ValueError):
        base_year_run(ieee13, 0)


def test_zero_profile_year_is_zero():
    f = two_bus().with_profiles([flat_profile(0.0, "zero")])
    assert not base_year(f).substation_kw.any()


def test_constant_profile_year_is_constant():
    f = two_bus().with_profiles([flat_profile(0.7, "c")])
    by = base_year(f).substation_kw
    single = solve(PowerFlowCase(f, f.normally_closed, 123)).substation_kw
    assert np.allclose(by, single, rtol=0, atol=1e-9)


def test_lossless_base_is_load_sum(ieee13):
    by = base_year(ieee13, lossless=True)
    m = np.asarray(ieee13.profile["default"].multipliers)
    assert np.allclose(by.substation_kw, 3466.0 * m)


def test_batch_matches_single_hour(ieee123):
    net = RadialNetwork(ieee123, ieee123.normally_closed)
    hours = [5, 100, 4771, 8000]
    batch = net.solve_hours(hours).substation_kw
    for h, kw in zip(hours, batch):
        assert net.solve_hours([h]).substation_kw[0] == pytest.approx(kw, rel=1e-12)


def test_zero_load_leaf_does_not_change_injection(ieee13):
    feeder = Feeder(
        ieee13.name,
        ieee13.buses + (Bus("X", "ABC", "junction", 4.16),),
        ieee13.branches + (Branch("LX", "680", "X", "line", "ABC", ieee13.branch["L671-680"].z, 0.2),),
        ieee13.loads,
        ieee13.profiles,
    )
    with_leaf = solve(PowerFlowCase(feeder, feeder.normally_closed, 4000)).substation_kw
    without = solve(PowerFlowCase(feeder, feeder.normally_closed - {"LX"}, 4000)).substation_kw
    assert abs(with_leaf - without) < 1e-9


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(0.0, 200.0), min_size=4, max_size=4),
    st.integers(0, 3),
    st.floats(0.1, 100.0),
)
def test_injection_monotone_in_one_load(kws, which, bump):
    branches = [line("L1", "S", "a", z=Z_OHM), line("L2", "a", "b", z=Z_OHM), line("L3", "a", "c", z=Z_OHM), line("L4", "c", "d", z=Z_OHM)]
    buses = "abcd"

    def injection(values):
        f = toy_feeder(branches, [load(f"D{b}", b, kw, 0.3 * kw) for b, kw in zip(buses, values)])
        return solve(PowerFlowCase(f, f.normally_closed)).substation_kw

    more = list(kws)
    more[which] += bump
    assert injection(more) >= injection(kws)


def test_voltage_dump_rows(ieee13):
    net = RadialNetwork(ieee13, ieee13.normally_closed)
    res = net.solve_hours([0, 1])
    rows = dump_voltages(res, net, [0, 1])
    n_phases = sum(len(b.phases) for b in ieee13.buses)
    assert len(rows) == 2 * n_phases
    hour, bus, phase, mag, ang = rows[0]
    assert (hour, bus, phase, mag, ang) == (0, "650", "A", 1.0, 0.0)


def test_profile_validation():
    with pytest.raises(ValueError):
        LoadProfile("short", (1.0,) * 10)
    with pytest.raises(ValueError):
        LoadProfile("neg", (-1.0,) + (1.0,) * 8759)
