"""Acceptance criteria 1-8, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict that is printed in the
"acceptance criteria" section of the pytest terminal summary.
"""

from __future__ import annotations

import math
import time
from functools import lru_cache

import numpy as np
import pytest

import hand_oracle
from conftest import record_criterion
from mersize.contingency import (
    SimulationHorizon,
    component_reliabilities,
    component_rng,
    read_reliability_table,
    sample_component_history,
)
from mersize.feeder import load_feeder
from mersize.pipeline import RunConfig, data_path, evaluate_events, report_json, run
from mersize.powerflow import PowerFlowCase, base_year, solve
from mersize.reconfig import build_restoration_plan, operable_graph, restored_kw, spanning_tree_count
from mersize.routing import shortest_route
from mersize.sizing import aggregate
from reconfig_oracle import best_restored_kw, brute_tree_count, laplacian_det, random_feeder
from test_powerflow import closed_form_constant_power, two_bus
from test_routing import floyd_warshall, random_network

SEEDS = (1, 2, 3, 4, 5)
RUNTIME_BUDGET_S = 600.0


def check(number, passed, detail):
    record_criterion(number, bool(passed), detail)
    assert passed, detail


@lru_cache(maxsize=None)
def timed_run(feeder, years, seed, reconfigure=True, workers=1):
    started = time.perf_counter()
    result = run(RunConfig(feeder=feeder, years=years, seed=seed, reconfigure=reconfigure, workers=workers))
    return result, time.perf_counter() - started


def test_criterion_1_statistical_envelopes():
    rows, ok = [], True
    for seed in SEEDS:
        r13, t13 = timed_run("ieee13", 200, seed)
        r123, t123 = timed_run("ieee123", 200, seed)
        a, b = r13.report, r123.report
        seed_ok = (
            abs(a.t_avg - 10.8) <= 3.0
            and abs(b.t_avg - 5.84) <= 2.0
            and a.e_avg >= 2.0 * b.e_avg
            and 0.20 <= b.restorable_fraction <= 0.45
            and max(t13, t123) < RUNTIME_BUDGET_S
        )
        ok &= seed_ok
        rows.append(
            f"seed {seed}: t13 {a.t_avg:.2f} h, t123 {b.t_avg:.2f} h, E ratio {a.e_avg / b.e_avg:.1f}, "
            f"restorable {100 * b.restorable_fraction:.1f}%, runtime {t13:.0f}/{t123:.0f} s"
        )
    check(1, ok, "; ".join(rows))


def test_report_invariants_on_bundled_runs():
    for seed in SEEDS:
        for name in ("ieee13", "ieee123"):
            result = timed_run(name, 200, seed)[0]
            r = result.report
            assert 0 <= r.p_avg <= r.p_max
            assert r.t_avg == pytest.approx(r.t_cont / r.n_cont)
            # E_avg <= P_max * t_avg compares a mean of products with a product
            # of means and fails when long outages also isolate more load; the
            # averaged per-event bound is what actually holds
            mer = [o for o in result.outcomes if o.needs_mer]
            assert r.e_avg <= math.fsum(o.p_max * o.event.duration for o in mer) / r.n_cont + 1e-9
            assert r.skipped_hours == 0


def test_criterion_2_power_flow_oracle():
    f = two_bus()
    sol = solve(PowerFlowCase(f, f.normally_closed))
    err = abs(sol.voltages["B"][0] - closed_form_constant_power(0.1, 0.0))
    worst = {}
    converged = True
    for name in ("ieee13", "ieee123"):
        by = base_year(load_feeder(data_path(f"{name}.feeder")))
        worst[name] = float(by.balance_error.max())
        converged &= bool(by.converged.all())
    ok = err < 1e-8 and converged and max(worst.values()) < 1e-6
    check(
        2,
        ok,
        f"two-bus |dV| {err:.2e} pu; max balance mismatch ieee13 {worst['ieee13']:.1e}, "
        f"ieee123 {worst['ieee123']:.1e}; all 8760 hours converged: {converged}",
    )


def test_criterion_3_reconfiguration_oracle():
    n_graphs, bad_kw, bad_count, max_loops = 120, 0, 0, 0
    for seed in range(n_graphs):
        f, failed = random_feeder(seed)
        g = operable_graph(f, failed)
        usable = g.usable_branches
        nodes = [b.id for b in f.buses]
        edges = [(f.branch[b].from_bus, f.branch[b].to_bus) for b in usable]
        # independent loops = edges - nodes + connected components
        parent = {n: n for n in nodes}

        def find(x):
            while parent[x] != x:
                x = parent[x]
            return x

        for u, v in edges:
            parent[find(u)] = find(v)
        components = len({find(n) for n in nodes})
        max_loops = max(max_loops, len(edges) - len(nodes) + components)

        plan = build_restoration_plan(g)
        if not math.isclose(restored_kw(f, plan.closed_set), best_restored_kw(f, usable), abs_tol=1e-9):
            bad_kw += 1
        count = spanning_tree_count(g)
        expected = brute_tree_count(nodes, edges) if components == 1 else None
        if count != laplacian_det_product(nodes, edges) or (expected is not None and count != expected):
            bad_count += 1
    ok = bad_kw == 0 and bad_count == 0 and max_loops <= 8
    check(3, ok, f"{n_graphs} graphs (max {max_loops} loops): restored-kW mismatches {bad_kw}, tree-count mismatches {bad_count}")


def laplacian_det_product(nodes, edges):
    """Matrix-tree determinant taken per connected component."""
    parent = {n: n for n in nodes}

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    for u, v in edges:
        parent[find(u)] = find(v)
    total = 1
    for root in {find(n) for n in nodes}:
        comp = [n for n in nodes if find(n) == root]
        comp_edges = [(u, v) for u, v in edges if find(u) == root]
        total *= laplacian_det(comp, comp_edges) if len(comp) > 1 else 1
    return total


def test_criterion_4_routing_oracle():
    n_nets, pairs, bad = 100, 0, 0
    for seed in range(n_nets):
        net, nodes = random_network(1000 + seed)
        idx, d = floyd_warshall(net)
        for a in nodes:
            for b in nodes:
                r = shortest_route(net, a, b)
                expected = d[idx[a], idx[b]]
                pairs += 1
                if math.isinf(expected):
                    bad += r.reachable
                elif not math.isclose(r.travel_minutes, expected, rel_tol=1e-12, abs_tol=1e-12):
                    bad += 1
    check(4, bad == 0, f"{n_nets} networks of 50 nodes, {pairs} pairs, mismatches {bad}")


def test_criterion_5_sampling_statistics():
    years = 10_000
    feeder = load_feeder(data_path("ieee13.feeder"))
    rels = component_reliabilities(feeder, read_reliability_table(data_path("table1_reliability.csv")))
    worst_rate, worst_repair, failures = 0.0, 0.0, []
    for idx, rel in enumerate(rels):
        hist = sample_component_history(rel, SimulationHorizon(years), component_rng(2024, 0, idx))
        n = len(hist)
        up_years = (years * 8760 - sum(d for _, d in hist)) / 8760
        rate = n / up_years
        z_rate = abs(rate - rel.failure_rate) / (rel.failure_rate / math.sqrt(n))
        repairs = np.array([d for _, d in hist[:-1]])
        z_rep = abs(repairs.mean() - rel.mttr) / (repairs.std(ddof=1) / math.sqrt(len(repairs)))
        worst_rate, worst_repair = max(worst_rate, z_rate), max(worst_repair, z_rep)
        if z_rate > 3 or z_rep > 3:
            failures.append(rel.component_id)
    check(
        5,
        not failures,
        f"{len(rels)} components over {years} years; worst |z| failure rate {worst_rate:.2f}, "
        f"repair time {worst_repair:.2f}; outside 3 SE: {failures or 'none'}",
    )


def test_criterion_6_end_to_end_hand_oracle():
    ev = evaluate_events(hand_oracle.feeder(), hand_oracle.roads(), hand_oracle.events(), installation_minutes=15.0)
    r = aggregate(ev.outcomes)
    worst = 0.0
    for key, expected in hand_oracle.EXPECTED_REPORT.items():
        got = getattr(r, key)
        worst = max(worst, abs(got - expected) / abs(expected))
    statuses = [o.status.value for o in ev.outcomes]
    ok = worst <= 1e-6 and statuses == hand_oracle.EXPECTED_STATUS
    check(6, ok, f"5-bus scripted scenario, worst relative error {worst:.1e} over {len(hand_oracle.EXPECTED_REPORT)} report fields")


def test_criterion_7_reconfiguration_reduces_energy():
    years, rows, ok = 100, [], True
    for seed in range(10):
        on = timed_run("ieee123", years, seed)[0].report.e_avg
        off = timed_run("ieee123", years, seed, reconfigure=False)[0].report.e_avg
        ok &= off >= on
        rows.append(f"{seed}:{off:.0f}>={on:.0f}")
    check(7, ok, f"ieee123, {years} years, E_avg off vs on per seed: " + " ".join(rows))


def test_criterion_8_determinism(tmp_path):
    texts = {}
    for name, years in (("ieee13", 200), ("ieee123", 30)):
        for workers in (1, 2, 1):
            cfg = RunConfig(feeder=name, years=years, seed=11, workers=workers)
            texts.setdefault(name, []).append(report_json(run(cfg)).encode())
    ok = all(len(set(v)) == 1 for v in texts.values())
    # the same bytes also land on disk
    out = tmp_path / "o"
    run(RunConfig(feeder="ieee13", years=200, seed=11, workers=2, out=str(out)))
    ok &= (out / "report.json").read_bytes() == texts["ieee13"][0]
    check(8, ok, "report.json byte-identical across repeated runs and worker counts 1/2 for ieee13 (200 y) and ieee123 (30 y)")
