"""Regenerate the synthetic load profile and road overlays shipped in
``src/mersize/data``.

The published feeder data carries neither an hourly load shape nor a road
network, so both are synthesized here from fixed formulas and a fixed seed.

    python scripts/make_synthetic_data.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "mersize" / "data"
MPH = 20.0  # average truck speed along feeder right-of-way


def make_profile(seed: int = 20200101) -> np.ndarray:
    hours = np.arange(8760)
    day = hours // 24
    hod = hours % 24
    daily = (
        0.42
        + 0.22 * np.exp(-(((hod - 8.0) / 2.2) ** 2))
        + 0.45 * np.exp(-(((hod - 19.0) / 2.8) ** 2))
        + 0.10 * np.exp(-(((hod - 13.0) / 4.0) ** 2))
    )
    seasonal = 1.0 + 0.18 * np.cos(2 * np.pi * (day - 200) / 365.0) + 0.08 * np.cos(4 * np.pi * (day - 15) / 365.0)
    weekly = np.where(day % 7 >= 5, 0.93, 1.0)
    noise = 1.0 + 0.03 * np.random.default_rng(seed).standard_normal(8760)
    shape = daily * seasonal * weekly * noise
    return np.round(shape / shape.max(), 6)


def write_profile(values: np.ndarray) -> None:
    lines = ["hour,multiplier"] + [f"{h},{v:.6f}" for h, v in enumerate(values)]
    (DATA / "synthetic_profile.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_roads(feeder_name: str, depots: dict[str, tuple[str, float]], n_shortcuts: int, seed: int) -> None:
    from mersize.feeder import base_depths, load_feeder

    feeder = load_feeder(DATA / f"{feeder_name}.feeder")
    edges: dict[tuple[str, str], float] = {}

    def add(a: str, b: str, minutes: float) -> None:
        key = tuple(sorted((a, b)))
        edges[key] = min(edges.get(key, np.inf), round(minutes, 3))

    for br in feeder.branches:
        miles = br.length if br.kind == "line" else 0.0
        add(f"R{br.from_bus}", f"R{br.to_bus}", 1.0 + 60.0 * miles / MPH)
    # cross streets between buses at similar depth
    depth = base_depths(feeder)
    rng = np.random.default_rng(seed)
    buses = sorted(b.id for b in feeder.buses)
    while n_shortcuts > 0:
        a, b = rng.choice(buses, size=2, replace=False)
        if a in depth and b in depth and abs(depth[a] - depth[b]) <= 2:
            add(f"R{a}", f"R{b}", 3.0 + float(rng.uniform(0.0, 6.0)))
            n_shortcuts -= 1
    for depot, (bus, minutes) in depots.items():
        add(depot, f"R{bus}", minutes)

    lines = [
        f"# Synthetic road overlay for {feeder_name}: one road node per feeder bus,",
        f"# streets along every branch at {MPH:g} mph plus 1 min, random cross streets",
        f"# (seed {seed}), and depot access roads.",
        "[edges]",
        "node_a,node_b,minutes",
    ]
    lines += [f"{a},{b},{m:g}" for (a, b), m in sorted(edges.items())]
    lines += ["[tags]", "node,tag,value"]
    lines += [f"{d},depot," for d in depots]
    lines += [f"R{b.id},bus,{b.id}" for b in feeder.buses]
    (DATA / f"{feeder_name}_roads.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    write_profile(make_profile())
    write_roads("ieee13", {"DEPOT": ("650", 12.0)}, n_shortcuts=3, seed=13)
    write_roads("ieee123", {"DEPOT-N": ("150", 12.0), "DEPOT-S": ("76", 15.0)}, n_shortcuts=20, seed=123)


if __name__ == "__main__":
    main()
