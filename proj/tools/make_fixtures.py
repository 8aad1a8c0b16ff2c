"""Regenerate the experimental-format fixture CSVs in tests/fixtures.

Each fixture is a noiseless simulation at a published parameter set, sampled
at a sparse batch schedule, lightly perturbed by a fixed deterministic pattern
and written in the experimental file format (biomass in OD600 units where the
device factor is known).

    python tools/make_fixtures.py build/tools/calib tests/fixtures
"""

import csv
import math
import subprocess
import sys
import tempfile
from pathlib import Path

TIMES = [0, 4, 8, 12, 24, 32, 48, 56, 72, 80, 96, 104, 120, 140]

# label, volume_L, vvm, rpm, od_factor (None: file reports X_gL), S0, parameters
RUNS = [
    ("100rpm_2.5vvm_0.5L", 0.5, 2.5, 100, 0.2578, 50.0,
     [0.0082, 0.5273, 100.0, 1.361, 0.1381, 32.57, 61.53, 62.5]),
    ("600rpm_2.5vvm_0.5L", 0.5, 2.5, 600, 0.2578, 52.0,
     [0.0065, 0.3352, 10.5, 0.945, 0.0941, 37.57, 61.0, 50.56]),
    ("300rpm_1vvm_0.5L", 0.5, 1.0, 300, 0.2578, 55.0,
     [0.0034, 0.2889, 100.0, 2.607, 0.0533, 49.25, 50.0, 30.0]),
    ("600rpm_1vvm_0.5L", 0.5, 1.0, 600, 0.2578, 50.0,
     [0.0072, 0.3285, 10.0, 0.915, 0.1047, 23.94, 60.53, 36.86]),
    ("114rpm_1vvm_42L", 30.0, 1.0, 114, 0.2040, 58.0,
     [0.0061, 0.1738, 35.22, 2.581, 0.1812, 29.68, 50.99, 30.39]),
    ("229rpm_1vvm_42L", 30.0, 1.0, 229, None, 54.0,
     [0.0057, 0.3685, 19.81, 1.093, 0.0874, 28.58, 61.89, 52.79]),
]

OD0 = 0.5


def wiggle(i, k):
    return 1.0 + 0.01 * math.sin(1.7 * i + 2.3 * k)


def simulate(calib, params, x0, s0, work):
    cfg = work / "sim.cfg"
    cfg.write_text(
        "out_dir = out\n"
        f"simulate.params = {', '.join(repr(p) for p in params)}\n"
        f"simulate.x0 = {x0!r}\n"
        f"simulate.s0 = {s0!r}\n"
        "simulate.dt = 4\n")
    subprocess.run([str(calib), "simulate", "--config", str(cfg)], check=True, capture_output=True)
    with open(work / "out" / "simulation" / "trajectory.csv") as f:
        rows = {float(r["time_h"]): r for r in csv.DictReader(f)}
    return [(t, float(rows[t]["X_gL"]), float(rows[t]["S_gL"]), float(rows[t]["P_gL"])) for t in TIMES]


def main():
    calib, out = Path(sys.argv[1]).resolve(), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    for label, vol, vvm, rpm, factor, s0, params in RUNS:
        x0 = OD0 * (factor if factor else 0.2578)
        with tempfile.TemporaryDirectory() as tmp:
            rows = simulate(calib, params, x0, s0, Path(tmp))
        lines = [f"# label = {label}", f"# volume_L = {vol}", f"# aeration_vvm = {vvm}",
                 f"# agitation_rpm = {rpm}"]
        if factor:
            lines.append(f"# od_factor = {factor}")
            lines.append("time_h,od600,S_gL,P_gL")
        else:
            lines.append("time_h,X_gL,S_gL,P_gL")
        for i, (t, x, s, p) in enumerate(rows):
            if i == 0:
                b = OD0 if factor else x
            else:
                b = (x / factor if factor else x) * wiggle(i, 0)
                s, p = s * wiggle(i, 1), p * wiggle(i, 2)
            lines.append(f"{t:g},{b:.4f},{s:.3f},{p:.4f}")
        (out / f"{label}.csv").write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
