#!/usr/bin/env python3
"""Generates traces_13node.csv.

PV availability and loads are drawn on a 6-second grid and linearly
interpolated to 1 second (matching the field-data pipeline the scenarios
emulate); the head-power setpoint is authored directly on the 1-second grid so
its step changes stay sharp.
"""

import math
import random

DURATION = 720
H = 1


def interp6(values6):
    out = []
    for t in range(DURATION + 1):
        i, frac = divmod(t, 6)
        a = values6[min(i, len(values6) - 1)]
        b = values6[min(i + 1, len(values6) - 1)]
        out.append(a + (b - a) * frac / 6.0)
    return out


def main():
    rng = random.Random(2016)
    n6 = DURATION // 6 + 2

    pv6, load_res6, load_com6 = [], [], []
    for i in range(n6):
        t = 6.0 * i
        pv = 0.82 + 0.13 * math.sin(2 * math.pi * t / 900.0 + 0.4)

        def dip(t0, t1, depth, edge=45.0):
            # Cloud fronts ramp in and out over ~half a minute.
            if t < t0 - edge or t > t1 + edge:
                return 1.0
            if t < t0:
                w = (t - (t0 - edge)) / edge
            elif t > t1:
                w = ((t1 + edge) - t) / edge
            else:
                w = 1.0
            return 1.0 - w * (1.0 - depth)

        pv *= dip(190.0, 250.0, 0.62) * dip(440.0, 465.0, 0.72)
        pv += rng.gauss(0.0, 0.01)
        pv6.append(max(0.0, min(1.0, pv)))

        load_res6.append(0.92 + 0.08 * math.sin(2 * math.pi * t / 420.0 + 1.1)
                         + rng.gauss(0.0, 0.012))
        load_com6.append(1.0 + 0.05 * math.sin(2 * math.pi * t / 520.0)
                         + rng.gauss(0.0, 0.008))

    pv = interp6(pv6)
    load_res = interp6(load_res6)
    load_com = interp6(load_com6)

    # Head setpoint shape shared by the three phases: sinusoid plus two steps.
    common = []
    for t in range(DURATION + 1):
        v = 0.12 * math.sin(2 * math.pi * t / 240.0)
        if t >= 200:
            v -= 0.12
        if t >= 400:
            v += 0.18
        common.append(v)

    with open("traces_13node.csv", "w") as f:
        cols = ["t", "pv", "load_res", "load_com", "p0_common"]
        f.write(",".join(cols) + "\n")
        for t in range(DURATION + 1):
            f.write(f"{t},{pv[t]:.6f},{load_res[t]:.6f},{load_com[t]:.6f},{common[t]:.6f}\n")


if __name__ == "__main__":
    main()
