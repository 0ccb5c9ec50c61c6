"""Synthetic GOMX-4-like scenarios.

Stands in for orbital propagation: windows are laid out by orbit phase on
top of the sunlight and pass pattern from :func:`synthesize_passes`. The
numbers (draws, rewards, infeed) are placeholders chosen so that the battery
floor binds, not measured values.
"""

from __future__ import annotations

from datetime import datetime, timezone

import numpy as np

from leosched.battery import BatteryParams
from leosched.mission import (
    GroundPass,
    PayloadDef,
    Scenario,
    TaskWindow,
    partition_window,
    synthesize_passes,
)

ORBIT_PERIOD = 5700.0
ISL_CHUNK = 420.0
TWODAY_EPOCH = datetime(2021, 5, 10, 0, 0, tzinfo=timezone.utc)

PAYLOADS = {
    "camera": PayloadDef("camera", 0.6, 5.0),
    "adsb": PayloadDef("adsb", 0.15, 1.0),
    "hsl": PayloadDef("hsl", 1.6, 10.0, "sband"),
    "isl": PayloadDef("isl", 1.4, 3.0, "sband"),
}


def default_battery() -> BatteryParams:
    """10 Ah pack with the GOMX-4 voltage anchors."""
    return BatteryParams(total_capacity=36000.0, diffusion_rate=2e-3)


# (end of pass = plan handover, max elevation) for the five uploads of the
# two-day experiment, seconds after 2021-05-10 00:00 UTC
TWODAY_HANDOVERS = (
    (57 * 60.0, 85.85),
    (13 * 3600 + 50 * 60.0, 36.22),
    (15 * 3600 + 23 * 60.0, 28.42),
    (86400 + 34 * 60.0, 53.59),
    (86400 + 15 * 3600 + 1 * 60.0, 44.67),
)
# low passes in the same clusters that do not qualify for upload
TWODAY_LOW_PASSES = (
    (57 * 60.0 + ORBIT_PERIOD, 12.4),
    (13 * 3600 + 50 * 60.0 - ORBIT_PERIOD, 9.8),
    (15 * 3600 + 23 * 60.0 + ORBIT_PERIOD, 17.1),
    (86400 + 34 * 60.0 + ORBIT_PERIOD, 21.3),
    (86400 + 15 * 3600 + 1 * 60.0 - ORBIT_PERIOD, 6.5),
)


def twoday_passes(station: str = "aalborg") -> list[GroundPass]:
    out = []
    for end, el in TWODAY_HANDOVERS + TWODAY_LOW_PASSES:
        duration = 600.0 if el > 25 else 360.0
        out.append(GroundPass(station, end - duration, end, el))
    return sorted(out, key=lambda p: p.start)


def gomx4_like(
    seed: int = 7,
    horizon: float = 72 * 3600.0,
    *,
    passes: list[GroundPass] | None = None,
    epoch: datetime = TWODAY_EPOCH,
    isl_every: int = 1,
    infeed: float = 1.5,
    background: float = 0.7,
    pass_draw: float = 0.25,
    soc_floor: float = 0.6,
    initial_soc: float = 0.75,
) -> Scenario:
    """Camera, ADS-B, HSL and ISL windows over ``horizon`` seconds.

    ISL is possible over both poles on every orbit (every ``isl_every``-th
    pole with larger values), in 21-24 minute episodes cut into 7-minute
    chunks. HSL and ISL share the S-band radio and exclude each other.
    """
    rng = np.random.default_rng(seed)
    synth_passes, sunlight = synthesize_passes(ORBIT_PERIOD, 0.12, horizon, seed, infeed=infeed)
    if passes is None:
        passes = synth_passes
    # orbit k starts when sunlight begins; north pole at 0.15, south at 0.65
    phase0 = sunlight[1].start - ORBIT_PERIOD if len(sunlight) > 1 else 0.0
    windows: list[TaskWindow] = []
    n_orbits = int(horizon // ORBIT_PERIOD) + 2
    pole = 0
    for k in range(-1, n_orbits):
        o = phase0 + k * ORBIT_PERIOD
        for name, frac in (("n", 0.15), ("s", 0.65)):
            dur = float(rng.uniform(21 * 60.0, 24 * 60.0))
            take = pole % isl_every == 0
            pole += 1
            if not take:
                continue
            centre = o + frac * ORBIT_PERIOD
            episode = TaskWindow(f"isl-{k:03d}{name}", "isl", round(centre - dur / 2, 1), round(centre + dur / 2, 1))
            windows.extend(partition_window(episode, ISL_CHUNK))
        if rng.random() < 0.4:
            centre = o + 0.15 * ORBIT_PERIOD + float(rng.uniform(-300.0, 300.0))
            dur = float(rng.uniform(360.0, 600.0))
            windows.append(TaskWindow(f"hsl-svb-{k:03d}", "hsl", round(centre - dur / 2, 1), round(centre + dur / 2, 1)))
        if rng.random() < 0.13:
            centre = o + 0.55 * ORBIT_PERIOD + float(rng.uniform(-300.0, 300.0))
            dur = float(rng.uniform(360.0, 540.0))
            windows.append(TaskWindow(f"hsl-cba-{k:03d}", "hsl", round(centre - dur / 2, 1), round(centre + dur / 2, 1)))
        if rng.random() < 0.25:
            centre = o + 0.12 * ORBIT_PERIOD + float(rng.uniform(-200.0, 200.0))
            dur = float(rng.uniform(180.0, 360.0))
            windows.append(TaskWindow(f"cam-{k:03d}", "camera", round(centre - dur / 2, 1), round(centre + dur / 2, 1)))
        if rng.random() < 0.35:
            centre = o + 0.4 * ORBIT_PERIOD + float(rng.uniform(-300.0, 300.0))
            dur = float(rng.uniform(600.0, 1200.0))
            windows.append(TaskWindow(f"adsb-{k:03d}", "adsb", round(centre - dur / 2, 1), round(centre + dur / 2, 1)))
    windows = [w for w in windows if w.start >= 0.0 and w.end <= horizon]
    return Scenario(
        epoch=epoch,
        payloads=PAYLOADS,
        windows=tuple(windows),
        sunlight=tuple(sunlight),
        passes=tuple(passes),
        background_load=background,
        soc_floor=soc_floor,
        pass_draw=pass_draw,
        initial_soc=initial_soc,
    )


def twoday_scenario(seed: int = 7, horizon: float = 72 * 3600.0, isl_every: int = 2) -> Scenario:
    """The two-day experiment: five upload passes at the logged times."""
    return gomx4_like(seed, horizon, passes=twoday_passes(), isl_every=isl_every)
