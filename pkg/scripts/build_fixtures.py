"""Regenerate the committed scenario directories under ``scenarios/``.

Run from the repository root: ``python3 scripts/build_fixtures.py``.
The output is deterministic; the test suite checks that it matches.
"""

from __future__ import annotations

import sys
from pathlib import Path

from leosched._config import write_sections
from leosched.battery import dump_battery_params, params_to_dict
from leosched.mission import save_scenario
from leosched.satsim import write_failure_script, write_gap_script
from leosched.synthetic import default_battery, gomx4_like, twoday_scenario

HOUR = 3600.0


def truth_file(path: Path, params, truth: dict) -> None:
    write_sections(path, {"battery": params_to_dict(params), "truth": truth})


def build(root: Path) -> None:
    model = default_battery()

    # two-day experiment: five upload passes, the last one fails
    d = root / "twoday"
    save_scenario(twoday_scenario(seed=7, horizon=72 * HOUR), d)
    dump_battery_params(model, d / "battery.ini")
    truth_file(d / "truth.ini", model, {"initial_soc": 0.80, "noise_sigma_v": 0.02, "noise_sigma_i": 0.05, "seed": 1})
    truth_file(d / "truth_exact.ini", model, {"initial_soc": 0.75, "noise_sigma_v": 0.0, "noise_sigma_i": 0.0, "seed": 1})
    write_failure_script(d / "fail.csv", {1: False, 2: False, 3: False, 4: False, 5: True})

    # larger day-and-a-half fixture with synthetic passes, a richer truth
    # battery and a telemetry blackout
    d = root / "gomx4"
    save_scenario(gomx4_like(seed=11, horizon=72 * HOUR, isl_every=2), d)
    dump_battery_params(model, d / "battery.ini")
    richer = type(model)(total_capacity=model.total_capacity * 1.1, diffusion_rate=model.diffusion_rate)
    write_gap_script(d / "gaps.csv", [(20 * HOUR, 26 * HOUR)])
    truth_file(
        d / "truth.ini",
        richer,
        {"initial_soc": 0.75, "noise_sigma_v": 0.02, "noise_sigma_i": 0.05, "seed": 5, "gap_script": "gaps.csv"},
    )

    # twelve windows, tight budget: small enough to enumerate
    d = root / "oracle12"
    sc = gomx4_like(seed=3, horizon=6 * HOUR, isl_every=2, initial_soc=0.64)
    save_scenario(sc.with_windows(sc.windows[:12]), d)
    dump_battery_params(model, d / "battery.ini")

    # nothing to schedule
    d = root / "empty"
    sc = gomx4_like(seed=3, horizon=30 * HOUR)
    save_scenario(sc.with_windows(()), d)
    dump_battery_params(model, d / "battery.ini")
    truth_file(d / "truth.ini", model, {"initial_soc": 0.75, "seed": 1})


if __name__ == "__main__":
    build(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("scenarios"))
