"""Acceptance checks, one test per requirement.

Each test prints a single ``PASS``/``FAIL`` line (visible even under output
capture) before asserting, so ``pytest tests/test_acceptance.py -v`` gives a
readable summary.
"""

from __future__ import annotations

import contextlib
import io
import time
from pathlib import Path

import numpy as np
import pytest

from instances import random_instance
from oracles import brute_force_plan, rk4
from leosched import cli
from leosched.battery import (
    BatteryParams,
    Depleted,
    KibamState,
    LoadProfile,
    evolve,
    load_battery_params,
    soc_to_voltage,
    state_from_soc,
    step_constant,
)
from leosched.mission import load_scenario_dir
from leosched.orchestrator import BACKUP, EXECUTED, HorizonConfig, qualifying_passes, run
from leosched.satsim import SatSim, TruthConfig, failing_pass_starts, load_truth_config, read_failure_script
from leosched.scheduler import Infeasible, plan, plan_monolithic
from leosched.synthetic import default_battery, gomx4_like

ROOT = Path(__file__).resolve().parent.parent
TD = ROOT / "scenarios" / "twoday"
SPAN = (0.0, 48 * 3600.0)


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{name}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_dp_matches_exhaustive_search(report):
    mismatches, slowest, infeasible = [], 0.0, 0
    for seed in range(200):
        sc, p, init, hz = random_instance(90000 + seed, 1 + seed % 12)
        ref = brute_force_plan(sc, init, hz, p, sc.soc_floor)
        tic = time.perf_counter()
        try:
            got = plan(sc, init, hz, p, trace_step=None).total_reward
        except Infeasible:
            got = None
        slowest = max(slowest, time.perf_counter() - tic)
        if got is None:
            infeasible += 1
        if got != (None if ref is None else ref[0]):
            mismatches.append(seed)
    report(
        "dp-optimality",
        not mismatches and slowest < 1.0,
        f"200 instances, reward mismatches {mismatches}, {infeasible} infeasible on both sides, slowest {slowest:.3f} s",
    )


def test_pruning_is_neutral(report):
    differ, smaller, large = [], 0, 0
    for seed in range(100):
        n = 1 + seed % 12
        sc, p, init, hz = random_instance(70000 + seed, n)
        try:
            pruned = plan(sc, init, hz, p, bound=False, trace_step=None)
        except Infeasible:
            pruned = None
        try:
            bare = plan(sc, init, hz, p, prune=False, trace_step=None)
        except Infeasible:
            bare = None
        if (pruned is None) != (bare is None) or (pruned and pruned.total_reward != bare.total_reward):
            differ.append(seed)
            continue
        if n >= 8 and pruned is not None:
            large += 1
            smaller += pruned.stats["labels_stored"] < bare.stats["labels_stored"]
    share = smaller / large if large else 0.0
    report(
        "pruning-neutrality",
        not differ and large > 0 and share >= 0.9,
        f"100 instances, reward differences {differ}; labels strictly fewer on {smaller}/{large} instances with >= 8 windows",
    )


def test_closed_form_matches_rk4(report):
    rng = np.random.default_rng(3)
    n, pool = 1000, 2000
    p_cap = 400.0
    a0 = rng.uniform(20.0, 200.0, pool)
    b0 = rng.uniform(0.0, 200.0, pool)
    load = rng.uniform(-2.0, 2.0, pool)
    v = rng.uniform(0.0, 5e-3, pool)
    dur = rng.uniform(0.0, 120.0, pool)
    a, b, amin, amax = rk4(a0, b0, load, v, dur, dt=0.01)
    # depletion and clamping leave the plain ODE; keep the first n tuples inside it
    inside = [i for i in range(pool) if amin[i] > 1e-6 and amax[i] < p_cap / 2 - 1e-6][:n]
    worst = 0.0
    for i in inside:
        out = step_constant(KibamState(a0[i], b0[i]), load[i], dur[i], BatteryParams(p_cap, v[i]))
        worst = max(worst, abs(out.available - a[i]), abs(out.bound - b[i]))
    used = len(inside)
    drift = 0.0
    for i in range(n):
        p = BatteryParams(p_cap, v[i], float(rng.uniform(0.2, 0.8)))
        s = KibamState(rng.uniform(0, 1) * p.available_capacity, rng.uniform(0, 1) * p.bound_capacity)
        out = evolve(s, LoadProfile(((0.0, dur[i], 0.0),)), dur[i], p)
        drift = max(drift, abs(out.total - s.total))
    report(
        "kernel-vs-rk4",
        used == n and worst <= 1e-6 and drift <= 1e-9,
        f"{used} tuples, worst |closed form - RK4| {worst:.2e} As; zero-load charge drift {drift:.2e} As",
    )


def _delivered(profile: LoadProfile, p: BatteryParams) -> float:
    start = state_from_soc(1.0, p)
    try:
        evolve(start, profile, profile.span[1], p)
    except Depleted as exc:
        return profile.integral(0.0, exc.time)
    raise AssertionError("profile did not deplete the battery")


def _pulsed(load: float, period: float, n: int = 4000) -> LoadProfile:
    segs = []
    for i in range(n):
        segs.append((2 * i * period, (2 * i + 1) * period, load))
        segs.append(((2 * i + 1) * period, (2 * i + 2) * period, 0.0))
    return LoadProfile(tuple(segs))


def test_rate_capacity_and_recovery(report):
    rows, ok = [], True
    for cap, v, split in ((36000.0, 1e-5, 0.5), (36000.0, 1e-5, 0.3), (9000.0, 2e-5, 0.6)):
        p = BatteryParams(cap, v, split)
        lo = _delivered(LoadProfile(((0.0, 1e7, 2.0),)), p)
        hi = _delivered(LoadProfile(((0.0, 1e7, 4.0),)), p)
        ok &= hi < lo
        rows.append(f"rate C={cap:g} v={v:g} c={split}: {hi:.0f} < {lo:.0f} As")
    for cap, v, split in ((36000.0, 1e-5, 0.5), (36000.0, 1e-4, 0.5), (9000.0, 2e-3, 0.4)):
        p = BatteryParams(cap, v, split)
        cont = _delivered(LoadProfile(((0.0, 1e7, 4.0),)), p)
        inter = _delivered(_pulsed(4.0, 600.0), p)
        ok &= inter > cont
        rows.append(f"recovery v={v:g}: {inter:.0f} > {cont:.0f} As")
    report("battery-nonlinearity", ok, "; ".join(rows))


def test_voltage_anchors(report):
    p = default_battery()
    lo, hi = soc_to_voltage(0.55, p), soc_to_voltage(1.0, p)
    report("voltage-anchors", lo == 14.8 and hi == 16.2, f"soc_to_voltage(0.55) = {lo!r} V, soc_to_voltage(1.0) = {hi!r} V")


def _twoday_run():
    sc = load_scenario_dir(TD)
    params = load_battery_params(TD / "battery.ini")
    truth = load_truth_config(TD / "truth.ini", 0.0)
    cfg = HorizonConfig()
    passes = qualifying_passes(sc, cfg, SPAN)
    sim = SatSim(sc, truth, failing_pass_starts(read_failure_script(TD / "fail.csv"), passes))
    log = run(sc, cfg, sim, SPAN, params)
    return sc, params, truth, passes, sim, log


def test_twoday_replay(report):
    sc, _, _, passes, sim, log = _twoday_run()
    els = [r.max_elevation for r in log.records]
    failure = passes[4].end
    stream = sim.task_stream(failure, SPAN[1])
    tail = [t for t in log.plan(4).tail(failure) if t.start < SPAN[1]]
    ok = els == [85.85, 36.22, 28.42, 53.59, 44.67] and log.outcomes == [EXECUTED] * 4 + [BACKUP]
    ok &= bool(tail) and stream == tail
    report(
        "twoday-replay",
        ok,
        f"elevations {els}, outcomes {log.outcomes}, {len(stream)} post-failure tasks "
        f"{'equal' if stream == tail else 'differ from'} plan 4's tail",
    )


def test_correction_and_receding_vs_monolithic(report):
    sc, params, truth, _, sim, log = _twoday_run()
    offset = truth.true_initial.total / truth.true_params.total_capacity - sc.initial_soc
    first = log.records[0].correction
    receding = sum(t.reward for t in sim.executed(*SPAN))
    mono = plan_monolithic(sc, state_from_soc(sc.initial_soc, params), SPAN, params, trace_step=None)
    ok = abs(offset - 0.05) < 1e-12 and 0.03 <= first <= 0.07 and receding >= mono.total_reward
    report(
        "soc-correction",
        ok,
        f"truth seeded {offset:+.2%}, first correction {first:+.4f}; "
        f"receding reward {receding:g} vs monolithic {mono.total_reward:g}",
    )


def _sweep_run(i: int, mismatch: float):
    p = default_battery()
    rng = np.random.default_rng([8, i])
    sc = gomx4_like(seed=300 + i, horizon=72 * 3600.0, isl_every=2, initial_soc=float(rng.uniform(0.68, 0.9)))
    cap = float(rng.uniform(-mismatch, mismatch))
    off = float(rng.uniform(-mismatch, mismatch))
    tp = BatteryParams(p.total_capacity * (1 + cap), p.diffusion_rate, p.well_split, p.voltage_full, p.voltage_floor, p.soc_at_floor)
    truth = TruthConfig(tp, state_from_soc(min(sc.initial_soc + off, 1.0), tp), seed=i)
    sim = SatSim(sc, truth)
    log = run(sc, HorizonConfig(), sim, SPAN, p)
    low = min(s.total for fp in log.plans for s in fp.schedule.trace) / p.total_capacity
    return low - sc.soc_floor, len(sim.safe_mode)


def test_safety_under_mismatch(report):
    small = [_sweep_run(i, 0.05) for i in range(16)]
    large = [_sweep_run(1000 + i, 0.10) for i in range(8)]
    worst = min(m for m, _ in small + large)
    safe_small = sum(n > 0 for _, n in small)
    safe_large = sum(n > 0 for _, n in large)
    report(
        "safety",
        worst >= -1e-9 and safe_small == 0,
        f"{len(small) + len(large)} runs, lowest planned SoC {worst:+.2e} above the floor; "
        f"safe-mode runs {safe_small}/{len(small)} at <= 5% mismatch, {safe_large}/{len(large)} at <= 10%",
    )


def test_performance(report):
    sc = load_scenario_dir(ROOT / "scenarios" / "gomx4")
    params = load_battery_params(ROOT / "scenarios" / "gomx4" / "battery.ini")
    n = sum(1 for w in sc.windows if w.end <= SPAN[1])
    tic = time.perf_counter()
    plan(sc, state_from_soc(sc.initial_soc, params), SPAN, params)
    t_plan = time.perf_counter() - tic
    tic = time.perf_counter()
    _twoday_run()
    t_loop = time.perf_counter() - tic
    report(
        "performance",
        t_plan < 5.0 and t_loop < 30.0 and 100 <= n <= 150,
        f"48 h plan over {n} windows in {t_plan:.2f} s; 48 h closed loop in {t_loop:.2f} s",
    )


def _tree(d: Path) -> dict:
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_determinism(report, tmp_path):
    commands = {
        "validate": ["validate", "--scenario-dir", TD, "--fail-script", TD / "fail.csv"],
        "plan": ["plan", "--scenario-dir", ROOT / "scenarios" / "gomx4", "--horizon-h", 48],
        "run": ["run", "--scenario-dir", TD, "--fail-script", TD / "fail.csv", "--seed", 3],
        "compare": ["compare", "--scenario-dir", TD, "--fail-script", TD / "fail.csv"],
    }
    differ = []
    for name, argv in commands.items():
        outputs = []
        for k in range(2):
            out = tmp_path / name / str(k)
            args = [str(a) for a in argv] + ([] if name == "validate" else ["--out", str(out)])
            buf = io.StringIO()
            with contextlib.redirect_stdout(buf), contextlib.redirect_stderr(io.StringIO()):
                code = cli.main(args)
            outputs.append((code, buf.getvalue(), _tree(out) if out.exists() else {}))
        if outputs[0] != outputs[1] or outputs[0][0] != 0:
            differ.append(name)
    report("determinism", not differ, f"repeated {', '.join(commands)}: stdout and files identical except {differ or 'none'}")
