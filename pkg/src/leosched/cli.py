"""Command-line entry point.

    leosched validate --scenario-dir D [--battery F] [--truth F] [--fail-script F]
    leosched plan     --scenario-dir D [--battery F] [--t0 S] [--horizon-h H] --out DIR
    leosched run      --scenario-dir D [--battery F] [--truth F] [--fail-script F] --out DIR
    leosched compare  (same inputs as run)

``--battery`` and ``--truth`` default to ``battery.ini`` and ``truth.ini``
inside the scenario directory. Every file written depends only on the
inputs and the seed; timing goes to stderr.

Exit status: 0 success, 1 bad input, 2 infeasible plan, 3 internal check failed.
"""

from __future__ import annotations

import argparse
import sys
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from leosched._config import InputError, write_csv
from leosched.battery import BatteryParams, load_battery_params, state_from_soc
from leosched.estimator import write_telemetry
from leosched.mission import Scenario, load_scenario_dir
from leosched.orchestrator import EXECUTED, FlightPlan, HorizonConfig, RunLog, plausibility_check, qualifying_passes, run
from leosched.satsim import SatSim, TruthConfig, failing_pass_starts, load_truth_config, read_failure_script
from leosched.scheduler import Infeasible, Schedule, plan, plan_monolithic, write_schedule, write_trace

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_INTERNAL = 3

COMPARE_HEADER = ("window_id", "payload", "start_s", "end_s", "reward", "chosen_by")
TOTALS_HEADER = ("payload", "receding_tasks", "receding_reward", "monolithic_tasks", "monolithic_reward")


class InvariantViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class RunManifest:
    scenario_dir: Path
    battery: Path
    truth: Path | None
    fail_script: Path | None
    out: Path | None
    seed: int | None
    t0: float
    horizon: float  # seconds, also the replanning look-ahead
    span: float  # seconds of closed-loop run
    min_elevation: float
    soc_floor: float | None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunManifest":
        d = Path(args.scenario_dir)
        battery = Path(args.battery) if args.battery else d / "battery.ini"
        if getattr(args, "truth", None):
            truth: Path | None = Path(args.truth)
        else:
            truth = d / "truth.ini" if (d / "truth.ini").is_file() else None
        fail = getattr(args, "fail_script", None)
        m = cls(
            scenario_dir=d,
            battery=battery,
            truth=truth,
            fail_script=Path(fail) if fail else None,
            out=Path(args.out) if getattr(args, "out", None) else None,
            seed=getattr(args, "seed", None),
            t0=float(getattr(args, "t0", 0.0) or 0.0),
            horizon=float(args.horizon_h) * 3600.0,
            span=float(getattr(args, "span_h", 48.0) or 48.0) * 3600.0,
            min_elevation=float(args.min_elevation_deg),
            soc_floor=args.soc_floor,
        )
        if not m.horizon > 0:
            raise InputError("--horizon-h must be positive")
        if not m.span > 0:
            raise InputError("--span-h must be positive")
        if m.soc_floor is not None and not 0 <= m.soc_floor < 1:
            raise InputError("--soc-floor must be in [0, 1)")
        return m

    def horizon_config(self) -> HorizonConfig:
        return HorizonConfig(interval=self.horizon, min_elevation=self.min_elevation, soc_floor=self.soc_floor)


@dataclass
class _Inputs:
    scenario: Scenario
    params: BatteryParams
    truth: TruthConfig | None = None
    fail_script: dict | None = None


def _load(m: RunManifest, need_truth: bool) -> _Inputs:
    scenario = load_scenario_dir(m.scenario_dir)
    params = load_battery_params(m.battery)
    truth = None
    script = None
    if need_truth:
        if m.truth is None:
            raise InputError("no truth config: pass --truth or add truth.ini to the scenario directory")
        truth = load_truth_config(m.truth, m.t0)
        if m.seed is not None:
            truth = truth.with_seed(m.seed)
        script = read_failure_script(m.fail_script) if m.fail_script else {}
    return _Inputs(scenario, params, truth, script)


def _floor(m: RunManifest, scenario: Scenario) -> float:
    return scenario.soc_floor if m.soc_floor is None else m.soc_floor


def _out_dir(m: RunManifest) -> Path:
    if m.out is None:
        raise InputError("--out is required")
    m.out.mkdir(parents=True, exist_ok=True)
    return m.out


def _per_payload(tasks) -> dict[str, tuple[int, float]]:
    acc: dict[str, list] = defaultdict(lambda: [0, 0.0])
    for t in tasks:
        acc[t.payload][0] += 1
        acc[t.payload][1] += t.reward
    return {k: (v[0], v[1]) for k, v in sorted(acc.items())}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_validate(m: RunManifest) -> int:
    checks = [("scenario", m.scenario_dir), ("battery", m.battery)]
    if m.truth is not None:
        checks.append(("truth", m.truth))
    if m.fail_script is not None:
        checks.append(("failure script", m.fail_script))
    for kind, path in checks:
        try:
            if kind == "scenario":
                sc = load_scenario_dir(path)
                print(
                    f"{path}: ok, {len(sc.windows)} windows, {len(sc.passes)} passes, "
                    f"{len(sc.sunlight)} sunlight episodes, {len(sc.payloads)} payloads"
                )
            elif kind == "battery":
                p = load_battery_params(path)
                print(f"{path}: ok, capacity {p.total_capacity:g} As")
            elif kind == "truth":
                t = load_truth_config(path, m.t0)
                print(f"{path}: ok, capacity {t.true_params.total_capacity:g} As, {len(t.gap_script)} gaps")
            else:
                s = read_failure_script(path)
                print(f"{path}: ok, {sum(s.values())} failing passes")
        except InputError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    return EXIT_OK


def cmd_plan(m: RunManifest) -> int:
    inp = _load(m, need_truth=False)
    out = _out_dir(m)
    sc, params = inp.scenario, inp.params
    floor = _floor(m, sc)
    initial = state_from_soc(sc.initial_soc, params, m.t0)
    tic = time.perf_counter()
    sched = plan(sc, initial, (m.t0, m.t0 + m.horizon), params, soc_floor=floor)
    wall = time.perf_counter() - tic
    rej = plausibility_check(FlightPlan(0, m.t0, sched), sc, initial, params, soc_floor=floor)
    if rej is not None:
        raise InvariantViolation(f"planner output fails the independent check: {rej}")
    write_schedule(out / "schedule.csv", sched.tasks)
    write_trace(out / "trace.csv", sched.trace, params)
    print(f"total reward {sched.total_reward:g}, {len(sched.tasks)} tasks")
    for payload, (n, r) in _per_payload(sched.tasks).items():
        print(f"  {payload}: {n} tasks, reward {r:g}")
    print(f"planned {len(sc.windows)} windows in {wall:.3f} s", file=sys.stderr)
    return EXIT_OK


def _closed_loop(m: RunManifest, inp: _Inputs, out: Path) -> tuple[RunLog, SatSim]:
    sc, params = inp.scenario, inp.params
    cfg = m.horizon_config()
    span = (m.t0, m.t0 + m.span)
    fail_at = failing_pass_starts(inp.fail_script or {}, qualifying_passes(sc, cfg, span))
    sim = SatSim(sc, inp.truth, fail_at)
    initial = state_from_soc(sc.initial_soc, params, m.t0)
    tic = time.perf_counter()
    log = run(sc, cfg, sim, span, params, initial=initial)
    print(f"closed loop over {m.span / 3600:g} h in {time.perf_counter() - tic:.3f} s", file=sys.stderr)

    # the ground log must agree with what the satellite saw
    executed = [r.plan_id for r in log.records if r.outcome == EXECUTED]
    accepted = [pid for _, pid, ok in sim.uploads if ok]
    if executed != accepted:
        raise InvariantViolation(f"run log says plans {executed} were accepted, satellite says {accepted}")

    log.write_csv(out / "runlog.csv")
    log.write_text(out / "run.log")
    plans = out / "plans"
    plans.mkdir(exist_ok=True)
    for fp in log.plans:
        write_schedule(plans / f"plan_{fp.plan_id:03d}_schedule.csv", fp.tasks)
        write_trace(plans / f"plan_{fp.plan_id:03d}_trace.csv", fp.schedule.trace, params)
    write_telemetry(out / "telemetry.csv", sim.samples)
    write_trace(out / "truth_trace.csv", sim.truth_trace, inp.truth.true_params)
    write_schedule(out / "executed.csv", sim.executed(m.t0, span[1]))
    return log, sim


def cmd_run(m: RunManifest) -> int:
    inp = _load(m, need_truth=True)
    out = _out_dir(m)
    log, sim = _closed_loop(m, inp, out)
    done = sim.executed(m.t0, m.t0 + m.span)
    print(f"{len(log.records)} passes: {', '.join(log.outcomes) or 'none'}")
    print(f"executed {len(done)} tasks, reward {sum(t.reward for t in done):g}, safe-mode episodes {len(sim.safe_mode)}")
    return EXIT_OK


def cmd_compare(m: RunManifest) -> int:
    inp = _load(m, need_truth=True)
    out = _out_dir(m)
    sc, params = inp.scenario, inp.params
    span = (m.t0, m.t0 + m.span)
    _, sim = _closed_loop(m, inp, out)
    receding = sim.executed(*span)
    initial = state_from_soc(sc.initial_soc, params, m.t0)
    mono: Schedule = plan_monolithic(sc, initial, span, params, soc_floor=_floor(m, sc))
    write_schedule(out / "monolithic_schedule.csv", mono.tasks)
    write_trace(out / "monolithic_trace.csv", mono.trace, params)

    r_ids = {t.window_id for t in receding}
    m_ids = {t.window_id for t in mono.tasks}
    rows = []
    for w in sc.windows:
        if w.start < span[0] or w.end > span[1]:
            continue
        by = {(True, True): "both", (True, False): "receding", (False, True): "monolithic", (False, False): "neither"}[
            (w.id in r_ids, w.id in m_ids)
        ]
        rows.append((w.id, w.payload, w.start, w.end, sc.reward_of(w), by))
    write_csv(out / "compare.csv", COMPARE_HEADER, rows)
    rec = _per_payload(receding)
    mon = _per_payload(mono.tasks)
    totals = []
    for payload in sorted(set(rec) | set(mon)):
        rn, rr = rec.get(payload, (0, 0.0))
        mn, mr = mon.get(payload, (0, 0.0))
        totals.append((payload, rn, rr, mn, mr))
    write_csv(out / "compare_totals.csv", TOTALS_HEADER, totals)
    r_total = sum(t.reward for t in receding)
    print(f"receding reward {r_total:g} ({len(receding)} tasks), monolithic reward {mono.total_reward:g} ({len(mono.tasks)} tasks)")
    for payload, rn, rr, mn, mr in totals:
        print(f"  {payload}: receding {rn} / monolithic {mn}")
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "plan": cmd_plan, "run": cmd_run, "compare": cmd_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leosched", description="Battery-aware receding-horizon scheduling.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario-dir", required=True)
        p.add_argument("--battery", help="battery config (default: battery.ini in the scenario directory)")
        p.add_argument("--horizon-h", type=float, default=24.0, help="planning horizon, hours (default 24)")
        p.add_argument("--min-elevation-deg", type=float, default=25.0)
        p.add_argument("--soc-floor", type=float, default=None)
        p.add_argument("--t0", type=float, default=0.0, help="start time, seconds after the scenario epoch")
        p.add_argument("--out")
        if name != "plan":
            p.add_argument("--truth", help="truth config (default: truth.ini in the scenario directory)")
            p.add_argument("--fail-script")
            p.add_argument("--seed", type=int, default=None, help="overrides the truth config seed")
            p.add_argument("--span-h", type=float, default=48.0, help="closed-loop duration, hours (default 48)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        m = RunManifest.from_args(args)
        return COMMANDS[args.command](m)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Infeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InvariantViolation as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
