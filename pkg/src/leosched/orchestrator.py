"""Receding-horizon control loop.

At every qualifying ground pass the ground segment pulls the telemetry
recorded since the previous pass, corrects its battery belief, plans the
next ``interval`` seconds starting at the end of the pass and tries to
upload the result. A plan that fails to reach the satellite, or that the
planner cannot produce, leaves the previous plan running; since every plan
covers a full interval beyond its upload pass, it serves as the backup.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from leosched._config import InputError, parse_float, read_csv, read_section, write_csv
from leosched.battery import BatteryParams, Depleted, KibamState, LoadProfile, evolve, state_from_soc
from leosched.estimator import SocEstimate, TelemetryLog, propagate_to, reconcile
from leosched.mission import GroundPass, Scenario, filter_passes
from leosched.scheduler import Infeasible, Schedule, ScheduledTask, induced_profile, plan, replay

__all__ = [
    "FlightPlan",
    "HorizonConfig",
    "PassRecord",
    "Rejection",
    "RunLog",
    "SatelliteInterface",
    "EXECUTED",
    "BACKUP",
    "merge_plans",
    "plausibility_check",
    "run",
    "load_horizon_config",
    "read_runlog",
]

EXECUTED = "Executed"
BACKUP = "BackupPlan"

RUNLOG_HEADER = ("pass_start_s", "station", "max_el_deg", "plan_id", "outcome", "correction", "pred_soc")


@dataclass(frozen=True)
class FlightPlan:
    """Tasks the satellite runs on its own from ``valid_from`` onward.

    ``committed`` lists tasks of the previous plan still running at
    ``valid_from``; they stay owned by that plan but load this one.
    """

    plan_id: int
    valid_from: float
    schedule: Schedule
    supersedes: int | None = None
    committed: tuple[ScheduledTask, ...] = ()

    @property
    def tasks(self) -> tuple[ScheduledTask, ...]:
        return self.schedule.tasks

    def tail(self, t: float) -> tuple[ScheduledTask, ...]:
        """Tasks starting at or after ``t``."""
        return tuple(tk for tk in self.tasks if tk.start >= t)


def _empty_plan(plan_id: int, t0: float, t1: float, supersedes: int | None = None) -> FlightPlan:
    return FlightPlan(plan_id, t0, Schedule((), 0.0, (t0, t1)), supersedes)


def merge_plans(active: FlightPlan, incoming: FlightPlan) -> FlightPlan:
    """On-board plan after ``incoming`` takes over at its ``valid_from``.

    Tasks of ``active`` that started before the handover are kept in full,
    including one still running. ``incoming`` supplies everything starting at
    or after it, except tasks that repeat or overlap a kept task of the same
    payload.
    """
    t = incoming.valid_from
    kept = [tk for tk in active.tasks if tk.start < t]
    taken = []
    for tk in incoming.tasks:
        if tk.start < t:
            continue
        clash = any(
            k.window_id == tk.window_id or (k.payload == tk.payload and k.start < tk.end and tk.start < k.end)
            for k in kept
        )
        if not clash:
            taken.append(tk)
    tasks = tuple(sorted(kept + taken, key=lambda x: (x.start, x.window_id)))
    total = 0.0
    for tk in tasks:
        total += tk.reward
    h0 = min(active.schedule.horizon[0], incoming.schedule.horizon[0])
    schedule = Schedule(tasks, total, (h0, incoming.schedule.horizon[1]), incoming.schedule.trace)
    return FlightPlan(incoming.plan_id, t, schedule, active.plan_id, incoming.committed)


@dataclass(frozen=True)
class Rejection:
    rule: str  # "window", "exclusion", "soc_floor" or "depleted"
    time: float
    detail: str

    def __str__(self) -> str:
        return f"{self.rule} at t={self.time:.3f} s: {self.detail}"


_RULE_ORDER = {"window": 0, "exclusion": 1, "soc_floor": 2, "depleted": 3}


def plausibility_check(
    plan: FlightPlan,
    scenario: Scenario,
    initial: KibamState,
    params: BatteryParams,
    *,
    soc_floor: float | None = None,
) -> Rejection | None:
    """Check a plan independently of the planner; ``None`` means it passes.

    Each task must sit inside a scenario window of the same id and payload,
    no two tasks of one exclusion group may overlap (committed tasks
    included), and replaying the load from ``initial`` to the end of the
    plan horizon must keep the SoC floor. The earliest violation is reported.
    """
    found: list[Rejection] = []
    for tk in plan.tasks:
        if not scenario.has_window(tk.window_id):
            found.append(Rejection("window", tk.start, f"unknown window '{tk.window_id}'"))
            continue
        w = scenario.window(tk.window_id)
        if w.payload != tk.payload:
            found.append(Rejection("window", tk.start, f"window '{tk.window_id}' belongs to '{w.payload}', not '{tk.payload}'"))
        elif tk.start < w.start or tk.end > w.end:
            found.append(Rejection("window", tk.start, f"task '{tk.window_id}' leaves its window [{w.start}, {w.end}]"))

    everything = sorted((*plan.committed, *plan.tasks), key=lambda x: (x.start, x.window_id))
    for i, t1 in enumerate(everything):
        g1 = scenario.payloads[t1.payload].exclusion_group if t1.payload in scenario.payloads else None
        if g1 is None:
            continue
        for t2 in everything[i + 1 :]:
            if t2.start >= t1.end:
                break
            g2 = scenario.payloads[t2.payload].exclusion_group if t2.payload in scenario.payloads else None
            if g2 == g1:
                found.append(Rejection("exclusion", t2.start, f"'{t1.window_id}' and '{t2.window_id}' share group '{g1}'"))

    floor_soc = scenario.soc_floor if soc_floor is None else soc_floor
    t0, t1 = plan.schedule.horizon
    t0 = max(t0, initial.time)
    known = [tk for tk in everything if tk.payload in scenario.payloads]
    profile = induced_profile(scenario, known, t0, t1)
    v = replay(KibamState(initial.available, initial.bound, t0), profile, t1, params, floor_soc)
    if v is not None:
        found.append(Rejection(v.kind, v.time, f"battery replay from SoC {initial.total / params.total_capacity:.4f}"))
    if not found:
        return None
    return min(found, key=lambda r: (r.time, _RULE_ORDER[r.rule]))


@dataclass(frozen=True)
class HorizonConfig:
    interval: float = 24 * 3600.0
    min_elevation: float = 25.0
    correction_cap: float = 0.08
    soc_floor: float | None = None  # None: the scenario's floor
    # plans aim this much SoC above the floor so that a small downward
    # correction at the next pass still leaves a feasible replan
    plan_margin: float = 0.01

    def __post_init__(self) -> None:
        if not self.interval > 0:
            raise ValueError(f"interval must be positive, got {self.interval}")
        if self.correction_cap < 0:
            raise ValueError("correction_cap must be >= 0")
        if self.soc_floor is not None and not 0 <= self.soc_floor < 1:
            raise ValueError(f"soc_floor {self.soc_floor} outside [0, 1)")
        if not 0 <= self.plan_margin < 1:
            raise ValueError(f"plan_margin {self.plan_margin} outside [0, 1)")


_HORIZON_KEYS = {"interval_h", "min_elevation_deg", "correction_cap", "soc_floor", "plan_margin"}


def load_horizon_config(path: str | Path, section: str = "horizon") -> HorizonConfig:
    raw = read_section(path, section, allowed=_HORIZON_KEYS)
    try:
        return HorizonConfig(
            interval=float(raw.get("interval_h", 24.0)) * 3600.0,
            min_elevation=float(raw.get("min_elevation_deg", 25.0)),
            correction_cap=float(raw.get("correction_cap", 0.08)),
            soc_floor=float(raw["soc_floor"]) if "soc_floor" in raw else None,
            plan_margin=float(raw.get("plan_margin", 0.01)),
        )
    except ValueError as exc:
        raise InputError(str(exc), path) from None


class SatelliteInterface(Protocol):
    def commission(self, plan: FlightPlan) -> None: ...

    def advance(self, until: float) -> None: ...

    def fetch_telemetry(self, since: float) -> TelemetryLog: ...

    def upload(self, plan: FlightPlan) -> bool: ...


@dataclass(frozen=True)
class PassRecord:
    pass_start: float
    station: str
    max_elevation: float
    plan_id: int | None  # None when no plan could be produced
    outcome: str
    correction: float
    pred_soc: float


@dataclass
class RunLog:
    records: list[PassRecord] = field(default_factory=list)
    plans: list[FlightPlan] = field(default_factory=list)  # every plan produced, uploaded or not
    accepted: list[int] = field(default_factory=list)  # plan ids that reached the satellite
    lines: list[str] = field(default_factory=list)
    alerts: list[str] = field(default_factory=list)

    @property
    def outcomes(self) -> list[str]:
        return [r.outcome for r in self.records]

    def plan(self, plan_id: int) -> FlightPlan:
        for p in self.plans:
            if p.plan_id == plan_id:
                return p
        raise KeyError(plan_id)

    def note(self, t: float, text: str) -> None:
        self.lines.append(f"[{t:10.1f}] {text}")

    def alert(self, t: float, text: str) -> None:
        self.alerts.append(text)
        self.note(t, "ALERT " + text)

    def write_csv(self, path: str | Path) -> None:
        rows = [
            (r.pass_start, r.station, r.max_elevation, "" if r.plan_id is None else r.plan_id, r.outcome, r.correction, r.pred_soc)
            for r in self.records
        ]
        write_csv(path, RUNLOG_HEADER, rows)

    def write_text(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.lines), encoding="utf-8")


def read_runlog(path: str | Path) -> list[PassRecord]:
    out = []
    for line, (ps, station, el, pid, outcome, corr, pred) in read_csv(path, RUNLOG_HEADER):
        if outcome not in (EXECUTED, BACKUP):
            raise InputError(f"unknown outcome '{outcome}'", path, line, 5)
        try:
            plan_id = None if pid == "" else int(pid)
        except ValueError:
            raise InputError(f"plan_id: '{pid}' is not an integer", path, line, 4) from None
        out.append(
            PassRecord(
                parse_float(ps, path, line, 1, "pass_start_s"),
                station,
                parse_float(el, path, line, 3, "max_el_deg"),
                plan_id,
                outcome,
                parse_float(corr, path, line, 6, "correction"),
                parse_float(pred, path, line, 7, "pred_soc"),
            )
        )
    return out


def _belief_at(origin: KibamState, profile: LoadProfile, t: float, params: BatteryParams) -> KibamState:
    try:
        return evolve(origin, profile, t, params)
    except Depleted as exc:
        # the belief itself ran dry; hold it empty until telemetry says otherwise
        s = exc.state or KibamState(0.0, 0.0, exc.time)
        return KibamState(0.0, s.bound, t)


def _plan_with_margin(scenario, initial, horizon, params, floor, margin, committed=()) -> Schedule:
    """Plan against ``floor + margin``, or against ``floor`` alone if that fails."""
    if margin > 0:
        try:
            return plan(scenario, initial, horizon, params, soc_floor=min(floor + margin, 1.0), committed=committed)
        except Infeasible:
            pass
    return plan(scenario, initial, horizon, params, soc_floor=floor, committed=committed)


def qualifying_passes(scenario: Scenario, config: HorizonConfig, span: tuple[float, float]) -> list[GroundPass]:
    s0, s1 = span
    return [p for p in filter_passes(scenario.passes, config.min_elevation) if p.start >= s0 and p.end <= s1]


def run(
    scenario: Scenario,
    config: HorizonConfig,
    sat: SatelliteInterface,
    span: tuple[float, float],
    params: BatteryParams,
    *,
    initial: KibamState | None = None,
) -> RunLog:
    """Drive ``sat`` through ``span`` with one replan per qualifying pass.

    ``initial`` is the ground belief at ``span[0]`` (by default the
    scenario's initial SoC at diffusion equilibrium). Plan 0 is computed from
    it and put on board before the run; plan ``k`` belongs to the ``k``-th
    qualifying pass.
    """
    s0, s1 = float(span[0]), float(span[1])
    if not s1 > s0:
        raise ValueError(f"empty span [{s0}, {s1}]")
    floor = scenario.soc_floor if config.soc_floor is None else config.soc_floor
    cap_as = params.total_capacity
    belief = initial if initial is not None else state_from_soc(scenario.initial_soc, params, s0)
    log = RunLog()

    try:
        sched0 = _plan_with_margin(scenario, belief, (s0, s0 + config.interval), params, floor, config.plan_margin)
        onboard = FlightPlan(0, s0, sched0)
        log.note(s0, f"plan 0: {len(sched0.tasks)} tasks, reward {sched0.total_reward:g}")
    except Infeasible as exc:
        onboard = _empty_plan(0, s0, s0 + config.interval)
        log.alert(s0, f"initial plan infeasible ({exc}); starting with an empty plan")
    log.plans.append(onboard)
    log.accepted.append(0)
    sat.commission(onboard)

    origin = belief
    for k, p in enumerate(qualifying_passes(scenario, config, (s0, s1)), start=1):
        sat.advance(p.start)
        telemetry = sat.fetch_telemetry(origin.time)
        horizon_end = max(p.end, onboard.schedule.horizon[1])
        profile = induced_profile(scenario, onboard.tasks, origin.time, horizon_end)
        predicted = _belief_at(origin, profile, p.start, params)
        if len(telemetry):
            try:
                est = reconcile(predicted, telemetry, params, config.correction_cap, origin=origin, scheduled=profile)
            except Depleted:
                est = reconcile(predicted, telemetry, params, config.correction_cap)
        else:
            est = SocEstimate(p.start, predicted)
            log.alert(p.start, "no telemetry since the previous pass; belief not corrected")
        t0 = p.end
        try:
            at_t0 = propagate_to(est, profile, t0, params)
        except Depleted as exc:
            at_t0 = KibamState(0.0, (exc.state.bound if exc.state else 0.0), t0)
        pred_soc = at_t0.total / cap_as
        log.note(
            p.start,
            f"pass {k} {p.station} el={p.max_elevation:.2f}: {len(telemetry)} samples, "
            f"correction {est.correction_applied:+.5f}, SoC at handover {pred_soc:.5f}",
        )

        committed = tuple(tk for tk in onboard.tasks if tk.start < t0 < tk.end)
        plan_id: int | None = None
        outcome = BACKUP
        try:
            sched = _plan_with_margin(
                scenario, at_t0, (t0, t0 + config.interval), params, floor, config.plan_margin, committed
            )
        except Infeasible as exc:
            log.alert(p.start, f"pass {k}: replan infeasible ({exc}); plan {onboard.plan_id} continues")
        else:
            plan_id = k
            fp = FlightPlan(k, t0, sched, onboard.plan_id, committed)
            log.plans.append(fp)
            rejection = plausibility_check(fp, scenario, at_t0, params, soc_floor=floor)
            if rejection is not None:
                log.alert(p.start, f"pass {k}: plan {k} rejected, {rejection}; plan {onboard.plan_id} continues")
            elif sat.upload(fp):
                onboard = merge_plans(onboard, fp)
                log.accepted.append(k)
                outcome = EXECUTED
                log.note(p.start, f"plan {k} uploaded: {len(sched.tasks)} tasks, reward {sched.total_reward:g}")
            else:
                log.note(p.start, f"plan {k} upload failed; plan {onboard.plan_id} continues")
        log.records.append(PassRecord(p.start, p.station, p.max_elevation, plan_id, outcome, est.correction_applied, pred_soc))
        origin = KibamState(est.state.available, est.state.bound, p.start)

    sat.advance(s1)
    log.note(s1, "end of run")
    return log
