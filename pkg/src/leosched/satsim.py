"""A simulated satellite for closed-loop runs.

The simulator carries a "true" battery whose parameters and charge may
differ from the planner's model. It executes whatever flight plan is on
board, samples telemetry on a fixed grid with Gaussian noise, drops samples
in scripted blackouts and accepts or refuses uploads according to a failure
script.

When the true pack voltage falls below its floor, or the available well runs
dry, the satellite enters safe mode: every payload task is switched off until
the SoC has recovered a margin above the floor. A task cut by safe mode, or
due to start while it lasts, is dropped rather than resumed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from leosched._config import InputError, parse_float, read_csv, read_section, write_csv
from leosched.battery import (
    BatteryParams,
    Depleted,
    KibamState,
    LoadProfile,
    _PARAM_KEYS,
    effective_current,
    soc_to_voltage,
    state_from_soc,
    step_constant,
)
from leosched.estimator import TelemetryLog, TelemetrySample
from leosched.mission import GroundPass, Scenario
from leosched.orchestrator import FlightPlan, merge_plans
from leosched.scheduler import ScheduledTask, induced_profile

__all__ = [
    "TruthConfig",
    "SatSim",
    "OutOfPass",
    "SafeModeEpisode",
    "load_truth_config",
    "read_gap_script",
    "write_gap_script",
    "read_failure_script",
    "write_failure_script",
    "failing_pass_starts",
]

GAP_HEADER = ("start_s", "end_s")
FAILURE_HEADER = ("pass_index", "fail")

# noise is drawn in blocks of this many grid samples, one generator per block,
# so a sample's noise does not depend on how the run was chopped into advances
_NOISE_BLOCK = 1024
_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no"}


class OutOfPass(RuntimeError):
    """Upload attempted while no ground pass is in progress."""


@dataclass(frozen=True)
class TruthConfig:
    true_params: BatteryParams
    true_initial: KibamState
    noise_sigma_v: float = 0.02
    noise_sigma_i: float = 0.05
    telemetry_cadence: float = 120.0
    gap_script: tuple[tuple[float, float], ...] = ()
    seed: int = 0
    upload_failure_prob: float = 0.0
    recovery_margin: float = 0.02  # SoC above the floor that ends safe mode

    def __post_init__(self) -> None:
        if not self.telemetry_cadence > 0:
            raise ValueError("telemetry_cadence must be positive")
        if self.noise_sigma_v < 0 or self.noise_sigma_i < 0:
            raise ValueError("noise sigmas must be >= 0")
        if not 0 <= self.upload_failure_prob <= 1:
            raise ValueError("upload_failure_prob must be in [0, 1]")
        object.__setattr__(self, "gap_script", tuple((float(a), float(b)) for a, b in self.gap_script))
        for a, b in self.gap_script:
            if not a < b:
                raise ValueError(f"gap [{a}, {b}] is empty or reversed")

    def with_seed(self, seed: int) -> "TruthConfig":
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SafeModeEpisode:
    start: float
    end: float | None  # None while still in safe mode
    cause: str  # "voltage" or "depleted"


@dataclass
class _Clock:
    state: KibamState
    safe_since: float | None = None
    cause: str = ""


class SatSim:
    """Ground truth behind :class:`~leosched.orchestrator.SatelliteInterface`.

    ``fail_at`` holds the start times of passes whose upload fails; with
    ``upload_failure_prob`` the other passes fail at random, seeded per pass.
    """

    def __init__(self, scenario: Scenario, truth: TruthConfig, fail_at: Iterable[float] = ()) -> None:
        self.scenario = scenario
        self.truth = truth
        self.params = truth.true_params
        self.fail_at = frozenset(float(t) for t in fail_at)
        self._clock = _Clock(truth.true_initial)
        self.onboard: FlightPlan | None = None
        self.shed: set[str] = set()
        self.safe_mode: list[SafeModeEpisode] = []
        self.brownouts: list[float] = []
        self.samples: list[TelemetrySample] = []
        self.truth_trace: list[KibamState] = [truth.true_initial]
        self.uploads: list[tuple[float, int, bool]] = []
        self._next_k = int(np.ceil(truth.true_initial.time / truth.telemetry_cadence - 1e-9))
        self._noise: dict[int, np.ndarray] = {}
        self._record_due()

    # -- satellite interface ------------------------------------------------

    @property
    def now(self) -> float:
        return self._clock.state.time

    @property
    def state(self) -> KibamState:
        return self._clock.state

    @property
    def in_safe_mode(self) -> bool:
        return self._clock.safe_since is not None

    def commission(self, plan: FlightPlan) -> None:
        """Put the first plan on board, before launch; no pass needed."""
        self.onboard = plan

    def upload(self, plan: FlightPlan) -> bool:
        p = self._current_pass()
        if p is None:
            raise OutOfPass(f"no ground pass in progress at t={self.now}")
        ok = p.start not in self.fail_at
        if ok and self.truth.upload_failure_prob > 0:
            rng = np.random.default_rng([self.truth.seed, 1, int(round(p.start * 1000))])
            ok = rng.random() >= self.truth.upload_failure_prob
        self.uploads.append((self.now, plan.plan_id, ok))
        if ok:
            self.onboard = plan if self.onboard is None else merge_plans(self.onboard, plan)
        return ok

    def fetch_telemetry(self, since: float) -> TelemetryLog:
        """Samples recorded at or after ``since`` and strictly before now."""
        now = self.now
        return TelemetryLog(tuple(s for s in self.samples if since <= s.time < now), self.truth.telemetry_cadence)

    def advance(self, until: float) -> None:
        if until < self.now:
            raise ValueError(f"cannot advance to t={until}, already at t={self.now}")
        while self.now < until:
            t = self.now
            # run up to the next telemetry instant or the target
            stop = min(until, self._next_k * self.truth.telemetry_cadence)
            if stop > t:
                self._run(stop)
            self._record_due()

    # -- executed work -------------------------------------------------------

    def executed(self, t_from: float = -np.inf, t_to: float | None = None) -> list[ScheduledTask]:
        """On-board tasks that finished without being shed, ending in ``[t_from, t_to]``."""
        t_to = self.now if t_to is None else min(t_to, self.now)
        if self.onboard is None:
            return []
        return [tk for tk in self.onboard.tasks if t_from <= tk.end <= t_to and tk.window_id not in self.shed]

    def task_stream(self, t_from: float, t_to: float) -> list[ScheduledTask]:
        """On-board tasks, shed ones excluded, starting in ``[t_from, t_to)``."""
        if self.onboard is None:
            return []
        return [tk for tk in self.onboard.tasks if t_from <= tk.start < t_to and tk.window_id not in self.shed]

    # -- internals -------------------------------------------------------------

    def _current_pass(self) -> GroundPass | None:
        for p in self.scenario.passes:
            if p.start <= self.now <= p.end:
                return p
        return None

    def _profile(self, t0: float, t1: float) -> LoadProfile:
        tasks: Sequence[ScheduledTask] = ()
        if self.onboard is not None and not self.in_safe_mode:
            tasks = [tk for tk in self.onboard.tasks if tk.window_id not in self.shed and tk.end > t0 and tk.start < t1]
        return induced_profile(self.scenario, tasks, t0, t1)

    def _enter_safe(self, t: float, cause: str) -> None:
        self._clock.safe_since = t
        self._clock.cause = cause
        # whatever runs now is cut
        if self.onboard is not None:
            for tk in self.onboard.tasks:
                if tk.start <= t < tk.end:
                    self.shed.add(tk.window_id)

    def _leave_safe(self, t: float) -> None:
        ts = self._clock.safe_since
        if self.onboard is not None:
            for tk in self.onboard.tasks:
                if tk.start < t and tk.end > ts:
                    self.shed.add(tk.window_id)
        self.safe_mode.append(SafeModeEpisode(ts, t, self._clock.cause))
        self._clock.safe_since = None

    def _run(self, until: float) -> None:
        """Evolve the true battery to ``until``, switching modes as needed."""
        p = self.params
        floor_q = p.soc_at_floor * p.total_capacity
        recover_q = (p.soc_at_floor + self.truth.recovery_margin) * p.total_capacity
        while self.now < until:
            start = self.now
            switched = False
            for s, e, load in self._profile(start, until).pieces(start, until):
                st = KibamState(self._clock.state.available, self._clock.state.bound, s)
                if not self.in_safe_mode:
                    if st.total < floor_q:
                        self._enter_safe(s, "voltage")
                        switched = True
                        break
                    try:
                        nxt = step_constant(st, load, e - s, p)
                    except Depleted as exc:
                        t_hit = exc.time
                        if load > 0 and st.total > floor_q:
                            t_hit = min(t_hit, s + (st.total - floor_q) / load)
                        self._clock.state = _stepped(st, load, t_hit - s, p)
                        self._enter_safe(t_hit, "depleted" if t_hit == exc.time else "voltage")
                        switched = True
                        break
                    if load > 0 and nxt.total < floor_q:
                        # total charge is linear while discharging
                        t_hit = s + max(st.total - floor_q, 0.0) / load
                        self._clock.state = _stepped(st, load, t_hit - s, p)
                        self._enter_safe(t_hit, "voltage")
                        switched = True
                        break
                    self._clock.state = nxt
                else:
                    nxt = self._safe_step(st, load, e - s)
                    if load < 0 and nxt.total >= recover_q:
                        t_hit = _recovery_time(st, load, e - s, recover_q, p)
                        self._clock.state = self._safe_step(st, load, t_hit - s)
                        self._leave_safe(self.now)
                        switched = True
                        break
                    self._clock.state = nxt
            if not switched:
                self._clock.state = KibamState(self._clock.state.available, self._clock.state.bound, until)

    def _safe_step(self, st: KibamState, load: float, dt: float) -> KibamState:
        try:
            return step_constant(st, load, dt, self.params)
        except Depleted as exc:
            # brownout: the bus drops until the load turns into charge
            if not self.brownouts or self.brownouts[-1] != exc.time:
                self.brownouts.append(exc.time)
            dead = exc.state or KibamState(0.0, st.bound, exc.time)
            return step_constant(dead, 0.0, st.time + dt - exc.time, self.params)

    def _record_due(self) -> None:
        """Take the telemetry sample due at the current instant, if any."""
        cad = self.truth.telemetry_cadence
        t_grid = self._next_k * cad
        if abs(self.now - t_grid) > 1e-9 * max(1.0, abs(t_grid)):
            return
        k = self._next_k
        self._next_k += 1
        st = KibamState(self._clock.state.available, self._clock.state.bound, t_grid)
        self._clock.state = st
        if st.time != self.truth_trace[-1].time:
            self.truth_trace.append(st)
        if any(a <= t_grid <= b for a, b in self.truth.gap_script):
            return
        load = self._profile(t_grid, t_grid + cad).load_at(t_grid)
        if self.in_safe_mode and st.available <= 0.0 and load > 0:
            current = 0.0
        else:
            current = effective_current(st, load, self.params)
        nv, ni = self._noise_at(k)
        soc = st.total / self.params.total_capacity
        voltage = max(soc_to_voltage(soc, self.params) + nv, 1e-3)
        self.samples.append(TelemetrySample(t_grid, voltage, current + ni))

    def _noise_at(self, k: int) -> tuple[float, float]:
        block, j = divmod(k, _NOISE_BLOCK)
        arr = self._noise.get(block)
        if arr is None:
            rng = np.random.default_rng([self.truth.seed, 0, block])
            arr = rng.standard_normal((_NOISE_BLOCK, 2))
            self._noise[block] = arr
        return float(arr[j, 0]) * self.truth.noise_sigma_v, float(arr[j, 1]) * self.truth.noise_sigma_i


def _stepped(st: KibamState, load: float, dt: float, p: BatteryParams) -> KibamState:
    dt = max(dt, 0.0)
    try:
        return step_constant(st, load, dt, p)
    except Depleted as exc:
        return exc.state or KibamState(0.0, st.bound, st.time + dt)


def _recovery_time(st: KibamState, load: float, dt: float, target: float, p: BatteryParams) -> float:
    """First instant in the piece where the total reaches ``target`` while charging."""
    guess = st.time + max(target - st.total, 0.0) / (-load)
    if guess <= st.time + dt:
        at = step_constant(st, load, guess - st.time, p)
        if at.total >= target - 1e-9:
            return guess
    # a full available well slows charging; bisect on the monotone total
    lo, hi = st.time, st.time + dt
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if step_constant(st, load, mid - st.time, p).total >= target:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

_TRUTH_KEYS = {
    "initial_soc",
    "initial_available_as",
    "initial_bound_as",
    "noise_sigma_v",
    "noise_sigma_i",
    "telemetry_cadence_s",
    "gap_script",
    "seed",
    "upload_failure_prob",
    "recovery_margin",
}


def load_truth_config(path: str | Path, t0: float = 0.0) -> TruthConfig:
    """Read the ``[battery]`` and ``[truth]`` sections of a truth file.

    The initial state is either ``initial_soc`` (equal fill levels) or both
    ``initial_available_as`` and ``initial_bound_as``. ``gap_script`` names a
    CSV relative to the truth file.
    """
    path = Path(path)
    raw_b = read_section(path, "battery", required=("capacity_as", "diffusion_per_s"), allowed=_PARAM_KEYS)
    raw = read_section(path, "truth", allowed=_TRUTH_KEYS)
    try:
        params = BatteryParams(**{_PARAM_KEYS[k]: float(v) for k, v in raw_b.items()})
        if "initial_soc" in raw:
            if "initial_available_as" in raw or "initial_bound_as" in raw:
                raise ValueError("give either initial_soc or the two well contents, not both")
            initial = state_from_soc(float(raw["initial_soc"]), params, t0)
        elif "initial_available_as" in raw and "initial_bound_as" in raw:
            initial = KibamState(float(raw["initial_available_as"]), float(raw["initial_bound_as"]), t0)
        else:
            raise ValueError("[truth] needs initial_soc or initial_available_as and initial_bound_as")
        initial.check(params)
        gaps: tuple[tuple[float, float], ...] = ()
        if raw.get("gap_script"):
            gaps = tuple(read_gap_script(path.parent / raw["gap_script"]))
        return TruthConfig(
            true_params=params,
            true_initial=initial,
            noise_sigma_v=float(raw.get("noise_sigma_v", 0.02)),
            noise_sigma_i=float(raw.get("noise_sigma_i", 0.05)),
            telemetry_cadence=float(raw.get("telemetry_cadence_s", 120.0)),
            gap_script=gaps,
            seed=int(raw.get("seed", 0)),
            upload_failure_prob=float(raw.get("upload_failure_prob", 0.0)),
            recovery_margin=float(raw.get("recovery_margin", 0.02)),
        )
    except ValueError as exc:
        raise InputError(str(exc), path) from None


def read_gap_script(path: str | Path) -> list[tuple[float, float]]:
    out = []
    for line, (a, b) in read_csv(path, GAP_HEADER):
        s = parse_float(a, path, line, 1, "start_s")
        e = parse_float(b, path, line, 2, "end_s")
        if not s < e:
            raise InputError("end_s must be after start_s", path, line, 2)
        out.append((s, e))
    return out


def write_gap_script(path: str | Path, gaps: Iterable[tuple[float, float]]) -> None:
    write_csv(path, GAP_HEADER, gaps)


def read_failure_script(path: str | Path) -> dict[int, bool]:
    """``pass_index`` (1-based, among passes that qualify for upload) to failure flag."""
    out: dict[int, bool] = {}
    for line, (idx, flag) in read_csv(path, FAILURE_HEADER):
        try:
            i = int(idx)
        except ValueError:
            raise InputError(f"pass_index: '{idx}' is not an integer", path, line, 1) from None
        if i < 1:
            raise InputError("pass_index starts at 1", path, line, 1)
        if i in out:
            raise InputError(f"pass_index {i} listed twice", path, line, 1)
        f = flag.lower()
        if f not in _TRUE | _FALSE:
            raise InputError(f"fail: '{flag}' is not a boolean", path, line, 2)
        out[i] = f in _TRUE
    return out


def write_failure_script(path: str | Path, script: dict[int, bool]) -> None:
    write_csv(path, FAILURE_HEADER, ((i, 1 if f else 0) for i, f in sorted(script.items())))


def failing_pass_starts(script: dict[int, bool], passes: Sequence[GroundPass]) -> list[float]:
    """Start times of the qualifying ``passes`` the script marks as failing."""
    return [p.start for i, p in enumerate(passes, start=1) if script.get(i, False)]
