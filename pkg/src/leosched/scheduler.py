"""Energy-aware task selection by dynamic programming over KiBaM states.

Candidate windows are visited in start order. At every event time (window
starts and ends, sunlight edges, pass edges) each partial schedule, a
*label*, is branched on the windows that open there, and all labels are
advanced together with the closed-form battery kernel. A label dies when
the available well runs dry or the total charge falls below the SoC floor.

Labels are grouped by the set of windows still running, since two labels
with different running loads have different futures. Within a group a label
is dropped when another has at least its reward and at least its charge in
both wells. Ties in reward are broken towards the lexicographically greatest
selection (earliest windows first), which makes the result deterministic
and equal to an exhaustive search under the same tie rule.
"""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from leosched._config import InputError, parse_float, read_csv, write_csv
from leosched.battery import (
    BatteryParams,
    Depleted,
    KibamState,
    LoadProfile,
    _advance_g,
    _DepletedAfter,
    soc_to_voltage,
    step_constant,
    trajectory,
)
from leosched.mission import Scenario, TaskWindow

__all__ = [
    "Infeasible",
    "ScheduledTask",
    "Schedule",
    "DpLabel",
    "Violation",
    "dominates",
    "insert_pruned",
    "plan",
    "plan_monolithic",
    "induced_profile",
    "replay",
    "write_schedule",
    "read_schedule",
    "write_trace",
    "read_trace",
]

# slack when comparing well contents of two labels, ampere-seconds
STATE_EPS = 1e-9
# slack on the SoC floor when replaying a finished schedule
REPLAY_TOL = 1e-6

SCHEDULE_HEADER = ("window_id", "payload", "start_s", "end_s", "reward")
TRACE_HEADER = ("time_s", "available_as", "bound_as", "soc", "voltage_v")


class Infeasible(Exception):
    """No selection, not even the empty one, keeps the battery above the floor."""

    def __init__(self, reason: str, time: float) -> None:
        super().__init__(f"infeasible: {reason} at t={time:.1f} s")
        self.reason = reason
        self.time = time


@dataclass(frozen=True)
class ScheduledTask:
    window_id: str
    payload: str
    start: float
    end: float
    reward: float

    @classmethod
    def of(cls, scenario: Scenario, w: TaskWindow) -> "ScheduledTask":
        return cls(w.id, w.payload, w.start, w.end, scenario.reward_of(w))


@dataclass(frozen=True)
class Schedule:
    """Selected tasks over ``horizon`` and the predicted battery trace."""

    tasks: tuple[ScheduledTask, ...]
    total_reward: float
    horizon: tuple[float, float]
    trace: tuple[KibamState, ...] = ()
    heuristic: bool = False
    stats: dict = field(default_factory=dict, compare=False)

    @property
    def window_ids(self) -> tuple[str, ...]:
        return tuple(t.window_id for t in self.tasks)


@dataclass(frozen=True)
class DpLabel:
    """A partial schedule: reward so far, battery state, chosen windows."""

    reward: float
    state: KibamState
    chosen: frozenset = frozenset()


def dominates(l1: DpLabel, l2: DpLabel) -> bool:
    """``l1`` is at least as good as ``l2`` everywhere and better somewhere."""
    r1, a1, b1 = l1.reward, l1.state.available, l1.state.bound
    r2, a2, b2 = l2.reward, l2.state.available, l2.state.bound
    return r1 >= r2 and a1 >= a2 and b1 >= b2 and (r1 > r2 or a1 > a2 or b1 > b2)


def insert_pruned(antichain: Sequence[DpLabel], label: DpLabel) -> list[DpLabel]:
    """Add ``label`` to a set of mutually non-dominated labels.

    The label is rejected if a member dominates it or equals it in reward and
    state; otherwise members it dominates are removed.
    """
    for m in antichain:
        if dominates(m, label) or (
            m.reward == label.reward and m.state.available == label.state.available and m.state.bound == label.state.bound
        ):
            return list(antichain)
    return [m for m in antichain if not dominates(label, m)] + [label]


@dataclass(frozen=True)
class Violation:
    kind: str  # "depleted" or "soc_floor"
    time: float


def replay(
    state: KibamState,
    profile: LoadProfile,
    until: float,
    params: BatteryParams,
    floor_soc: float,
    tol: float = REPLAY_TOL,
) -> Violation | None:
    """First depletion or floor crossing when ``profile`` runs from ``state``."""
    floor = floor_soc * params.total_capacity
    if state.total < floor - tol:
        return Violation("soc_floor", state.time)
    for s, e, load in profile.pieces(state.time, until):
        # total charge is linear in time unless the well is full, and a full
        # well only happens while charging
        t_cross = s + (state.total - floor) / load if load > 0 else math.inf
        try:
            nxt = step_constant(state, load, e - s, params)
        except Depleted as exc:
            if t_cross < exc.time and state.total - load * (exc.time - s) < floor - tol:
                return Violation("soc_floor", max(t_cross, s))
            return Violation("depleted", exc.time)
        if nxt.total < floor - tol:
            return Violation("soc_floor", min(max(t_cross, s), e))
        state = nxt
    return None


def induced_profile(
    scenario: Scenario,
    tasks: Iterable[ScheduledTask | TaskWindow],
    t0: float,
    t1: float,
    committed: Iterable[ScheduledTask] = (),
) -> LoadProfile:
    """Net battery load on ``[t0, t1]`` when ``tasks`` and ``committed`` run."""
    extra = [(t.start, t.end, scenario.payloads[t.payload].power_draw) for t in (*committed, *tasks)]
    return scenario.base_profile(t0, t1, extra)


def _committed_items(scenario: Scenario, committed: Sequence[ScheduledTask]) -> list[tuple[float, float, float]]:
    return [(t.start, t.end, scenario.payloads[t.payload].power_draw) for t in committed]


def _prune(labels: list[tuple], eps: float = STATE_EPS) -> list[tuple]:
    """Drop dominated labels within each running-set group.

    Labels are ``(reward, a, b, chosen, running)``. A label is dropped when
    another in its group has reward and both wells at least as large and is
    either strictly richer or wins the selection tie-break. Sweeping in
    decreasing (reward, chosen) order, a 2-D staircase of kept ``(a, b)``
    answers each dominance query in logarithmic time.
    """
    groups: dict[int, list[tuple]] = defaultdict(list)
    for lab in labels:
        groups[lab[4]].append(lab)
    out: list[tuple] = []
    for key in sorted(groups):
        group = groups[key]
        if len(group) == 1:
            out.append(group[0])
            continue
        group.sort(key=lambda l: (-l[0], -l[3]))
        sa: list[float] = []  # staircase, a ascending
        sb: list[float] = []  # matching b, strictly descending
        for lab in group:
            a, b = lab[1], lab[2]
            i = bisect.bisect_left(sa, a - eps)
            if i < len(sa) and sb[i] >= b - eps:
                continue
            out.append(lab)
            p = bisect.bisect_right(sa, a)
            q = p
            while q > 0 and sb[q - 1] <= b:
                q -= 1
            sa[q:p] = [a]
            sb[q:p] = [b]
    return out


class _Problem:
    """Candidates, event grid and loads of one planning call."""

    def __init__(
        self,
        scenario: Scenario,
        initial: KibamState,
        t0: float,
        t1: float,
        params: BatteryParams,
        floor: float,
        committed: tuple[ScheduledTask, ...],
    ) -> None:
        self.initial = initial
        self.params = params
        self.floor = floor
        self.t1 = t1
        cands = [w for w in scenario.windows if w.start >= t0 and w.end <= t1]
        n = len(cands)
        self.cands = cands
        self.n = n
        self.bit = bit = [1 << (n - 1 - i) for i in range(n)]
        self.draw = [scenario.draw_of(w) for w in cands]
        self.reward = [scenario.reward_of(w) for w in cands]

        # exclusion: same group, overlapping in time
        self.conflict = conflict = [0] * n
        self.blocked = blocked = [False] * n
        for i, w in enumerate(cands):
            g = scenario.group_of(w)
            if g is None:
                continue
            for j in range(n):
                v = cands[j]
                if j != i and scenario.group_of(v) == g and v.start < w.end and w.start < v.end:
                    conflict[i] |= bit[j]
            for t in committed:
                if scenario.payloads[t.payload].exclusion_group == g and t.start < w.end and w.start < t.end:
                    blocked[i] = True

        self.base = base = scenario.base_profile(t0, t1, _committed_items(scenario, committed))
        times = set(base.breakpoints()) | {t0, t1}
        self.starts_at = defaultdict(list)
        self.ends_at = defaultdict(int)
        for i, w in enumerate(cands):
            times.add(w.start)
            times.add(w.end)
            self.starts_at[w.start].append(i)
            self.ends_at[w.end] |= bit[i]
        self.epochs = epochs = sorted(times)
        self.base_loads = [base.load_at(t) for t in epochs[:-1]]
        # base-load charge still to come after each epoch
        tail = [0.0] * len(epochs)
        for j in range(len(epochs) - 2, -1, -1):
            tail[j] = tail[j + 1] + self.base_loads[j] * (epochs[j + 1] - epochs[j])
        self.base_tail = tail
        self._draw_cache: dict[int, float] = {0: 0.0}
        self._charge_cache: dict[tuple[int, float], float] = {}
        self._bounds: dict[int, tuple[list[float], list[float], list[float]]] = {}

    def running_draw(self, mask: int) -> float:
        d = self._draw_cache.get(mask)
        if d is None:
            d = 0.0
            for i in range(self.n):
                if mask & self.bit[i]:
                    d += self.draw[i]
            self._draw_cache[mask] = d
        return d

    def running_charge(self, mask: int, t: float) -> float:
        """Charge the running windows in ``mask`` still draw after ``t``."""
        key = (mask, t)
        q = self._charge_cache.get(key)
        if q is None:
            q = 0.0
            for i in range(self.n):
                if mask & self.bit[i]:
                    q += self.draw[i] * (self.cands[i].end - t)
            self._charge_cache[key] = q
        return q

    def knapsack(self, j: int):
        """Greedy order of the windows starting at or after epoch ``j``.

        Returns cumulative charge, cumulative reward and reward per charge,
        for the fractional-knapsack bound on what a label can still earn.
        """
        got = self._bounds.get(j)
        if got is None:
            t = self.epochs[j]
            items = []
            for i, w in enumerate(self.cands):
                if w.start >= t and not self.blocked[i]:
                    q = self.draw[i] * w.duration
                    items.append((self.reward[i] / q if q > 0 else math.inf, q, self.reward[i]))
            items.sort(key=lambda x: -x[0])
            cq, cr, ratio = [], [], []
            sq = sr = 0.0
            for r_per_q, q, r in items:
                sq += q
                sr += r
                cq.append(sq)
                cr.append(sr)
                ratio.append(r_per_q)
            got = (cq, cr, ratio)
            self._bounds[j] = got
        return got

    def upper_bound(self, j: int, budget: float) -> float:
        """Most reward the windows from epoch ``j`` on can add within ``budget`` charge."""
        cq, cr, ratio = self.knapsack(j)
        if not cq:
            return 0.0
        m = bisect.bisect_right(cq, budget)
        if m >= len(cq):
            return cr[-1]
        done_q = cq[m - 1] if m else 0.0
        done_r = cr[m - 1] if m else 0.0
        return done_r + (budget - done_q) * ratio[m]


def _search(pb: _Problem, prune: bool, beam: int | None, incumbent: float | None) -> tuple[tuple, dict]:
    """Label sweep over the event grid; returns the best final label and stats.

    With ``incumbent`` set (the reward of some feasible selection), labels
    that cannot reach it even with a relaxed energy budget are dropped.
    """
    params = pb.params
    c = params.well_split
    k = 2.0 * params.diffusion_rate
    floor = pb.floor
    epochs = pb.epochs
    bit, reward, conflict, blocked = pb.bit, pb.reward, pb.conflict, pb.blocked
    running_draw = pb.running_draw
    labels: list[tuple] = [(0.0, pb.initial.available, pb.initial.bound, 0, 0)]
    stored = 0
    widest = 1
    heuristic = False
    cut = None if incumbent is None else incumbent - 1e-9 * max(1.0, abs(incumbent))

    for j, t in enumerate(epochs[:-1]):
        done = pb.ends_at.get(t, 0)
        if done:
            labels = [(r, a, b, ch, run & ~done) for r, a, b, ch, run in labels]
        for i in pb.starts_at.get(t, ()):
            if blocked[i]:
                continue
            grown = []
            for lab in labels:
                if not lab[4] & conflict[i]:
                    grown.append((lab[0] + reward[i], lab[1], lab[2], lab[3] | bit[i], lab[4] | bit[i]))
            labels.extend(grown)

        t_next = epochs[j + 1]
        dt = t_next - t
        base_load = pb.base_loads[j]
        g = -math.expm1(-k * dt)
        nxt = []
        for r, a, b, ch, run in labels:
            try:
                a2, b2 = _advance_g(a, b, base_load + running_draw(run), dt, params, c, k, g)
            except _DepletedAfter:
                continue
            if a2 + b2 < floor:
                continue
            nxt.append((r, a2, b2, ch, run))
        if not nxt:
            return None, {"failed_at": t_next}
        if cut is not None:
            # clamping at a full well only loses charge, so this budget is an
            # upper bound on what the remaining windows may draw
            tail = pb.base_tail[j + 1]
            cq, cr, ratio = pb.knapsack(j + 1)
            total_r = cr[-1] if cr else 0.0
            running_charge = pb.running_charge
            kept = []
            for lab in nxt:
                budget = lab[1] + lab[2] - floor - tail
                if lab[4]:
                    budget -= running_charge(lab[4], t_next)
                if budget < 0.0:
                    continue
                m = bisect.bisect_right(cq, budget)
                if m >= len(cq):
                    ub = total_r
                else:
                    ub = (cr[m - 1] if m else 0.0) + (budget - (cq[m - 1] if m else 0.0)) * ratio[m]
                if lab[0] + ub < cut:
                    continue
                kept.append(lab)
            nxt = kept
            if not nxt:
                return None, {"failed_at": t_next}
        labels = _prune(nxt) if prune else nxt
        if beam is not None and len(labels) > beam:
            labels = _narrow(pb, j + 1, labels, beam)
            heuristic = True
        stored += len(labels)
        widest = max(widest, len(labels))

    best = max(labels, key=lambda l: (l[0], l[3]))
    return best, {"labels_stored": stored, "max_labels": widest, "epochs": len(epochs), "candidates": pb.n, "heuristic": heuristic}


def _narrow(pb: _Problem, j: int, labels: list[tuple], width: int) -> list[tuple]:
    """Keep the ``width`` most promising labels, always including the fullest.

    The fullest label has at least the charge of skipping everything from
    here, so a narrowed sweep stays feasible whenever the empty selection is.
    """
    t = pb.epochs[j]
    tail = pb.base_tail[j]

    def promise(lab: tuple) -> float:
        budget = lab[1] + lab[2] - pb.floor - tail - (pb.running_charge(lab[4], t) if lab[4] else 0.0)
        return lab[0] + (pb.upper_bound(j, budget) if budget > 0.0 else 0.0)

    fullest = max(labels, key=lambda l: (l[1] + l[2], l[0], l[3]))
    ranked = sorted(labels, key=lambda l: (-promise(l), -l[0], -l[3]))[:width]
    if fullest not in ranked:
        ranked[-1] = fullest
    return ranked


# width of the quick pass that seeds the reward bound
INCUMBENT_BEAM = 32


def plan(
    scenario: Scenario,
    initial: KibamState,
    horizon: tuple[float, float],
    params: BatteryParams,
    *,
    soc_floor: float | None = None,
    committed: Sequence[ScheduledTask] = (),
    prune: bool = True,
    bound: bool = True,
    beam: int | None = None,
    trace_step: float | None = 60.0,
) -> Schedule:
    """Highest-reward set of windows inside ``horizon`` that keeps the floor.

    ``initial`` is the battery state at ``horizon[0]``. ``committed`` tasks
    (already on board and running into the horizon) load the battery and
    block their exclusion group but earn nothing here.

    ``prune=False`` keeps every label, for checking the pruning rule, and
    also disables bounding. ``bound`` drops labels whose reward plus a
    relaxed estimate of what they can still earn falls short of a feasible
    selection found by a quick narrow pass; this never changes the result.
    ``beam`` caps the labels kept per event; a capped run may miss the
    optimum and is marked ``heuristic``.
    """
    t0, t1 = float(horizon[0]), float(horizon[1])
    if not t1 > t0:
        raise ValueError(f"empty horizon [{t0}, {t1}]")
    if abs(initial.time - t0) > 1e-9:
        raise ValueError(f"initial state is at t={initial.time}, horizon starts at {t0}")
    floor_soc = scenario.soc_floor if soc_floor is None else soc_floor
    floor = floor_soc * params.total_capacity
    if initial.total < floor:
        raise Infeasible("initial SoC below floor", t0)
    initial.check(params)
    committed = tuple(committed)
    pb = _Problem(scenario, initial, t0, t1, params, floor, committed)

    incumbent = None
    if prune and bound and beam is None and pb.n > 0:
        seed, _ = _search(pb, True, INCUMBENT_BEAM, None)
        incumbent = None if seed is None else seed[0]
    best, stats = _search(pb, prune, beam, incumbent)
    if best is None:
        v = replay(initial, pb.base, t1, params, floor_soc, tol=0.0)
        if v is not None:
            raise Infeasible("even the empty selection violates the floor", v.time)
        raise Infeasible("no selection survived", stats["failed_at"])

    chosen = [pb.cands[i] for i in range(pb.n) if best[3] & pb.bit[i]]
    tasks = tuple(ScheduledTask.of(scenario, w) for w in chosen)
    total = 0.0
    for tk in tasks:
        total += tk.reward
    trace: tuple[KibamState, ...] = ()
    if trace_step is not None:
        prof = induced_profile(scenario, tasks, t0, t1, committed)
        trace = tuple(trajectory(initial, prof, t1, params, step=trace_step))
    heuristic = stats.pop("heuristic")
    return Schedule(tasks=tasks, total_reward=total, horizon=(t0, t1), trace=trace, heuristic=heuristic, stats=stats)


def plan_monolithic(
    scenario: Scenario,
    initial: KibamState,
    horizon: tuple[float, float],
    params: BatteryParams,
    **kwargs,
) -> Schedule:
    """One plan over the whole ``horizon``, for comparison with receding plans."""
    return plan(scenario, initial, horizon, params, **kwargs)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_schedule(path: str | Path, tasks: Iterable[ScheduledTask]) -> None:
    write_csv(path, SCHEDULE_HEADER, ((t.window_id, t.payload, t.start, t.end, t.reward) for t in tasks))


def read_schedule(path: str | Path) -> list[ScheduledTask]:
    out = []
    for line, (wid, payload, start, end, rew) in read_csv(path, SCHEDULE_HEADER):
        s = parse_float(start, path, line, 3, "start_s")
        e = parse_float(end, path, line, 4, "end_s")
        if not s < e:
            raise InputError(f"task '{wid}': end_s must be after start_s", path, line, 4)
        out.append(ScheduledTask(wid, payload, s, e, parse_float(rew, path, line, 5, "reward")))
    return out


def write_trace(path: str | Path, trace: Iterable[KibamState], params: BatteryParams) -> None:
    rows = []
    for st in trace:
        s = st.total / params.total_capacity
        rows.append((st.time, st.available, st.bound, s, soc_to_voltage(s, params)))
    write_csv(path, TRACE_HEADER, rows)


def read_trace(path: str | Path) -> list[KibamState]:
    """States from a trace file; the derived SoC and voltage columns are ignored."""
    out = []
    for line, (t, a, b, _, _) in read_csv(path, TRACE_HEADER):
        out.append(KibamState(parse_float(a, path, line, 2, "available_as"), parse_float(b, path, line, 3, "bound_as"), parse_float(t, path, line, 1, "time_s")))
    return out
