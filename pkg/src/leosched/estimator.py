"""SoC estimation from downlinked telemetry.

The planner keeps a *belief* battery state that it propagates with the
scheduled load. When telemetry arrives, :func:`reconcile` compares it with
that belief along the telemetry span:

* the voltage-implied SoC of the last few samples, and
* a Coulomb count anchored at the voltage-implied SoC of the first few
  samples, integrating the difference between measured and scheduled
  current,

and blends the two residuals into one bounded correction of the total SoC.
Both residuals are zero when the telemetry is what the belief predicted.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from leosched._config import InputError, parse_float, read_csv, write_csv
from leosched.battery import (
    BatteryParams,
    KibamState,
    LoadProfile,
    effective_current,
    evolve,
    state_from_soc,
    trajectory,
    voltage_to_soc,
)

__all__ = [
    "EmptyLog",
    "TelemetrySample",
    "TelemetryLog",
    "SocEstimate",
    "coulomb_count",
    "reconcile",
    "propagate_to",
    "learn_parameters",
    "read_telemetry",
    "write_telemetry",
    "with_total",
]

TELEMETRY_HEADER = ("time_s", "voltage_v", "current_a")

DEFAULT_CAP = 0.08
DEFAULT_VOLTAGE_WEIGHT = 0.3
DEFAULT_WINDOW = 15
DEFAULT_MAX_GAP = 1800.0


class EmptyLog(ValueError):
    """Telemetry log without samples."""


@dataclass(frozen=True)
class TelemetrySample:
    time: float
    voltage: float
    current: float  # amperes, positive = discharge

    def __post_init__(self) -> None:
        if not self.voltage > 0:
            raise ValueError(f"sample at t={self.time}: voltage must be positive")


@dataclass(frozen=True)
class TelemetryLog:
    samples: tuple[TelemetrySample, ...] = ()
    cadence: float = 120.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        for a, b in zip(self.samples, self.samples[1:]):
            if not b.time > a.time:
                raise ValueError(f"telemetry times must increase strictly (t={b.time} after t={a.time})")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def start(self) -> float:
        self._need()
        return self.samples[0].time

    @property
    def end(self) -> float:
        self._need()
        return self.samples[-1].time

    def _need(self) -> None:
        if not self.samples:
            raise EmptyLog("telemetry log is empty")

    def since(self, t: float) -> "TelemetryLog":
        return TelemetryLog(tuple(s for s in self.samples if s.time >= t), self.cadence)


@dataclass(frozen=True)
class SocEstimate:
    time: float
    state: KibamState
    confidence_window: float = 0.0  # +- fraction of capacity
    correction_applied: float = 0.0  # signed fraction of capacity


def with_total(state: KibamState, total: float, params: BatteryParams) -> KibamState:
    """``state`` rescaled to ``total`` charge, keeping the ratio of the wells."""
    total = min(max(total, 0.0), params.total_capacity)
    if state.total > 0:
        a = state.available * total / state.total
    else:
        a = params.well_split * total
    a = min(a, params.available_capacity)
    b = total - a
    if b > params.bound_capacity:
        b = params.bound_capacity
        a = total - b
    return KibamState(a, b, state.time)


def _trapezoid(samples: Sequence[TelemetrySample]) -> float:
    q = 0.0
    for s0, s1 in zip(samples, samples[1:]):
        q += 0.5 * (s0.current + s1.current) * (s1.time - s0.time)
    return q


def coulomb_count(log: TelemetryLog, initial_soc: float, params: BatteryParams) -> SocEstimate:
    """SoC at the end of ``log`` by integrating its current from ``initial_soc``.

    The current is taken as linear between samples, gaps included. The split
    between the wells comes from running the battery model from an even
    fill under the interval-mean currents, which integrate to the same charge.
    """
    log._need()
    s = log.samples
    total = initial_soc * params.total_capacity - _trapezoid(s)
    start = state_from_soc(min(max(initial_soc, 0.0), 1.0), params, s[0].time)
    segs = [(a.time, b.time, 0.5 * (a.current + b.current)) for a, b in zip(s, s[1:])]
    end = evolve(start, LoadProfile(tuple(segs)), s[-1].time, params)
    return SocEstimate(s[-1].time, with_total(end, total, params))


def _belief_along(
    origin: KibamState,
    scheduled: LoadProfile,
    times: Sequence[float],
    params: BatteryParams,
) -> tuple[list[float], list[float]]:
    """Belief SoC and battery current at ``times``."""
    states = trajectory(origin, scheduled, times[-1], params, extra_times=times)
    by_time = {st.time: st for st in states}
    soc_pred, cur_pred = [], []
    for t in times:
        st = by_time[t]
        soc_pred.append(st.total / params.total_capacity)
        cur_pred.append(effective_current(st, scheduled.load_at(t), params))
    return soc_pred, cur_pred


def reconcile(
    predicted: KibamState,
    log: TelemetryLog,
    params: BatteryParams,
    cap: float = DEFAULT_CAP,
    *,
    origin: KibamState | None = None,
    scheduled: LoadProfile | None = None,
    weight_voltage: float = DEFAULT_VOLTAGE_WEIGHT,
    window: int = DEFAULT_WINDOW,
    max_gap: float = DEFAULT_MAX_GAP,
) -> SocEstimate:
    """Correct the belief ``predicted`` with telemetry.

    ``origin`` is the belief at or before the first sample and ``scheduled``
    the load the belief was propagated with; together they give the
    predicted SoC and current at every sample. Without them the belief is
    taken to be ``predicted`` throughout the log with zero current, which
    reduces to blending the latest voltage reading with a Coulomb count
    started from the earliest ones.

    Current is interpolated across gaps up to ``max_gap`` seconds; longer
    gaps are assumed to have followed the schedule. The correction is the
    blend ``weight_voltage * voltage + (1 - weight_voltage) * coulomb`` of
    the two residuals, clamped to ``+-cap``, and is applied to ``predicted``
    keeping the ratio of its wells.
    """
    log._need()
    if log.end > predicted.time + 1e-9:
        raise ValueError(f"telemetry ends at t={log.end}, after the prediction at t={predicted.time}")
    if not 0 <= weight_voltage <= 1:
        raise ValueError("weight_voltage must be in [0, 1]")
    if cap < 0:
        raise ValueError("cap must be >= 0")
    s = log.samples
    times = [x.time for x in s]
    if origin is None or scheduled is None:
        soc_pred = [predicted.total / params.total_capacity] * len(s)
        cur_pred = [0.0] * len(s)
    else:
        if origin.time > times[0] + 1e-9:
            raise ValueError(f"belief origin t={origin.time} is after the first sample t={times[0]}")
        soc_pred, cur_pred = _belief_along(origin, scheduled, times, params)

    resid = [voltage_to_soc(x.voltage, params) - p for x, p in zip(s, soc_pred)]
    k = max(1, min(window, len(s)))
    v_res = statistics.median(resid[-k:])
    anchor = statistics.median(resid[:k])
    # anchor sits at the median time of the first k samples; integrate from there
    t_anchor = times[(k - 1) // 2]
    drift = 0.0
    for j in range(len(s) - 1):
        if times[j] < t_anchor or times[j + 1] - times[j] > max_gap:
            continue
        d0 = s[j].current - cur_pred[j]
        d1 = s[j + 1].current - cur_pred[j + 1]
        drift += 0.5 * (d0 + d1) * (times[j + 1] - times[j])
    cc_res = anchor - drift / params.total_capacity

    raw = weight_voltage * v_res + (1.0 - weight_voltage) * cc_res
    corr = min(max(raw, -cap), cap)
    spread = abs(v_res - cc_res)
    tail = resid[-k:]
    mad = statistics.median(abs(r - v_res) for r in tail)
    state = with_total(predicted, predicted.total + corr * params.total_capacity, params)
    return SocEstimate(predicted.time, state, confidence_window=0.5 * spread + mad, correction_applied=corr)


def propagate_to(estimate: SocEstimate, scheduled: LoadProfile, t0: float, params: BatteryParams) -> KibamState:
    """Run the estimate forward to ``t0`` under the scheduled load."""
    if t0 < estimate.time:
        raise ValueError(f"t0={t0} precedes the estimate at t={estimate.time}")
    state = KibamState(estimate.state.available, estimate.state.bound, estimate.time)
    return evolve(state, scheduled, t0, params)


def learn_parameters(log: TelemetryLog, params: BatteryParams, scheduled: LoadProfile | None = None) -> BatteryParams:
    """Hook for fitting capacity and diffusion rate to telemetry.

    Not implemented: returns ``params`` unchanged, so only the initial SoC is
    corrected. Kept so that callers already route telemetry through it.
    """
    return params


def read_telemetry(path: str | Path, cadence: float = 120.0) -> TelemetryLog:
    out = []
    prev = None
    for line, (t, v, i) in read_csv(path, TELEMETRY_HEADER):
        time = parse_float(t, path, line, 1, "time_s")
        volt = parse_float(v, path, line, 2, "voltage_v")
        cur = parse_float(i, path, line, 3, "current_a")
        if volt <= 0:
            raise InputError("voltage_v must be positive", path, line, 2)
        if prev is not None and time <= prev:
            raise InputError("time_s must increase strictly", path, line, 1)
        prev = time
        out.append(TelemetrySample(time, volt, cur))
    return TelemetryLog(tuple(out), cadence)


def write_telemetry(path: str | Path, samples: Iterable[TelemetrySample]) -> None:
    write_csv(path, TELEMETRY_HEADER, ((s.time, s.voltage, s.current) for s in samples))
