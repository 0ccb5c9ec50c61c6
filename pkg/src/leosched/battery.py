"""Kinetic battery model (KiBaM).

The battery holds its charge in two wells. The *available* well feeds the
load directly; the *bound* well exchanges charge with it by diffusion at a
rate proportional to the difference of the two fill levels::

    da/dt = -l(t) + 2v (c*b - (1-c)*a)
    db/dt =         2v ((1-c)*a - c*b)

where ``c`` is the fraction of capacity in the available well. For the
default equal split (c = 0.5) this is ``da/dt = -l + v(b - a)``,
``db/dt = v(a - b)``.

Loads are piecewise constant, so every segment is advanced with the exact
closed-form solution. Charging beyond a full available well is curtailed
(the excess infeed is discarded) and an empty available well raises
:class:`Depleted` carrying the instant it ran dry.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from leosched._config import InputError, read_section, write_sections

__all__ = [
    "BatteryParams",
    "KibamState",
    "LoadProfile",
    "Depleted",
    "step_constant",
    "evolve",
    "trajectory",
    "soc",
    "soc_to_voltage",
    "voltage_to_soc",
    "effective_current",
    "state_from_soc",
    "load_battery_params",
    "dump_battery_params",
]

# bisection resolution for depletion / full-well instants, seconds
ROOT_TOL_S = 1e-7
# a well counts as full within this many ampere-seconds
_FULL_TOL = 1e-9


@dataclass(frozen=True)
class BatteryParams:
    """Static battery description.

    Parameters
    ----------
    total_capacity : float
        Charge of both wells together when full, ampere-seconds.
    diffusion_rate : float
        Diffusion rate ``v`` between the wells, per second.
    well_split : float
        Fraction of capacity held by the available well.
    voltage_full, voltage_floor : float
        Pack voltage at 100 % SoC and at the operational floor.
    soc_at_floor : float
        SoC that corresponds to ``voltage_floor``.
    """

    total_capacity: float
    diffusion_rate: float
    well_split: float = 0.5
    voltage_full: float = 16.2
    voltage_floor: float = 14.8
    soc_at_floor: float = 0.55

    available_capacity: float = field(init=False, repr=False, compare=False)
    bound_capacity: float = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.total_capacity > 0:
            raise ValueError(f"total_capacity must be positive, got {self.total_capacity}")
        if not self.diffusion_rate >= 0:
            raise ValueError(f"diffusion_rate must be >= 0, got {self.diffusion_rate}")
        if not 0 < self.well_split < 1:
            raise ValueError(f"well_split must be in (0, 1), got {self.well_split}")
        if not self.voltage_floor < self.voltage_full:
            raise ValueError("voltage_floor must be below voltage_full")
        if not 0 <= self.soc_at_floor < 1:
            raise ValueError(f"soc_at_floor must be in [0, 1), got {self.soc_at_floor}")
        object.__setattr__(self, "available_capacity", self.well_split * self.total_capacity)
        object.__setattr__(self, "bound_capacity", (1.0 - self.well_split) * self.total_capacity)


@dataclass(frozen=True)
class KibamState:
    """Charge in both wells (ampere-seconds) at ``time`` seconds past the epoch."""

    available: float
    bound: float
    time: float = 0.0

    @property
    def total(self) -> float:
        return self.available + self.bound

    def check(self, params: BatteryParams, tol: float = 1e-6) -> None:
        """Raise ``ValueError`` if either well is outside its capacity."""
        if not -tol <= self.available <= params.available_capacity + tol:
            raise ValueError(f"available charge {self.available} outside [0, {params.available_capacity}]")
        if not -tol <= self.bound <= params.bound_capacity + tol:
            raise ValueError(f"bound charge {self.bound} outside [0, {params.bound_capacity}]")


class Depleted(Exception):
    """The available well ran empty at ``time``."""

    def __init__(self, time: float, state: KibamState | None = None) -> None:
        super().__init__(f"battery depleted at t={time:.3f} s")
        self.time = time
        self.state = state


@dataclass(frozen=True)
class LoadProfile:
    """Piecewise-constant net battery load.

    ``segments`` holds ``(start, end, net_load)`` triples in amperes, positive
    for discharge. Spans not covered by any segment carry zero load.
    """

    segments: tuple[tuple[float, float, float], ...] = ()

    def __post_init__(self) -> None:
        segs = tuple((float(s), float(e), float(l)) for s, e, l in self.segments)
        prev_end = -math.inf
        for s, e, _ in segs:
            if not s < e:
                raise ValueError(f"segment [{s}, {e}) is empty or reversed")
            if s < prev_end:
                raise ValueError(f"segment starting at {s} overlaps the previous one")
            prev_end = e
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "_starts", [s for s, _, _ in segs])

    @classmethod
    def from_steps(cls, times: Sequence[float], loads: Sequence[float]) -> "LoadProfile":
        """Build from breakpoints ``times`` (n+1 values) and ``loads`` (n values)."""
        if len(times) != len(loads) + 1:
            raise ValueError("need exactly one more breakpoint than loads")
        return cls(tuple((times[i], times[i + 1], loads[i]) for i in range(len(loads))))

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def span(self) -> tuple[float, float] | None:
        if not self.segments:
            return None
        return self.segments[0][0], self.segments[-1][1]

    def load_at(self, t: float) -> float:
        i = bisect.bisect_right(self._starts, t) - 1
        if i >= 0:
            s, e, load = self.segments[i]
            if s <= t < e:
                return load
        return 0.0

    def pieces(self, t_from: float, t_to: float) -> Iterator[tuple[float, float, float]]:
        """Yield ``(start, end, load)`` tiling ``[t_from, t_to]``; gaps yield load 0."""
        if t_to <= t_from:
            return
        t = t_from
        i = max(bisect.bisect_right(self._starts, t_from) - 1, 0)
        for s, e, load in self.segments[i:]:
            if e <= t:
                continue
            if s >= t_to:
                break
            if s > t:
                yield t, s, 0.0
                t = s
            stop = min(e, t_to)
            yield t, stop, load
            t = stop
            if t >= t_to:
                return
        if t < t_to:
            yield t, t_to, 0.0

    def integral(self, t_from: float, t_to: float) -> float:
        """Charge drawn over ``[t_from, t_to]``, ampere-seconds."""
        return sum((e - s) * load for s, e, load in self.pieces(t_from, t_to))

    def breakpoints(self) -> list[float]:
        pts: set[float] = set()
        for s, e, _ in self.segments:
            pts.add(s)
            pts.add(e)
        return sorted(pts)


# ---------------------------------------------------------------------------
# closed-form kernel
# ---------------------------------------------------------------------------


class _DepletedAfter(Exception):
    def __init__(self, tau: float) -> None:
        self.tau = tau


def _free(a0: float, b0: float, load: float, tau: float, c: float, k: float) -> tuple[float, float]:
    """Unconstrained solution after ``tau`` seconds of constant ``load``."""
    return _free_g(a0, b0, load, tau, c, k, -math.expm1(-k * tau))


def _free_g(a0: float, b0: float, load: float, tau: float, c: float, k: float, g: float) -> tuple[float, float]:
    # g = 1 - exp(-k tau), passed in so callers can share it across states
    s = a0 + b0 - load * tau
    y0 = (1.0 - c) * a0 - c * b0
    if k > 0.0:
        y = y0 * (1.0 - g) - (1.0 - c) * load * g / k
    else:
        y = y0 - (1.0 - c) * load * tau
    return c * s + y, (1.0 - c) * s - y


def _critical_tau(a0: float, b0: float, load: float, c: float, k: float) -> float | None:
    """Instant where da/dt changes sign, if any."""
    if k <= 0.0:
        return None
    y0 = (1.0 - c) * a0 - c * b0
    g = k * y0 + (1.0 - c) * load
    if g == 0.0:
        return None
    e = -c * load / g
    if 0.0 < e < 1.0:
        return -math.log(e) / k
    return None


def _earliest(a0: float, b0: float, load: float, dt: float, c: float, k: float, level: float, above: bool) -> float | None:
    """Earliest ``tau`` in ``[0, dt]`` where ``a(tau)`` is past ``level``.

    Past means strictly above when ``above`` is set, strictly below
    otherwise. ``a(tau)`` is a line plus an exponential, so it has at most
    one turning point; each monotone piece is probed at its ends and the
    crossing is found by Newton steps kept inside a shrinking bracket.
    """
    sign = 1.0 if above else -1.0
    tc = _critical_tau(a0, b0, load, c, k)
    cuts = [0.0, dt] if tc is None or not 0.0 < tc < dt else [0.0, tc, dt]
    for lo, hi in zip(cuts, cuts[1:]):
        if sign * (_free(a0, b0, load, lo, c, k)[0] - level) > 0.0:
            return lo
        if sign * (_free(a0, b0, load, hi, c, k)[0] - level) > 0.0:
            return _bracketed_root(a0, b0, load, lo, hi, c, k, level, sign)
    return None


def _bracketed_root(a0, b0, load, lo, hi, c, k, level, sign) -> float:
    """Smallest ``tau`` (to ``ROOT_TOL_S``) in a monotone piece with ``sign*(a - level) > 0``."""
    drift = (1.0 - c) * a0 - c * b0 + ((1.0 - c) * load / k if k > 0.0 else 0.0)

    def slope(tau: float) -> float:
        if k > 0.0:
            return -c * load - k * drift * math.exp(-k * tau)
        return -c * load

    x = 0.5 * (lo + hi)
    for _ in range(200):
        if hi - lo <= ROOT_TOL_S:
            break
        f = _free(a0, b0, load, x, c, k)[0] - level
        if sign * f > 0.0:
            hi = x
        else:
            lo = x
        d = slope(x)
        nx = x - f / d if d != 0.0 else 0.5 * (lo + hi)
        if abs(nx - x) < 0.25 * ROOT_TOL_S:
            # converged; close the bracket around the estimate
            for probe in (nx - 0.5 * ROOT_TOL_S, nx + 0.5 * ROOT_TOL_S):
                if lo < probe < hi:
                    if sign * (_free(a0, b0, load, probe, c, k)[0] - level) > 0.0:
                        hi = probe
                    else:
                        lo = probe
            nx = 0.5 * (lo + hi)
        elif not lo < nx < hi:
            nx = 0.5 * (lo + hi)
        x = nx
    return hi


def _advance(a0: float, b0: float, load: float, dt: float, p: BatteryParams) -> tuple[float, float]:
    """Advance the wells by ``dt`` under constant ``load``; raises ``_DepletedAfter``."""
    if dt <= 0.0:
        return a0, b0
    k = 2.0 * p.diffusion_rate
    return _advance_g(a0, b0, load, dt, p, p.well_split, k, -math.expm1(-k * dt))


def _advance_g(
    a0: float, b0: float, load: float, dt: float, p: BatteryParams, c: float, k: float, g: float
) -> tuple[float, float]:
    # Under a discharge the available charge is either monotone or rises then
    # falls, so its minimum over the step sits at an end; under infeed the
    # maximum does. End values therefore decide depletion and overfill.
    a, b = _free_g(a0, b0, load, dt, c, k, g)
    if load > 0.0:
        if a < 0.0:
            raise _DepletedAfter(_earliest(a0, b0, load, dt, c, k, 0.0, False) or 0.0)
        return a, b
    if load < 0.0:
        cap = p.available_capacity
        if a0 >= cap - _FULL_TOL and -load - k * ((1.0 - c) * a0 - c * b0) >= 0.0:
            return cap, _bound_while_full(b0, dt, p)
        if a > cap:
            tau = _earliest(a0, b0, load, dt, c, k, cap, True)
            if tau is None:  # rounding at the cap
                return cap, b
            b1 = _free(a0, b0, load, tau, c, k)[1]
            return cap, _bound_while_full(b1, dt - tau, p)
    return a, b


def _bound_while_full(b: float, tau: float, p: BatteryParams) -> float:
    # the full available well tops up the bound one; excess infeed is shed
    rate = 2.0 * p.diffusion_rate * p.well_split
    if rate <= 0.0 or tau <= 0.0:
        return b
    return p.bound_capacity - (p.bound_capacity - b) * math.exp(-rate * tau)


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def step_constant(state: KibamState, net_load: float, duration: float, params: BatteryParams) -> KibamState:
    """Advance ``state`` by ``duration`` seconds of constant ``net_load`` amperes.

    Raises
    ------
    Depleted
        If the available well empties before ``duration`` elapses.
    """
    if duration < 0:
        raise ValueError(f"duration must be >= 0, got {duration}")
    try:
        a, b = _advance(state.available, state.bound, net_load, duration, params)
    except _DepletedAfter as exc:
        t = state.time + exc.tau
        b_at = _free(state.available, state.bound, net_load, exc.tau, params.well_split, 2.0 * params.diffusion_rate)[1]
        raise Depleted(t, KibamState(0.0, b_at, t)) from None
    return KibamState(a, b, state.time + duration)


def evolve(state: KibamState, profile: LoadProfile, until: float, params: BatteryParams) -> KibamState:
    """Run ``state`` forward through ``profile`` up to ``until``."""
    if until < state.time:
        raise ValueError(f"until={until} precedes state time {state.time}")
    for s, e, load in profile.pieces(state.time, until):
        state = step_constant(KibamState(state.available, state.bound, s), load, e - s, params)
    return KibamState(state.available, state.bound, until)


def trajectory(
    state: KibamState,
    profile: LoadProfile,
    until: float,
    params: BatteryParams,
    step: float | None = None,
    extra_times: Iterable[float] = (),
) -> list[KibamState]:
    """States at every profile breakpoint in ``[state.time, until]``.

    With ``step`` the record is additionally sampled on a regular grid, and
    ``extra_times`` adds arbitrary instants. Depletion propagates.
    """
    t0 = state.time
    marks = {t0, until}
    for s, e, _ in profile.pieces(t0, until):
        marks.add(s)
        marks.add(e)
    if step:
        n = int(math.floor((until - t0) / step))
        marks.update(t0 + i * step for i in range(1, n + 1))
    marks.update(t for t in extra_times if t0 <= t <= until)
    out = [state]
    cur = state
    for t in sorted(marks):
        if t <= cur.time:
            continue
        cur = evolve(cur, profile, t, params)
        out.append(cur)
    return out


def soc(state: KibamState, params: BatteryParams) -> float:
    """Total state of charge ``(available + bound) / capacity``, clipped to [0, 1]."""
    return min(max(state.total / params.total_capacity, 0.0), 1.0)


def soc_to_voltage(soc_value: float, params: BatteryParams) -> float:
    """Affine SoC-to-voltage map through the floor and full-charge anchors."""
    w = (soc_value - params.soc_at_floor) / (1.0 - params.soc_at_floor)
    return params.voltage_floor * (1.0 - w) + params.voltage_full * w


def voltage_to_soc(voltage: float, params: BatteryParams) -> float:
    """Inverse of :func:`soc_to_voltage`, clipped to [0, 1]."""
    u = (voltage - params.voltage_floor) / (params.voltage_full - params.voltage_floor)
    value = params.soc_at_floor * (1.0 - u) + u
    return min(max(value, 0.0), 1.0)


def effective_current(state: KibamState, net_load: float, params: BatteryParams) -> float:
    """Battery current actually flowing when ``net_load`` is demanded.

    Equals ``net_load`` except while the available well is full and the
    infeed exceeds what diffusion can absorb; then only the absorbed part
    flows.
    """
    if net_load >= 0.0:
        return net_load
    c = params.well_split
    if state.available < params.available_capacity - _FULL_TOL:
        return net_load
    y = (1.0 - c) * state.available - c * state.bound
    absorbed = -2.0 * params.diffusion_rate * y
    return max(net_load, absorbed) if absorbed <= 0.0 else net_load


def state_from_soc(soc_value: float, params: BatteryParams, time: float = 0.0) -> KibamState:
    """Diffusion-equilibrium state (equal fill levels) holding ``soc_value``."""
    q = soc_value * params.total_capacity
    return KibamState(params.well_split * q, (1.0 - params.well_split) * q, time)


_PARAM_KEYS = {
    "capacity_as": "total_capacity",
    "diffusion_per_s": "diffusion_rate",
    "well_split": "well_split",
    "voltage_full": "voltage_full",
    "voltage_floor": "voltage_floor",
    "soc_at_floor": "soc_at_floor",
}


def load_battery_params(path: str | Path, section: str = "battery") -> BatteryParams:
    """Read :class:`BatteryParams` from the ``[battery]`` section of a key-value file."""
    raw = read_section(path, section, required=("capacity_as", "diffusion_per_s"), allowed=_PARAM_KEYS)
    try:
        return BatteryParams(**{_PARAM_KEYS[k]: float(v) for k, v in raw.items()})
    except ValueError as exc:
        raise InputError(f"[{section}]: {exc}", path) from None


def params_to_dict(params: BatteryParams) -> dict[str, float]:
    return {key: getattr(params, attr) for key, attr in _PARAM_KEYS.items()}


def dump_battery_params(params: BatteryParams, path: str | Path, section: str = "battery") -> None:
    write_sections(path, {section: params_to_dict(params)})
