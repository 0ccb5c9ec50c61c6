"""Mission scenario: payloads, access windows, sunlight, ground passes.

Scenarios live in a directory of plain files::

    scenario.ini   [scenario] epoch, background_a, pass_draw_a, soc_floor, initial_soc
    payloads.ini   one section per payload: power_a, reward, exclusion_group
    windows.csv    id,payload,start_s,end_s,reward
    sunlight.csv   start_s,end_s,infeed_a
    passes.csv     station,start_s,end_s,max_elevation_deg

All times are seconds after the scenario epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from leosched._config import InputError, parse_float, read_config, read_csv, read_section, write_csv, write_sections
from leosched.battery import LoadProfile

WINDOWS_HEADER = ("id", "payload", "start_s", "end_s", "reward")
SUNLIGHT_HEADER = ("start_s", "end_s", "infeed_a")
PASSES_HEADER = ("station", "start_s", "end_s", "max_elevation_deg")

DEFAULT_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)


class ScenarioError(InputError):
    """A scenario violates one of its invariants."""


@dataclass(frozen=True)
class PayloadDef:
    name: str
    power_draw: float
    reward_per_window: float
    exclusion_group: str | None = None

    def __post_init__(self) -> None:
        if not self.power_draw >= 0:
            raise ScenarioError(f"payload '{self.name}': power_draw must be >= 0")
        if not self.reward_per_window >= 0:
            raise ScenarioError(f"payload '{self.name}': reward must be >= 0")


@dataclass(frozen=True)
class TaskWindow:
    """An all-or-nothing payload opportunity ``[start, end)``.

    ``reward`` overrides the payload default when set.
    """

    id: str
    payload: str
    start: float
    end: float
    reward: float | None = None

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ScenarioError(f"window '{self.id}': end must be after start")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class SunlightEpisode:
    start: float
    end: float
    infeed: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ScenarioError(f"sunlight episode at {self.start}: end must be after start")
        if not self.infeed >= 0:
            raise ScenarioError(f"sunlight episode at {self.start}: infeed must be >= 0")


@dataclass(frozen=True)
class GroundPass:
    station: str
    start: float
    end: float
    max_elevation: float

    def __post_init__(self) -> None:
        if not self.start < self.end:
            raise ScenarioError(f"pass at {self.start}: end must be after start")
        if not 0 <= self.max_elevation <= 90:
            raise ScenarioError(f"pass at {self.start}: max elevation {self.max_elevation} outside [0, 90]")


@dataclass(frozen=True)
class Scenario:
    epoch: datetime
    payloads: Mapping[str, PayloadDef]
    windows: tuple[TaskWindow, ...] = ()
    sunlight: tuple[SunlightEpisode, ...] = ()
    passes: tuple[GroundPass, ...] = ()
    background_load: float = 0.0
    soc_floor: float = 0.0
    pass_draw: float = 0.0
    initial_soc: float = 1.0
    _window_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "payloads", dict(self.payloads))
        object.__setattr__(self, "windows", tuple(sorted(self.windows, key=lambda w: (w.start, w.id))))
        object.__setattr__(self, "sunlight", tuple(sorted(self.sunlight, key=lambda s: s.start)))
        object.__setattr__(self, "passes", tuple(sorted(self.passes, key=lambda p: p.start)))
        if not 0 <= self.soc_floor < 1:
            raise ScenarioError(f"soc_floor {self.soc_floor} outside [0, 1)")
        if not 0 <= self.initial_soc <= 1:
            raise ScenarioError(f"initial_soc {self.initial_soc} outside [0, 1]")
        for name, p in self.payloads.items():
            if name != p.name:
                raise ScenarioError(f"payload key '{name}' does not match its name '{p.name}'")
        seen: dict[str, TaskWindow] = {}
        for w in self.windows:
            if w.payload not in self.payloads:
                raise ScenarioError(f"window '{w.id}' references unknown payload '{w.payload}'")
            if w.id in seen:
                raise ScenarioError(f"duplicate window id '{w.id}'")
            seen[w.id] = w
        _check_disjoint(self.sunlight, "sunlight episodes")
        object.__setattr__(self, "_window_index", seen)

    def window(self, window_id: str) -> TaskWindow:
        return self._window_index[window_id]

    def has_window(self, window_id: str) -> bool:
        return window_id in self._window_index

    def reward_of(self, w: TaskWindow) -> float:
        return self.payloads[w.payload].reward_per_window if w.reward is None else w.reward

    def draw_of(self, w: TaskWindow) -> float:
        return self.payloads[w.payload].power_draw

    def group_of(self, w: TaskWindow) -> str | None:
        return self.payloads[w.payload].exclusion_group

    def base_profile(
        self, t0: float, t1: float, extra: Iterable[tuple[float, float, float]] = ()
    ) -> LoadProfile:
        """Net load of everything except payload tasks, plus ``extra`` draws.

        Background draw, per-pass UHF draw and extra ``(start, end, amps)``
        items add; sunlight infeed subtracts.
        """
        items = [(p.start, p.end, self.pass_draw) for p in self.passes if self.pass_draw]
        items += [(s.start, s.end, -s.infeed) for s in self.sunlight]
        items += list(extra)
        return piecewise_sum(items, t0, t1, self.background_load)

    def with_windows(self, windows: Iterable[TaskWindow]) -> "Scenario":
        return replace(self, windows=tuple(windows))


def _check_disjoint(items: Sequence, what: str) -> None:
    for prev, cur in zip(items, items[1:]):
        if cur.start < prev.end:
            raise ScenarioError(f"{what} overlap at t={cur.start}")


def piecewise_sum(items: Iterable[tuple[float, float, float]], t0: float, t1: float, base: float = 0.0) -> LoadProfile:
    """Sum of interval-valued terms on ``[t0, t1]`` as a :class:`LoadProfile`.

    Each interval's value is summed from scratch in a fixed order, so equal
    inputs always give bit-identical loads.
    """
    if t1 <= t0:
        return LoadProfile()
    clipped = sorted((max(s, t0), min(e, t1), v) for s, e, v in items if e > t0 and s < t1 and min(e, t1) > max(s, t0))
    cuts = {t0, t1}
    for s, e, _ in clipped:
        cuts.add(s)
        cuts.add(e)
    times = sorted(cuts)
    segs = []
    active: list[tuple[float, float, float]] = []
    j = 0
    for lo, hi in zip(times, times[1:]):
        while j < len(clipped) and clipped[j][0] <= lo:
            active.append(clipped[j])
            j += 1
        active = [it for it in active if it[1] > lo]
        total = base
        for it in active:
            total += it[2]
        segs.append((lo, hi, total))
    return LoadProfile(tuple(segs))


# ---------------------------------------------------------------------------
# window and pass operations
# ---------------------------------------------------------------------------


def partition_window(window: TaskWindow, chunk: float) -> list[TaskWindow]:
    """Split ``window`` into back-to-back pieces of exactly ``chunk`` seconds.

    Pieces start at the window start; a trailing remainder shorter than
    ``chunk`` is dropped. Child ids are ``<parent>.<n>`` with n from 1.
    """
    if not chunk > 0:
        raise ValueError(f"chunk must be positive, got {chunk}")
    # tolerate float noise in durations that are whole multiples
    count = int(math.floor(window.duration / chunk + 1e-9))
    return [
        TaskWindow(f"{window.id}.{i + 1}", window.payload, window.start + i * chunk, window.start + (i + 1) * chunk, window.reward)
        for i in range(count)
    ]


def filter_passes(passes: Iterable[GroundPass], min_elevation: float) -> list[GroundPass]:
    """Passes whose maximum elevation is strictly above ``min_elevation``."""
    return [p for p in passes if p.max_elevation > min_elevation]


MIN_PASS_GAP = 90 * 60.0
MAX_PASS_GAP = 15 * 3600.0


def synthesize_passes(
    orbit_period: float,
    visibility_fraction: float,
    horizon: float,
    seed: int,
    *,
    infeed: float = 1.0,
    sunlit_fraction: float = 0.6,
    station: str = "aalborg",
) -> tuple[list[GroundPass], list[SunlightEpisode]]:
    """Pseudo-orbital pass and sunlight pattern for self-contained scenarios.

    Sunlight covers ``sunlit_fraction`` of every orbit. Passes come in two
    clusters a day of two to four consecutive visible orbits, so consecutive
    passes are between 90 minutes and 15 hours apart. A pass lasts up to
    ``visibility_fraction`` of an orbit, longer for higher elevations.
    """
    if not orbit_period > 0:
        raise ValueError("orbit_period must be positive")
    if not 0 < visibility_fraction < 1:
        raise ValueError("visibility_fraction must be in (0, 1)")
    if horizon <= 0:
        return [], []
    rng = np.random.default_rng(seed)

    sunlight = []
    phase = float(rng.uniform(0.0, orbit_period))
    k = -1
    while True:
        start = phase + k * orbit_period
        if start >= horizon:
            break
        end = start + sunlit_fraction * orbit_period
        s, e = max(start, 0.0), min(end, horizon)
        if e > s:
            sunlight.append(SunlightEpisode(round(s, 3), round(e, 3), infeed))
        k += 1

    spacing = orbit_period * math.ceil(MIN_PASS_GAP / orbit_period)
    passes: list[GroundPass] = []
    cycle = 12 * 3600.0
    first = float(rng.uniform(0.0, cycle))
    n_cycles = int(horizon // cycle) + 2
    for c in range(-1, n_cycles):
        anchor = first + c * cycle + float(rng.uniform(-1800.0, 1800.0))
        size = int(rng.integers(2, 5))
        for i in range(size):
            el = round(float(rng.uniform(3.0, 89.0)), 2)
            dur = visibility_fraction * orbit_period * (0.5 + 0.5 * el / 90.0)
            start = anchor + i * spacing
            if passes and start - passes[-1].start < MIN_PASS_GAP:
                continue
            if start < 0.0 or start + dur > horizon:
                continue
            passes.append(GroundPass(station, round(start, 3), round(start + dur, 3), el))
    return passes, sunlight


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------


def _load_windows(path: Path) -> list[TaskWindow]:
    out = []
    for line, (wid, payload, start, end, reward) in read_csv(path, WINDOWS_HEADER):
        if not wid:
            raise InputError("id: empty", path, line, 1)
        s = parse_float(start, path, line, 3, "start_s")
        e = parse_float(end, path, line, 4, "end_s")
        r = parse_float(reward, path, line, 5, "reward") if reward else None
        if not s < e:
            raise ScenarioError(f"window '{wid}': end_s must be after start_s", path, line, 4)
        if r is not None and r < 0:
            raise ScenarioError(f"window '{wid}': reward must be >= 0", path, line, 5)
        out.append(TaskWindow(wid, payload, s, e, r))
    return out


def _load_sunlight(path: Path) -> list[SunlightEpisode]:
    out = []
    for line, (start, end, infeed) in read_csv(path, SUNLIGHT_HEADER):
        s = parse_float(start, path, line, 1, "start_s")
        e = parse_float(end, path, line, 2, "end_s")
        i = parse_float(infeed, path, line, 3, "infeed_a")
        if not s < e:
            raise ScenarioError(f"sunlight episode at {s}: end_s must be after start_s", path, line, 2)
        if i < 0:
            raise ScenarioError(f"sunlight episode at {s}: infeed_a must be >= 0", path, line, 3)
        out.append(SunlightEpisode(s, e, i))
    return out


def _load_passes(path: Path) -> list[GroundPass]:
    out = []
    for line, (station, start, end, el) in read_csv(path, PASSES_HEADER):
        s = parse_float(start, path, line, 2, "start_s")
        e = parse_float(end, path, line, 3, "end_s")
        m = parse_float(el, path, line, 4, "max_elevation_deg")
        if not s < e:
            raise ScenarioError(f"pass at {s}: end_s must be after start_s", path, line, 3)
        if not 0 <= m <= 90:
            raise ScenarioError(f"pass at {s}: max_elevation_deg {m} outside [0, 90]", path, line, 4)
        out.append(GroundPass(station, s, e, m))
    return out


def load_payloads(path: str | Path) -> dict[str, PayloadDef]:
    parser = read_config(path)
    payloads: dict[str, PayloadDef] = {}
    for section in parser.sections():
        raw = dict(parser.items(section))
        name = raw.pop("name", section)
        unknown = set(raw) - {"power_a", "reward", "exclusion_group"}
        if unknown:
            raise InputError(f"[{section}] has unknown key(s) {sorted(unknown)}", path)
        for key in ("power_a", "reward"):
            if key not in raw:
                raise InputError(f"[{section}] is missing key '{key}'", path)
        try:
            power, reward = float(raw["power_a"]), float(raw["reward"])
        except ValueError:
            raise InputError(f"[{section}] power_a and reward must be numbers", path) from None
        if name in payloads:
            raise ScenarioError(f"duplicate payload name '{name}'", path)
        payloads[name] = PayloadDef(name, power, reward, raw.get("exclusion_group") or None)
    return payloads


_HEADER_KEYS = ("epoch", "background_a", "pass_draw_a", "soc_floor", "initial_soc")


def _load_header(path: Path | None) -> dict:
    if path is None:
        return {}
    raw = read_section(path, "scenario", allowed=_HEADER_KEYS)
    out: dict = {}
    if "epoch" in raw:
        try:
            epoch = datetime.fromisoformat(raw["epoch"].replace("Z", "+00:00"))
        except ValueError:
            raise InputError(f"epoch '{raw['epoch']}' is not ISO-8601", path) from None
        out["epoch"] = epoch if epoch.tzinfo else epoch.replace(tzinfo=timezone.utc)
    names = {"background_a": "background_load", "pass_draw_a": "pass_draw", "soc_floor": "soc_floor", "initial_soc": "initial_soc"}
    for key, attr in names.items():
        if key in raw:
            try:
                out[attr] = float(raw[key])
            except ValueError:
                raise InputError(f"{key} '{raw[key]}' is not a number", path) from None
    return out


def load_scenario(
    windows_file: str | Path,
    sunlight_file: str | Path,
    passes_file: str | Path,
    payload_config: str | Path,
    header_file: str | Path | None = None,
) -> Scenario:
    """Read and validate a scenario from its CSV and config files."""
    payloads = load_payloads(payload_config)
    windows = _load_windows(Path(windows_file))
    for w in windows:
        if w.payload not in payloads:
            raise ScenarioError(f"window '{w.id}' references unknown payload '{w.payload}'", windows_file)
    header = _load_header(None if header_file is None else Path(header_file))
    try:
        return Scenario(
            epoch=header.get("epoch", DEFAULT_EPOCH),
            payloads=payloads,
            windows=tuple(windows),
            sunlight=tuple(_load_sunlight(Path(sunlight_file))),
            passes=tuple(_load_passes(Path(passes_file))),
            background_load=header.get("background_load", 0.0),
            soc_floor=header.get("soc_floor", 0.0),
            pass_draw=header.get("pass_draw", 0.0),
            initial_soc=header.get("initial_soc", 1.0),
        )
    except ScenarioError as exc:
        if exc.path is None:
            raise ScenarioError(exc.message, header_file or windows_file) from None
        raise


SCENARIO_FILES = {
    "header": "scenario.ini",
    "payloads": "payloads.ini",
    "windows": "windows.csv",
    "sunlight": "sunlight.csv",
    "passes": "passes.csv",
}


def load_scenario_dir(directory: str | Path) -> Scenario:
    d = Path(directory)
    if not d.is_dir():
        raise InputError("scenario directory not found", d)
    f = {k: d / v for k, v in SCENARIO_FILES.items()}
    return load_scenario(f["windows"], f["sunlight"], f["passes"], f["payloads"], f["header"])


def save_scenario(scenario: Scenario, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_sections(
        d / SCENARIO_FILES["header"],
        {
            "scenario": {
                "epoch": scenario.epoch.isoformat().replace("+00:00", "Z"),
                "background_a": scenario.background_load,
                "pass_draw_a": scenario.pass_draw,
                "soc_floor": scenario.soc_floor,
                "initial_soc": scenario.initial_soc,
            }
        },
    )
    sections = {}
    for p in scenario.payloads.values():
        entry = {"power_a": p.power_draw, "reward": p.reward_per_window}
        if p.exclusion_group:
            entry["exclusion_group"] = p.exclusion_group
        sections[p.name] = entry
    write_sections(d / SCENARIO_FILES["payloads"], sections)
    write_csv(d / SCENARIO_FILES["windows"], WINDOWS_HEADER, ((w.id, w.payload, w.start, w.end, w.reward) for w in scenario.windows))
    write_csv(d / SCENARIO_FILES["sunlight"], SUNLIGHT_HEADER, ((s.start, s.end, s.infeed) for s in scenario.sunlight))
    write_csv(d / SCENARIO_FILES["passes"], PASSES_HEADER, ((p.station, p.start, p.end, p.max_elevation) for p in scenario.passes))
