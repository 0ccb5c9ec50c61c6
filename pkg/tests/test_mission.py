import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leosched._config import InputError
from leosched.mission import (
    GroundPass,
    PayloadDef,
    Scenario,
    ScenarioError,
    SunlightEpisode,
    TaskWindow,
    filter_passes,
    load_scenario,
    load_scenario_dir,
    partition_window,
    piecewise_sum,
    save_scenario,
    synthesize_passes,
)
from leosched.synthetic import ORBIT_PERIOD, gomx4_like, twoday_passes, twoday_scenario

TWODAY_ELEVATIONS = [85.85, 36.22, 28.42, 53.59, 44.67]


def twoday_shaped():
    return [GroundPass("aalborg", 1000.0 * i, 1000.0 * i + 600, el) for i, el in enumerate(TWODAY_ELEVATIONS)]


class TestPartition:
    def test_21_minute_episode_gives_three_chunks(self):
        kids = partition_window(TaskWindow("isl", "isl", 100.0, 100.0 + 21 * 60), 420.0)
        assert [(k.start, k.end) for k in kids] == [(100.0, 520.0), (520.0, 940.0), (940.0, 1360.0)]
        assert [k.id for k in kids] == ["isl.1", "isl.2", "isl.3"]

    def test_20_minute_window_drops_remainder(self):
        kids = partition_window(TaskWindow("isl", "isl", 0.0, 1200.0), 420.0)
        assert len(kids) == 2

    def test_short_window_is_empty(self):
        assert partition_window(TaskWindow("w", "isl", 0.0, 400.0), 420.0) == []

    def test_exact_multiple(self):
        kids = partition_window(TaskWindow("w", "isl", 0.0, 840.0), 420.0)
        assert [(k.start, k.end) for k in kids] == [(0.0, 420.0), (420.0, 840.0)]

    def test_chunk_must_be_positive(self):
        with pytest.raises(ValueError):
            partition_window(TaskWindow("w", "isl", 0.0, 840.0), 0.0)

    @settings(max_examples=200)
    @given(st.floats(0, 1e5), st.floats(1, 1e4), st.floats(1, 3000))
    def test_children_tile_a_prefix(self, start, duration, chunk):
        w = TaskWindow("p", "isl", start, start + duration, 4.0)
        kids = partition_window(w, chunk)
        assert len(kids) == int((w.end - w.start) / chunk + 1e-9)
        prev = w.start
        for k in kids:
            assert k.start == pytest.approx(prev)
            assert k.end - k.start == pytest.approx(chunk)
            assert k.reward == 4.0 and k.payload == "isl"
            prev = k.end
        assert prev <= w.end + 1e-6


class TestFilter:
    def test_threshold_25_keeps_all_five(self):
        assert [p.max_elevation for p in filter_passes(twoday_shaped(), 25.0)] == TWODAY_ELEVATIONS

    def test_threshold_50(self):
        assert [p.max_elevation for p in filter_passes(twoday_shaped(), 50.0)] == [85.85, 53.59]

    def test_empty(self):
        assert filter_passes([], 25.0) == []

    def test_strictly_greater(self):
        assert filter_passes([GroundPass("x", 0, 1, 25.0)], 25.0) == []

    def test_fixture_low_passes_dropped(self):
        kept = filter_passes(twoday_passes(), 25.0)
        assert [p.max_elevation for p in kept] == TWODAY_ELEVATIONS

    @given(st.lists(st.floats(0, 90), max_size=20), st.floats(0, 90))
    def test_idempotent_and_order_preserving(self, els, th):
        ps = [GroundPass("s", float(i), i + 0.5, e) for i, e in enumerate(els)]
        once = filter_passes(ps, th)
        assert filter_passes(once, th) == once
        assert [p.start for p in once] == sorted(p.start for p in once)


class TestSynthesize:
    def test_zero_horizon(self):
        assert synthesize_passes(5700.0, 0.1, 0.0, 1) == ([], [])

    @pytest.mark.parametrize("seed", range(10))
    def test_gaps_within_leo_cadence(self, seed):
        passes, sunlight = synthesize_passes(5700.0, 0.12, 48 * 3600.0, seed)
        assert len(passes) >= 4
        for a, b in zip(passes, passes[1:]):
            assert 90 * 60.0 <= b.start - a.start <= 15 * 3600.0

    def test_sunlight_fraction(self):
        _, sunlight = synthesize_passes(5700.0, 0.12, 48 * 3600.0, 3)
        inner = sunlight[1:-1]
        assert all(s.end - s.start == pytest.approx(0.6 * 5700.0, abs=0.01) for s in inner)
        for a, b in zip(inner, inner[1:]):
            assert b.start - a.start == pytest.approx(5700.0, abs=0.01)

    def test_deterministic(self):
        assert synthesize_passes(5700.0, 0.12, 86400.0, 42) == synthesize_passes(5700.0, 0.12, 86400.0, 42)
        assert synthesize_passes(5700.0, 0.12, 86400.0, 42) != synthesize_passes(5700.0, 0.12, 86400.0, 43)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            synthesize_passes(0.0, 0.1, 10.0, 1)
        with pytest.raises(ValueError):
            synthesize_passes(5700.0, 1.0, 10.0, 1)


class TestScenario:
    def test_unknown_payload(self):
        with pytest.raises(ScenarioError, match="unknown payload"):
            Scenario(twoday_scenario().epoch, {}, (TaskWindow("w", "cam", 0, 1),))

    def test_duplicate_id(self):
        pd = {"cam": PayloadDef("cam", 1.0, 1.0)}
        with pytest.raises(ScenarioError, match="duplicate"):
            Scenario(twoday_scenario().epoch, pd, (TaskWindow("w", "cam", 0, 1), TaskWindow("w", "cam", 2, 3)))

    def test_floor_range(self):
        with pytest.raises(ScenarioError):
            Scenario(twoday_scenario().epoch, {}, soc_floor=1.0)

    def test_reversed_window(self):
        with pytest.raises(ScenarioError, match="'w'"):
            TaskWindow("w", "cam", 5, 5)

    def test_elevation_range(self):
        with pytest.raises(ScenarioError):
            GroundPass("s", 0, 1, 91.0)

    def test_windows_sorted(self):
        pd = {"cam": PayloadDef("cam", 1.0, 1.0)}
        sc = Scenario(twoday_scenario().epoch, pd, (TaskWindow("b", "cam", 5, 6), TaskWindow("a", "cam", 0, 1)))
        assert [w.id for w in sc.windows] == ["a", "b"]

    def test_base_profile(self):
        pd = {"cam": PayloadDef("cam", 1.0, 1.0)}
        sc = Scenario(
            twoday_scenario().epoch,
            pd,
            sunlight=(SunlightEpisode(100, 300, 2.0),),
            passes=(GroundPass("s", 200, 400, 30.0),),
            background_load=0.5,
            pass_draw=0.25,
        )
        prof = sc.base_profile(0, 500, extra=[(350, 450, 1.0)])
        assert prof.segments == (
            (0.0, 100.0, 0.5),
            (100.0, 200.0, -1.5),
            (200.0, 300.0, -1.25),
            (300.0, 350.0, 0.75),
            (350.0, 400.0, 1.75),
            (400.0, 450.0, 1.5),
            (450.0, 500.0, 0.5),
        )

    def test_piecewise_sum_empty_span(self):
        assert len(piecewise_sum([(0, 1, 1.0)], 5.0, 5.0)) == 0


class TestFixture:
    def test_two_isl_episodes_per_orbit(self):
        sc = gomx4_like(horizon=48 * 3600.0)
        parents = {w.id.rsplit(".", 1)[0] for w in sc.windows if w.payload == "isl"}
        orbits = 48 * 3600.0 / ORBIT_PERIOD
        assert 2 * orbits - 3 <= len(parents) <= 2 * orbits + 2
        chunks = [w for w in sc.windows if w.payload == "isl"]
        assert all(w.duration == pytest.approx(420.0) for w in chunks)
        counts = {}
        for w in chunks:
            if 1800.0 < w.start < 46 * 3600.0:  # episodes cut by the span edges are shorter
                p = w.id.rsplit(".", 1)[0]
                counts[p] = counts.get(p, 0) + 1
        assert set(counts.values()) == {3}

    def test_passes_cluster(self):
        passes, _ = synthesize_passes(ORBIT_PERIOD, 0.12, 48 * 3600.0, 7)
        gaps = [b.start - a.start for a, b in zip(passes, passes[1:])]
        assert sum(g > 6 * 3600 for g in gaps) >= 2  # between clusters
        assert sum(g < 2 * 3600 for g in gaps) >= 2  # within clusters

    def test_hsl_and_isl_exclude(self):
        sc = twoday_scenario()
        assert sc.payloads["hsl"].exclusion_group == sc.payloads["isl"].exclusion_group == "sband"
        assert sc.payloads["hsl"].power_draw >= 10 * sc.payloads["adsb"].power_draw


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def files(tmp_path):
    w = write(tmp_path / "windows.csv", "id,payload,start_s,end_s,reward\nw1,cam,10,70,\nw0,cam,0,60,3.5\n")
    s = write(tmp_path / "sunlight.csv", "start_s,end_s,infeed_a\n0,3000,1.5\n")
    p = write(tmp_path / "passes.csv", "station,start_s,end_s,max_elevation_deg\naalborg,100,500,45.5\n")
    c = write(tmp_path / "payloads.ini", "[cam]\npower_a = 0.6\nreward = 5\n\n[isl]\npower_a = 1.4\nreward = 3\nexclusion_group = sband\n")
    return w, s, p, c


class TestLoad:
    def test_load(self, files):
        sc = load_scenario(*files)
        assert [w.id for w in sc.windows] == ["w0", "w1"]
        assert sc.reward_of(sc.window("w0")) == 3.5
        assert sc.reward_of(sc.window("w1")) == 5.0
        assert sc.payloads["isl"].exclusion_group == "sband"
        assert sc.passes[0].max_elevation == 45.5

    def test_empty_windows_file(self, files):
        w, s, p, c = files
        write(w, "id,payload,start_s,end_s,reward\n")
        assert load_scenario(w, s, p, c).windows == ()

    def test_end_before_start_names_window(self, files):
        w, s, p, c = files
        write(w, "id,payload,start_s,end_s,reward\nbad-one,cam,70,10,\n")
        with pytest.raises(ScenarioError, match="bad-one") as exc:
            load_scenario(w, s, p, c)
        assert exc.value.line == 2

    def test_parse_error_has_location(self, files):
        w, s, p, c = files
        write(w, "id,payload,start_s,end_s,reward\nw0,cam,0,60,\nw1,cam,1O,70,\n")
        with pytest.raises(InputError) as exc:
            load_scenario(w, s, p, c)
        assert (exc.value.line, exc.value.column) == (3, 3)
        assert str(exc.value).startswith(f"{w}:3:3:")

    def test_bad_header(self, files):
        w, s, p, c = files
        write(s, "start,end,infeed\n0,1,1\n")
        with pytest.raises(InputError) as exc:
            load_scenario(w, s, p, c)
        assert exc.value.line == 1

    def test_unknown_payload_in_csv(self, files):
        w, s, p, c = files
        write(w, "id,payload,start_s,end_s,reward\nw0,radar,0,60,\n")
        with pytest.raises(ScenarioError, match="radar"):
            load_scenario(w, s, p, c)

    def test_missing_file(self, files, tmp_path):
        w, s, p, c = files
        with pytest.raises(InputError, match="not found"):
            load_scenario(tmp_path / "nope.csv", s, p, c)

    def test_bad_payload_config(self, files):
        w, s, p, c = files
        write(c, "[cam]\npower_a = lots\nreward = 5\n")
        with pytest.raises(InputError):
            load_scenario(w, s, p, c)

    @pytest.mark.parametrize("seed", [1, 7])
    def test_round_trip(self, tmp_path, seed):
        sc = twoday_scenario(seed)
        save_scenario(sc, tmp_path / "sc")
        back = load_scenario_dir(tmp_path / "sc")
        assert back == sc
        save_scenario(back, tmp_path / "again")
        for name in ("windows.csv", "sunlight.csv", "passes.csv", "payloads.ini", "scenario.ini"):
            assert (tmp_path / "sc" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_missing_dir(self, tmp_path):
        with pytest.raises(InputError):
            load_scenario_dir(tmp_path / "absent")
