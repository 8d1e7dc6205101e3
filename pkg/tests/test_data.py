import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atfm.data import (
    ExternalRecord,
    ExternalVocab,
    FlowSeries,
    GridSpec,
    TripRecord,
    build_flow_series,
    encode_external,
    enumerate_samples,
    ingest_trips,
    locate_cell,
    prepare,
    read_external_csv,
    read_trips_csv,
    split_samples,
    synth_generate,
    SynthConfig,
)
from atfm.data.cache import load_series, save_series, sidecar_path
from atfm.data.samples import require_externals
from atfm.data.timeparse import parse_time
from atfm.errors import DataError, SampleError

import oracles

BOX = (39.9, 116.3, 40.0, 116.5)


def random_trips(rng, count, epoch, span):
    t0 = epoch + rng.uniform(-600, span + 600, count)
    t1 = t0 + rng.uniform(0, 3600, count)
    lat = rng.uniform(39.88, 40.02, (count, 2))
    lon = rng.uniform(116.28, 116.52, (count, 2))
    return [TripRecord(a, la[0], lo[0], b, la[1], lo[1]) for a, b, la, lo in zip(t0, t1, lat, lon)]


def test_grid_cell_examples():
    g = GridSpec(*BOX, rows=4, cols=4)
    assert locate_cell(39.9, 116.3, g) == (0, 0)
    assert locate_cell(40.0, 116.5, g) == (3, 3)
    assert locate_cell(39.925, 116.35, g) == (1, 1)
    assert locate_cell(39.95, 116.4, g) == (2, 2)
    assert locate_cell(40.01, 116.4, g) is None
    assert locate_cell(float("nan"), 116.4, g) is None


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(40.0, 116.3, 39.9, 116.5, 4, 4)
    with pytest.raises(ValueError):
        GridSpec(*BOX, rows=0, cols=4)
    with pytest.raises(ValueError):
        GridSpec(*BOX, rows=4, cols=4, interval_seconds=7)


def test_counting_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    epoch, interval, count = 1_700_000_000, 1800, 96
    trips = random_trips(rng, 10_000, epoch, count * interval)
    g = GridSpec(*BOX, rows=5, cols=7, interval_seconds=interval, epoch=epoch, num_intervals=count)
    series = build_flow_series(trips, g)
    raw = [(t.pickup_time, t.pickup_lat, t.pickup_lon, t.dropoff_time, t.dropoff_lat, t.dropoff_lon) for t in trips]
    want = oracles.count_flows(raw, *BOX, 5, 7, epoch, interval, count)
    np.testing.assert_array_equal(series.flows, want)


def test_counting_conservation():
    rng = np.random.default_rng(1)
    epoch = 1_700_000_000
    trips = random_trips(rng, 2000, epoch, 86400)
    g = GridSpec(*BOX, rows=3, cols=3, epoch=epoch, num_intervals=48)
    series, summary = ingest_trips(trips, g)
    t_end = epoch + 48 * 1800

    def inside(t, la, lo):
        return BOX[0] <= la <= BOX[2] and BOX[1] <= lo <= BOX[3] and epoch <= t < t_end

    assert series.flows[:, 0].sum() == sum(inside(t.dropoff_time, t.dropoff_lat, t.dropoff_lon) for t in trips)
    assert series.flows[:, 1].sum() == sum(inside(t.pickup_time, t.pickup_lat, t.pickup_lon) for t in trips)
    assert summary.kept == 2000


def test_single_trip_example():
    g = GridSpec(*BOX, rows=2, cols=2, epoch=0, num_intervals=4)
    series = build_flow_series([TripRecord(100, 39.91, 116.31, 1900, 39.99, 116.49)], g)
    assert series.flows[0, 1, 0, 0] == 1 and series.flows[1, 0, 1, 1] == 1
    assert series.flows.sum() == 2


def test_empty_trips_give_one_zero_day():
    g = GridSpec(*BOX, rows=2, cols=2)
    series, summary = ingest_trips([], g)
    assert len(series) == 48 and series.flows.sum() == 0 and summary.kept == 0


def test_malformed_rows_reported_with_line_numbers(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text(
        "pickup_time,pickup_lat,pickup_lon,dropoff_time,dropoff_lat,dropoff_lon\n"
        "0,39.95,116.4,60,39.95,116.4\n"
        "garbage,1,2,3,4,5\n"
        "100,39.95,116.4,50,39.95,116.4\n"
        "2024-01-01T00:00:00Z,39.95,116.4,2024-01-01T00:10:00,39.95,116.4\n"
    )
    trips, errors, rows = read_trips_csv(path)
    assert rows == 4 and len(trips) == 2
    assert [line for line, _ in errors] == [3, 4]
    assert trips[1].pickup_time == 1704067200 and trips[1].dropoff_time == 1704067800


def test_parse_time_forms():
    assert parse_time("1704067200") == 1704067200
    assert parse_time("2024-01-01T00:00:00Z") == 1704067200
    assert parse_time("2024-01-01T08:00:00+08:00") == 1704067200
    with pytest.raises(ValueError):
        parse_time("yesterday")


def test_external_encoding():
    vocab = ExternalVocab.fit([
        ExternalRecord("sunny", None, 0.0, 0.0),
        ExternalRecord("rainy", "new-year", 10.0, 48.6),
    ])
    assert vocab.weather == ("rainy", "sunny") and vocab.holidays == ("new-year",)
    assert vocab.dimension == 5
    np.testing.assert_array_equal(encode_external(ExternalRecord("sunny", None, 5.0, 48.6), vocab), [0, 1, 0, 0.5, 1.0])
    np.testing.assert_array_equal(encode_external(ExternalRecord("snow", "x", 0.0, 0.0), vocab)[:3], [0, 0, 0])
    enc = encode_external(ExternalRecord("sunny", None, 20.0, -3.0), vocab)
    assert enc[3] == 1.0 and enc[4] == 0.0 and vocab.clamped == 2


def test_taxibj_like_vocabulary_dimension():
    recs = [ExternalRecord(f"w{i % 16}", f"h{i % 41}", float(i), float(i % 49)) for i in range(41 * 16)]
    assert ExternalVocab.fit(recs).dimension == 59


def test_vocab_round_trip_and_digest():
    vocab = ExternalVocab.fit([ExternalRecord("a", "b", 1.0, 2.0), ExternalRecord("c", None, 3.0, 4.0)])
    back = ExternalVocab.from_dict(vocab.to_dict())
    assert back == vocab and back.digest() == vocab.digest()


def test_external_csv(tmp_path):
    path = tmp_path / "e.csv"
    path.write_text(
        "interval_start,weather,holiday,temperature,wind_speed\n"
        "0,sunny,,3.5,2\n"
        "1800,rainy,holiday,4,\n"
        "900,sunny,,1,1\n"
    )
    slots, errors = read_external_csv(path, 0, 1800, 3)
    assert slots[0] == ExternalRecord("sunny", None, 3.5, 2.0)
    assert slots[1] == ExternalRecord("rainy", "holiday", 4.0, None)
    assert slots[2] is None
    assert errors and errors[0][0] == 4


def series_from(flows, per_day=48, present=None, externals=True):
    total = len(flows)
    present = np.ones(total, bool) if present is None else present
    ext = [ExternalRecord("sunny", None, 1.0, 1.0)] * total if externals else None
    return FlowSeries(flows, present, 0, 86400 // per_day, ext)


def test_three_day_example_yields_45_samples():
    s = series_from(np.zeros((3 * 48, 2, 2, 2)))
    samples = enumerate_samples(s, 4, 2, 1)
    assert len(samples) == 45
    assert all(x.target >= 2 * 48 for x in samples)
    # a window ending on the last interval of a day predicts the next day's first
    assert samples[0].seq == (92, 93, 94, 95) and samples[0].target == 96
    assert samples[0].periodic == ((0, 48),)
    assert samples[-1].target == 3 * 48 - 1


def test_sample_windows_respect_formulas():
    s = series_from(np.zeros((4 * 48, 2, 1, 1)))
    for x in enumerate_samples(s, 4, 2, 4):
        last = x.seq[-1]
        assert x.seq == tuple(range(last - 3, last + 1))
        assert x.seq[0] // 48 == last // 48
        assert x.targets == tuple(range(last + 1, last + 5))
        for g, per in zip(x.targets, x.periodic):
            assert per == (g - 96, g - 48)


@pytest.mark.parametrize("seed", range(6))
def test_enumeration_matches_exhaustive_oracle_with_gaps(seed):
    rng = np.random.default_rng(seed)
    per_day, days = 12, 5
    total = per_day * days
    present = rng.uniform(size=total) > 0.08
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 3))
    s = series_from(np.zeros((total, 2, 1, 1)), per_day, present)
    got = enumerate_samples(s, n, m, 1)
    want = oracles.enumerate_targets(total, per_day, n, m, present)
    assert [(x.seq, x.periodic[0], x.target) for x in got] == want
    for x in got:
        assert all(present[g] for g in x.indices())


def test_enumeration_drops_missing_externals():
    s = series_from(np.zeros((3 * 48, 2, 1, 1)))
    s.externals[120] = None
    assert len(enumerate_samples(s, 4, 2)) < 45
    assert len(enumerate_samples(s, 4, 2, require_external=False)) == 45


def test_enumeration_span_diagnostic():
    s = series_from(np.zeros((2 * 48, 2, 1, 1)))
    out = enumerate_samples(s, 4, 2)
    assert out == [] and "exceed" in out.diagnostic
    assert enumerate_samples(s, 49, 1) == []


def test_split_and_prepare_fit_on_training_only():
    flows = np.zeros((4 * 48, 2, 2, 2))
    flows[:144] = np.arange(144)[:, None, None, None] % 7
    flows[144:] = 50.0
    s = series_from(flows)
    data = prepare(s, 144)
    assert data.scaler.min == 0 and data.scaler.max == 6
    assert data.scaled[:144].max() == 1.0 and data.scaled[150, 0, 0, 0] > 1
    samples = enumerate_samples(s, 4, 2)
    train, test = split_samples(samples, 144)
    assert all(x.target < 144 for x in train) and all(x.target >= 144 for x in test)
    inputs, target = data.gather(test[:3])
    assert inputs.seq_maps.shape == (4, 3, 2, 2, 2) and inputs.per_maps.shape == (1, 2, 3, 2, 2, 2)
    assert inputs.seq_maps.max() <= 1.0
    assert target.max() > 1.0  # targets keep their unclamped scaled values


def test_gather_refuses_absent_intervals():
    present = np.ones(3 * 48, bool)
    present[100] = False
    s = series_from(np.zeros((3 * 48, 2, 1, 1)) + np.arange(2)[None, :, None, None], present=present)
    data = prepare(s, 3 * 48)
    from atfm.data import Sample
    with pytest.raises(SampleError):
        data.gather([Sample((96, 97, 98, 99), ((4, 52),), (100,))])


def test_require_externals():
    s = series_from(np.zeros((48, 2, 1, 1)), externals=False)
    with pytest.raises(DataError):
        require_externals(s)


def test_synth_is_deterministic_and_periodic_without_noise():
    cfg = SynthConfig(h=3, w=2, days=3, ar=0.0, noise=0.0)
    a, b = synth_generate(cfg, 5), synth_generate(cfg, 5)
    np.testing.assert_array_equal(a.flows, b.flows)
    np.testing.assert_array_equal(a.flows[:48], a.flows[48:96])
    assert np.all(a.flows >= 0) and np.all(a.flows == np.rint(a.flows))
    noisy = SynthConfig(h=3, w=2, days=3)
    assert not np.array_equal(synth_generate(noisy, 1).flows, synth_generate(noisy, 2).flows)
    with pytest.raises(ValueError):
        SynthConfig(h=0)


def test_series_cache_round_trip(tmp_path):
    s = synth_generate(SynthConfig(h=2, w=3, days=2), 0)
    s.present[5] = False
    s.externals[7] = None
    save_series(tmp_path / "s.atfm", s)
    back = load_series(tmp_path / "s.atfm")
    np.testing.assert_array_equal(back.flows, s.flows)
    np.testing.assert_array_equal(back.present, s.present)
    assert back.externals == s.externals and back.epoch == s.epoch
    save_series(tmp_path / "t.atfm", back)
    assert (tmp_path / "s.atfm").read_bytes() == (tmp_path / "t.atfm").read_bytes()
    assert sidecar_path(tmp_path / "s.atfm").read_bytes() == sidecar_path(tmp_path / "t.atfm").read_bytes()


def test_missing_cache_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        load_series(tmp_path / "nope.atfm")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(39.9, 40.0), st.floats(116.3, 116.5)), min_size=1, max_size=20))
def test_points_inside_box_always_land_in_grid(points):
    g = GridSpec(*BOX, rows=3, cols=5)
    for la, lo in points:
        r, c = locate_cell(la, lo, g)
        assert 0 <= r < 3 and 0 <= c < 5
