import numpy as np
import pytest
from scipy.stats import chisquare

from fcrbess.controller import emergency_trace
from fcrbess.data import (
    DataError,
    FrequencySample,
    PriceSeries,
    SamplePool,
    SynthFrequencyParams,
    draw_day_ids,
    draw_day_samples,
    draw_year_batches,
    export_frequency_csv,
    export_price_csv,
    load_frequency_csv,
    load_price_csv,
    synth_frequency,
    synth_prices,
)


def write_rows(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(x) for x in r) + "\n")


class TestFrequencyCsv:
    def test_flat_day(self, tmp_path):
        p = tmp_path / "f.csv"
        write_rows(p, ("timestamp", "frequency"), ((t, "50.000") for t in range(86400)))
        s = load_frequency_csv(p, dt=10.0)
        assert len(s) == 8640
        assert np.all(s.values == 0.0)

    def test_averaging(self, tmp_path):
        p = tmp_path / "f.csv"
        write_rows(p, ("t", "delta_f"), ((t, t % 10) for t in range(100)))
        s = load_frequency_csv(p, dt=10.0)
        np.testing.assert_allclose(s.values, 4.5)

    def test_iso_timestamps(self, tmp_path):
        p = tmp_path / "f.csv"
        write_rows(p, ("timestamp", "frequency"),
                   ((f"2015-01-01T00:00:{s:02d}Z", 50.01) for s in range(20)))
        s = load_frequency_csv(p, dt=10.0)
        np.testing.assert_allclose(s.values, 0.01, atol=1e-12)

    def test_gap_reported(self, tmp_path):
        p = tmp_path / "f.csv"
        times = list(range(100)) + list(range(130, 200))
        write_rows(p, ("timestamp", "frequency"), ((t, 50.0) for t in times))
        with pytest.raises(DataError, match="gap of 31 s"):
            load_frequency_csv(p)

    def test_nan_reported(self, tmp_path):
        p = tmp_path / "f.csv"
        write_rows(p, ("timestamp", "frequency"), [(0, 50.0), (1, "nan"), (2, 50.0)])
        with pytest.raises(DataError, match=":3: NaN"):
            load_frequency_csv(p, dt=1.0)

    def test_unknown_column(self, tmp_path):
        p = tmp_path / "f.csv"
        write_rows(p, ("timestamp", "mystery"), [(0, 1), (1, 2)])
        with pytest.raises(DataError):
            load_frequency_csv(p, dt=1.0)

    def test_round_trip(self, tmp_path):
        s = synth_frequency(SynthFrequencyParams(), 3600.0, 10.0, seed=1)
        export_frequency_csv(s, tmp_path / "f.csv")
        back = load_frequency_csv(tmp_path / "f.csv", dt=10.0)
        np.testing.assert_array_equal(back.values, s.values)
        assert back.start == pytest.approx(s.start)


class TestPool:
    def test_four_year_count(self):
        trace = FrequencySample(0.0, 10.0, np.zeros(1461 * 8640))
        assert len(SamplePool(trace)) == 140_256

    def test_day_wraps(self):
        trace = FrequencySample(0.0, 10.0, np.arange(2 * 8640, dtype=float))
        pool = SamplePool(trace)
        last = pool.day(len(pool) - 1)
        assert last.size == 8640
        assert last[0] == 2 * 8640 - 90
        assert last[90] == 0.0

    def test_seed_determinism(self):
        pool = SamplePool(FrequencySample(0.0, 10.0, np.zeros(10 * 8640)))
        a = draw_day_samples(pool, 20, 7)
        b = draw_day_samples(pool, 20, 7)
        assert [s.start for s in a] == [s.start for s in b]

    def test_uniform_offsets(self):
        pool = SamplePool(FrequencySample(0.0, 10.0, np.zeros(1461 * 8640)))
        ids = draw_day_ids(pool, 140_256, 2024)
        counts = np.bincount(ids % 96, minlength=96)  # quarter-hour of day
        assert chisquare(counts).pvalue > 0.001
        counts = np.bincount(ids // 96, minlength=1461)
        assert chisquare(counts).pvalue > 0.001

    def test_year_batches_with_replacement(self):
        batches = draw_year_batches(["y1", "y2", "y3", "y4"], 200, 3, 5)
        assert all(len(b) == 3 for b in batches)
        assert any(len(set(b)) < 3 for b in batches)


class TestSynthetic:
    def test_zero_noise(self):
        s = synth_frequency(SynthFrequencyParams(std=0.0), 86400.0, 10.0, seed=0)
        assert np.all(s.values == 0.0)

    def test_std_one_year(self):
        s = synth_frequency(SynthFrequencyParams(std=0.02), 365 * 86400.0, 10.0, seed=11)
        assert abs(np.std(s.values) / 0.02 - 1) < 0.1

    def test_no_excursions_no_emergency(self):
        s = synth_frequency(SynthFrequencyParams(std=0.01), 30 * 86400.0, 10.0, seed=3)
        assert not emergency_trace(s.values, 10.0).any()

    def test_excursions_trigger_emergency(self):
        p = SynthFrequencyParams(std=0.01, excursion_rate=2.0, excursion_amplitude=0.25)
        s = synth_frequency(p, 30 * 86400.0, 10.0, seed=3)
        assert emergency_trace(s.values, 10.0).any()


class TestPrices:
    def test_window(self):
        ps = PriceSeries.constant(40.0, 96)
        np.testing.assert_array_equal(ps.window(900.0, 4), [40.0] * 4)

    def test_missing_named(self):
        ps = PriceSeries(0.0, 900.0, np.array([1.0, np.nan, 3.0]))
        with pytest.raises(DataError, match="2000-01-01T00:15"):
            ps.window(0.0, 3)
        with pytest.raises(DataError):
            ps.window(0.0, 5)

    def test_csv_round_trip(self, tmp_path):
        ps = synth_prices(96, seed=2)
        export_price_csv(ps, tmp_path / "p.csv")
        back = load_price_csv(tmp_path / "p.csv")
        np.testing.assert_array_equal(back.values, ps.values)

    def test_irregular_grid(self, tmp_path):
        p = tmp_path / "p.csv"
        write_rows(p, ("timestamp", "price"), [(0, 1.0), (900, 2.0), (2700, 3.0)])
        with pytest.raises(DataError, match=":4"):
            load_price_csv(p)
