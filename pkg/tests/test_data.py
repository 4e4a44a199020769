import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from penguin.data import (DATASETS, ETT_SPLIT, SeriesTable, autocorrelation,
                          chronological_split, detect_periods_acf, load_csv, make_windows,
                          prepare, split_bounds, synth_series, write_csv)
from penguin.errors import DataError


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_basic(tmp_path):
    t = load_csv(_write(tmp_path, "a,b\n1,2\n3,4\n5,6\n"))
    assert t.values.shape == (3, 2)
    assert t.channels == ("a", "b")
    assert t.timestamps is None


def test_load_csv_date_column(tmp_path):
    t = load_csv(_write(tmp_path, "date,x\n2020-01-01 00:00,1.5\n2020-01-01 01:00,2.5\n"))
    assert t.values.tolist() == [[1.5], [2.5]]
    assert t.timestamps == ("2020-01-01 00:00", "2020-01-01 01:00")


@pytest.mark.parametrize("text,match", [
    ("a,b\n1,2\n3,NaN\n", r"row 3, column 'b'"),
    ("a,b\n1,2\n3\n", "row 3 has 1 fields"),
    ("a,b\n1,x\n", r"row 2, column 'b': non-numeric"),
    ("", "empty"),
])
def test_load_csv_errors(tmp_path, text, match):
    with pytest.raises(DataError, match=match):
        load_csv(_write(tmp_path, text))


def test_csv_round_trip(tmp_path):
    t = synth_series(10, 2, noise=0.1, seed=3)
    write_csv(tmp_path / "o.csv", t)
    back = load_csv(tmp_path / "o.csv")
    assert np.array_equal(back.values, t.values)
    assert back.channels == t.channels


def _table(n, c=1):
    return SeriesTable(np.arange(n * c, dtype=float).reshape(n, c), tuple(f"c{i}" for i in range(c)))


def test_split_lengths():
    tr, va, te = chronological_split(_table(100), (0.7, 0.1, 0.2))
    assert (len(tr), len(va), len(te)) == (70, 10, 20)
    parts = chronological_split(_table(1000), ETT_SPLIT)
    assert sum(len(p) for p in parts) == 1000


def test_split_too_short_is_descriptive():
    with pytest.raises(DataError, match="val split has 10 rows"):
        chronological_split(_table(100), (0.7, 0.1, 0.2), min_len=15)


def test_split_all_train_needs_flag():
    with pytest.raises(DataError):
        chronological_split(_table(50), (1.0, 0.0, 0.0), min_len=5)
    tr, va, te = chronological_split(_table(50), (1.0, 0.0, 0.0), min_len=5, allow_empty=True)
    assert (len(tr), len(va), len(te)) == (50, 0, 0)


@given(st.integers(10, 5000), st.floats(0.05, 0.8), st.floats(0.0, 0.5))
def test_split_segments_contiguous(n, a, b):
    c = max(0.0, 1.0 - a - b)
    ratios = (a, b, c) if a + b <= 1 else (a, 1 - a, 0.0)
    bounds = split_bounds(n, ratios)
    assert bounds[0] == 0 and bounds == sorted(bounds) and bounds[-1] <= n
    tr, va, te = chronological_split(_table(n), ratios, allow_empty=True, min_len=0)
    joined = np.concatenate([tr.values, va.values, te.values])
    np.testing.assert_array_equal(joined[:, 0], np.arange(bounds[-1]))


def test_window_counts():
    assert len(make_windows(_table(12), 8, 4)) == 1
    assert len(make_windows(_table(16), 8, 4)) == 5
    with pytest.raises(DataError):
        make_windows(_table(11), 8, 4)


@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 40))
def test_window_count_formula(L, H, extra):
    ds = make_windows(_table(L + H + extra, 2), L, H)
    assert len(ds) == extra + 1
    assert ds.inputs.shape == (extra + 1, L, 2)
    assert ds.targets.shape == (extra + 1, H, 2)


def test_window_zero_reassembles_prefix():
    rng = np.random.default_rng(0)
    seg = rng.standard_normal((40, 3))
    ds = make_windows(seg, 10, 5)
    x, y = ds[0]
    np.testing.assert_array_equal(np.concatenate([x, y]), seg[:15])
    x, y = ds[7]
    np.testing.assert_array_equal(np.concatenate([x, y]), seg[7:22])


def test_prepare_uses_train_statistics():
    t = synth_series(500, 2, [(24, 2.0, 0.0)], trend=0.01, noise=0.2, seed=1)
    sp = prepare(t, 48, 12, (0.6, 0.2, 0.2))
    tr = t.values[:300]
    np.testing.assert_allclose(sp.normalizer.mean, tr.mean(0))
    np.testing.assert_allclose(sp.train.values.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(sp.train.values.std(0), 1.0, atol=1e-12)
    assert len(sp.test) == 100 - 60 + 1
    raw = prepare(t, 48, 12, (0.6, 0.2, 0.2), normalize=False)
    assert raw.normalizer is None and np.array_equal(raw.train.values, tr)


def test_synth_exact_periodicity():
    t = synth_series(200, 1, [(24, 1.3, 0.4)], noise=0.0, seed=0)
    np.testing.assert_allclose(t.values[24:, 0], t.values[:-24, 0], atol=1e-9)


def test_synth_zero_and_determinism():
    z = synth_series(50, 2, [(24, 0.0, 0.0), (7, 0.0, 1.0)], noise=0.0)
    assert not z.values.any()
    a = synth_series(100, 3, [(24, 1.0, 0.0)], noise=0.5, seed=7)
    b = synth_series(100, 3, [(24, 1.0, 0.0)], noise=0.5, seed=7)
    assert np.array_equal(a.values, b.values)


@given(st.integers(2, 60), st.floats(0.1, 5.0), st.floats(0, 6.28))
def test_synth_periodic_per_component(period, amp, phase):
    t = synth_series(4 * period, 1, [(period, amp, phase)])
    np.testing.assert_allclose(t.values[period:, 0], t.values[:-period, 0], atol=1e-9)


def _acf_oracle(x, lag):
    xc = x - x.mean()
    return sum(xc[t] * xc[t + lag] for t in range(len(x) - lag)) / sum(v * v for v in xc)


def test_autocorrelation_matches_brute_force():
    x = np.random.default_rng(0).standard_normal(60)
    r = autocorrelation(x, 10)
    for lag in range(11):
        assert abs(r[lag] - _acf_oracle(x, lag)) < 1e-12


def test_detect_pure_sine():
    x = synth_series(480, 1, [(24, 1.0, 0.0)]).values[:, 0]
    peaks = detect_periods_acf(x, max_lag=100, top_k=3)
    assert peaks[0][0] == 24
    r = autocorrelation(x, 100)
    assert abs(peaks[0][1] - r[24]) < 1e-15


def test_detect_white_noise_below_threshold():
    x = np.random.default_rng(42).standard_normal(2000)
    assert detect_periods_acf(x, max_lag=100, top_k=5) == []


def test_detect_constant_is_empty():
    assert detect_periods_acf(np.full(100, 3.0), max_lag=20) == []


@pytest.mark.parametrize("period", [7, 12, 24, 37])
def test_acf_local_max_near_true_period(period):
    x = synth_series(20 * period, 1, [(period, 1.0, 0.3)]).values[:, 0]
    lags = [lag for lag, _ in detect_periods_acf(x, max_lag=2 * period - 1, top_k=10)]
    assert any(abs(lag - period) <= 1 for lag in lags)


def test_detect_errors():
    with pytest.raises(DataError):
        detect_periods_acf(np.zeros(10), max_lag=10)


def test_dataset_table_periods():
    assert DATASETS["Traffic"][2] == (24, 168)
    assert DATASETS["ETTm1"][2] == (96,)
    assert DATASETS["Exchange"][2] == ()
    assert DATASETS["Weather"][0] == 21
