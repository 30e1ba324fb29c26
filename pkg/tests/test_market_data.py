import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from causalhsp.errors import (DivisionByZero, EmptyIntersection, InsufficientHistory, MissingData, TooShort)
from causalhsp.market_data import (RawSeries, ReturnPanel, WindowSpec, align, from_returns, lagged_pair,
                                   load_panel, panel_to_csv_text, read_series_csv, slice_window, to_returns)


def series(name, dates, levels):
    return RawSeries(name, np.array(dates), np.array(levels, float))


def test_to_returns_arithmetic():
    r = to_returns(series("a", [1, 2, 3], [100, 110, 99]))
    np.testing.assert_allclose(r.levels, [0.10, -0.10], rtol=0, atol=1e-15)
    assert r.dates.tolist() == [2, 3]


def test_flat_series_has_zero_return():
    assert to_returns(series("a", [1, 2], [100, 100])).levels.tolist() == [0.0]


def test_zero_divisor_names_the_step():
    with pytest.raises(DivisionByZero) as exc:
        to_returns(series("a", [1, 2, 3], [100, 0, 50]))
    assert exc.value.details["date"] == 3


def test_single_observation_is_too_short():
    with pytest.raises(TooShort):
        to_returns(series("a", [1], [100]))


def test_dates_must_increase():
    with pytest.raises(ValueError):
        series("a", [1, 1, 2], [1, 2, 3])


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 1e4), st.lists(st.floats(-0.5, 0.5), min_size=1, max_size=60))
def test_returns_round_trip(base, steps):
    # daily-scale moves; a level collapsing by orders of magnitude in one step
    # loses digits in 1 + r no matter how it is computed
    levels = base * np.cumprod([1.0] + [1.0 + x for x in steps])
    s = series("a", list(range(len(levels))), levels)
    rebuilt = from_returns(to_returns(s), levels[0])
    np.testing.assert_allclose(rebuilt, levels, rtol=1e-12)


def test_align_identical_dates():
    p = align([series("a", [1, 2, 3], [1, 2, 3]), series("b", [1, 2, 3], [4, 5, 6])])
    assert p.names == ("a", "b") and p.dates.tolist() == [1, 2, 3]


def test_align_inner_intersects():
    p = align([series("a", [1, 2, 3], [1, 2, 3]), series("b", [2, 3, 4], [4, 5, 6])])
    assert p.dates.tolist() == [2, 3]
    np.testing.assert_array_equal(p.values, [[2, 4], [3, 5]])


def test_align_forward_fill_never_fills_before_first_date():
    p = align([series("a", [1, 3], [10, 30]), series("b", [0, 1, 2, 3], [1, 2, 3, 4])], "forward_fill")
    assert p.dates.tolist() == [0, 1, 2, 3]
    assert p.missing[0, 0] and np.isnan(p.values[0, 0])
    assert p.values[2, 0] == 10


def test_align_column_order_follows_input():
    a, b = series("a", [1, 2], [1, 2]), series("b", [1, 2], [3, 4])
    assert align([b, a]).names == ("b", "a")


def test_align_empty_intersection():
    with pytest.raises(EmptyIntersection):
        align([series("a", [1, 2], [1, 2]), series("b", [2, 3], [1, 2])])


def test_panel_is_read_only():
    p = ReturnPanel([1, 2], ["a"], [[0.1], [0.2]])
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0


def test_slice_window_last_rows():
    p = ReturnPanel(np.arange(300), ["a"], np.arange(300.0))
    w = slice_window(p, WindowSpec(299, 125))
    assert w.n_rows == 125 and w.dates[-1] == 299 and w.values[0, 0] == 175


def test_slice_window_insufficient_history():
    p = ReturnPanel(np.arange(100), ["a"], np.zeros(100))
    with pytest.raises(InsufficientHistory) as exc:
        slice_window(p, WindowSpec(99, 125))
    assert exc.value.details == {"needed": 125, "available": 100}


def test_slice_window_rejects_missing_values():
    v = np.arange(10.0)
    v[8] = np.nan
    p = ReturnPanel(np.arange(10), ["a"], v)
    with pytest.raises(MissingData):
        slice_window(p, WindowSpec(9, 3))
    assert slice_window(p, WindowSpec(9, 3), allow_missing=True).missing[1, 0]


def test_lagged_pair_index_bookkeeping():
    d = ReturnPanel(np.arange(5), ["x"], np.arange(5.0) * 10)
    a = ReturnPanel(np.arange(5), ["y"], np.arange(5.0))
    X, Y = lagged_pair(d, a, WindowSpec(4, 3, lag=1))
    assert Y[:, 0].tolist() == [2, 3, 4]
    assert X[:, 0].tolist() == [10, 20, 30]


def test_window_spec_validation():
    with pytest.raises(ValueError):
        WindowSpec(0, 1)
    with pytest.raises(ValueError):
        WindowSpec(0, 5, lag=-1)


def test_csv_round_trip(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text("date,a,b\n2020-01-01,100,50\n2020-01-02,110,\n2020-01-03,99,55\n2020-01-06,99,44\n")
    levels = read_series_csv(path)
    assert [len(s) for s in levels] == [4, 3]
    p = load_panel(path, "prices")
    assert p.names == ("a", "b") and p.n_rows == 2
    np.testing.assert_allclose(p.values, [[-0.1, 0.1], [0.0, -0.2]])
    text = panel_to_csv_text(p)
    assert text.splitlines()[0] == "date,a,b" and text.splitlines()[1].startswith("2020-01-03,")
    back = tmp_path / "r.csv"
    back.write_text(text)
    np.testing.assert_array_equal(load_panel(back).values, p.values)
