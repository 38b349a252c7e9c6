import calendar
import io
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeontask.errors import ConfigurationError
from timeontask.ingest import (
    ClickEvent,
    FilterConfig,
    ResourceCategory,
    categorize_interval,
    extract_intervals,
    parse_track_log,
    stratify,
)


def parse(text, **kw):
    return parse_track_log(io.BytesIO(text.encode()), **kw)


def test_parse_numeric_row():
    res = parse("user_id,timestamp\nu1,100.0\n")
    assert res.events == [ClickEvent("u1", 100.0, None)]
    assert res.n_malformed == 0


def test_parse_iso_timestamp_matches_calendar_oracle():
    expected = float(calendar.timegm((2016, 1, 1, 0, 0, 0)))
    res = parse("user_id,timestamp\nu1,2016-01-01T00:00:00Z\n")
    assert res.events[0].timestamp == expected == 1451606400.0


def test_parse_iso_with_offset_and_naive():
    res = parse("user_id,timestamp\nu1,2016-01-01T01:00:00+01:00\nu1,2016-01-01 00:00:30\n")
    assert [e.timestamp for e in res.events] == [1451606400.0, 1451606430.0]


def test_malformed_rows_are_counted_not_fatal():
    res = parse("user_id,timestamp\nu1,notatime\nu1,5\n,6\nu2,-3\nu3,nan\n")
    assert [e.timestamp for e in res.events] == [5.0]
    assert res.n_malformed == 4


def test_only_malformed_row():
    res = parse("user_id,timestamp\nu1,notatime\n")
    assert res.events == [] and res.n_malformed == 1


def test_missing_column_is_configuration_error():
    with pytest.raises(ConfigurationError):
        parse("user_id,time\nu1,1\n")


def test_empty_input():
    res = parse("")
    assert res.events == [] and res.n_malformed == 0


def test_tab_delimiter_and_resource_column():
    res = parse("timestamp\tuser_id\tresource_type\n1\ta\tvideo\n2\ta\t\n", delimiter="\t")
    assert res.events == [ClickEvent("a", 1.0, "video"), ClickEvent("a", 2.0, None)]


def test_input_order_preserved():
    res = parse("user_id,timestamp\nb,3\na,1\nb,2\n")
    assert [(e.user_id, e.timestamp) for e in res.events] == [("b", 3.0), ("a", 1.0), ("b", 2.0)]


def test_text_stream_accepted():
    res = parse_track_log(io.StringIO("user_id,timestamp\nu1,1\n"))
    assert len(res.events) == 1


def clicks(user, times, labels=None):
    labels = labels or [None] * len(times)
    return [ClickEvent(user, float(t), r) for t, r in zip(times, labels)]


def test_extract_simple_differences():
    series, drops = extract_intervals(clicks("u1", [0, 10, 25]), FilterConfig(min_clicks=2))
    s = series["u1"]
    assert s.deltas.tolist() == [10.0, 15.0]
    assert s.net_time == 25.0 and s.n == 2
    assert drops == {}


def test_too_few_clicks_dropped():
    series, drops = extract_intervals(clicks("u1", range(19)), FilterConfig(min_clicks=20))
    assert "u1" not in series
    assert drops == {"u1": "too_few_clicks"}


def test_twenty_clicks_kept():
    series, _ = extract_intervals(clicks("u1", range(20)), FilterConfig(min_clicks=20))
    assert series["u1"].n == 19


def test_short_interval_filtered_after_differencing():
    series, _ = extract_intervals(clicks("u1", [0, 0.05, 10]), FilterConfig(min_clicks=2, min_interval=0.1))
    assert series["u1"].deltas.tolist() == pytest.approx([9.95])


def test_long_interval_filtered():
    series, _ = extract_intervals(clicks("u1", [0, 5, 5 + 7201, 5 + 7201 + 3]), FilterConfig(min_clicks=2))
    assert series["u1"].deltas.tolist() == [5.0, 3.0]


def test_identical_timestamps_leave_no_intervals():
    series, drops = extract_intervals(clicks("u1", [7.0] * 25))
    assert series == {} and drops == {"u1": "no_valid_intervals"}


def test_unsorted_input_sorted_per_user():
    series, _ = extract_intervals(clicks("u1", [25, 0, 10]), FilterConfig(min_clicks=2))
    assert series["u1"].deltas.tolist() == [10.0, 15.0]


def test_categories_follow_bounding_clicks():
    ev = clicks("u", [0, 1, 2, 3], ["video", "video", "problem", None])
    series, _ = extract_intervals(ev, FilterConfig(min_clicks=2))
    assert series["u"].categories == (
        ResourceCategory.single("video"),
        ResourceCategory.mixed("problem", "video"),
        ResourceCategory.unknown(),
    )


def test_categorize_interval_examples():
    v = ClickEvent("u", 0, "video")
    p = ClickEvent("u", 1, "problem")
    assert categorize_interval(v, ClickEvent("u", 1, "video")) == ResourceCategory.single("video")
    assert categorize_interval(v, p) == ResourceCategory.mixed("problem", "video")
    assert categorize_interval(p, v) == categorize_interval(v, p)
    assert str(categorize_interval(p, v)) == "problem/video"
    assert categorize_interval(v, ClickEvent("u", 1)).is_unknown


def test_category_parse_roundtrip():
    for cat in (ResourceCategory.single("video"), ResourceCategory.mixed("b", "a"), ResourceCategory.unknown()):
        assert ResourceCategory.parse(str(cat)) == cat


def test_mixed_pair_requires_distinct_labels():
    with pytest.raises(ValueError):
        ResourceCategory.mixed("video", "video")


def test_filter_config_validation():
    with pytest.raises(ConfigurationError):
        FilterConfig(min_clicks=1)
    with pytest.raises(ConfigurationError):
        FilterConfig(min_interval=10, max_interval=5)


def test_click_event_validation():
    with pytest.raises(ValueError):
        ClickEvent("", 1.0)
    with pytest.raises(ValueError):
        ClickEvent("u", float("inf"))


def test_stratify_partitions_series():
    ev = clicks("u", range(8), ["a", "a", "b", "b", "a", "a", "b", "a"])
    series, _ = extract_intervals(ev, FilterConfig(min_clicks=2))
    parts = stratify(series["u"])
    assert sum(p.n for p in parts.values()) == series["u"].n
    assert parts[ResourceCategory.single("a")].n == 2
    assert parts[ResourceCategory.mixed("a", "b")].n == 4


labels = st.sampled_from([None, "video", "problem", "html"])
event_lists = st.lists(
    st.tuples(st.sampled_from(["u1", "u2", "u3"]), st.floats(0, 20_000, allow_nan=False), labels),
    max_size=80,
)


@settings(max_examples=200)
@given(event_lists, st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_extract_properties(rows, min_clicks, shuffle_seed):
    events = [ClickEvent(u, t, r) for u, t, r in rows]
    cfg = FilterConfig(min_clicks=min_clicks, min_interval=0.1, max_interval=7200)
    series, drops = extract_intervals(events, cfg)

    total = sum(s.n for s in series.values())
    assert total <= len(events) - len(series)
    for s in series.values():
        assert np.all((s.deltas >= cfg.min_interval) & (s.deltas <= cfg.max_interval))
        assert len(s.categories) == s.n
        assert s.net_time == pytest.approx(float(np.sum(s.deltas)), rel=1e-12)
    assert set(series).isdisjoint(drops)
    assert set(series) | set(drops) == {e.user_id for e in events}

    shuffled = events[:]
    random.Random(shuffle_seed).shuffle(shuffled)
    series2, drops2 = extract_intervals(shuffled, cfg)
    assert drops2 == drops
    assert series2.keys() == series.keys()
    for k in series:
        assert series2[k].deltas.tolist() == series[k].deltas.tolist()
        assert series2[k].categories == series[k].categories


@settings(max_examples=200)
@given(labels, labels)
def test_categorize_symmetric(a, b):
    ea, eb = ClickEvent("u", 0, a), ClickEvent("u", 1, b)
    assert categorize_interval(ea, eb) == categorize_interval(eb, ea)
