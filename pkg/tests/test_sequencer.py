import io
import logging

import pytest
from hypothesis import given, settings, strategies as st

from logsentinel.sequencer import (ANOMALOUS, NORMAL, UNKNOWN, LogSequence, group_by_session,
                                   group_by_time_window, read_sequences, write_sequences)


def ev(line_no, tid, content="", timestamp=None, alert=False):
    return {"line_no": line_no, "template_id": tid, "content": content,
            "timestamp": timestamp, "alert": alert}


def test_session_grouping_lengths_and_order():
    events = [ev(0, 1, "read blk_1"), ev(1, 2, "write blk_2"), ev(2, 3, "close blk_1")]
    res = group_by_session(events)
    assert [len(s) for s in res] == [2, 1]
    assert [s.group_id for s in res] == ["blk_1", "blk_2"]
    assert res.sequences[0].keys == [1, 3]


def test_session_drop_counter_and_warning(caplog):
    events = [ev(0, 1, "nothing here"), ev(1, 2, "read blk_9")]
    res = group_by_session(events)
    assert res.dropped == 1 and len(res) == 1
    with caplog.at_level(logging.WARNING):
        empty = group_by_session([ev(0, 1, "nothing")])
    assert len(empty) == 0 and empty.dropped == 1
    assert "matched no events" in caplog.text


def test_session_labels():
    events = [ev(0, 1, "blk_1"), ev(1, 2, "blk_2"), ev(2, 1, "blk_3")]
    res = group_by_session(events, labels={"blk_1": NORMAL, "blk_2": ANOMALOUS})
    assert [s.label for s in res] == [NORMAL, ANOMALOUS, UNKNOWN]


def test_session_key_field_preferred():
    events = [{"line_no": 0, "template_id": 5, "session_key": "s1", "content": "blk_2"}]
    assert group_by_session(events).sequences[0].group_id == "s1"


def test_tumbling_window_boundary():
    events = [ev(0, 1, timestamp=0.0), ev(1, 2, timestamp=299.0), ev(2, 3, timestamp=301.0)]
    res = group_by_time_window(events, 300.0)
    assert [len(s) for s in res] == [2, 1]


def test_window_exact_boundary_goes_to_next():
    events = [ev(0, 1, timestamp=0.0), ev(1, 2, timestamp=300.0)]
    assert [len(s) for s in group_by_time_window(events, 300.0)] == [1, 1]


def test_window_any_alert_rule():
    events = [ev(0, 1, timestamp=0.0), ev(1, 2, timestamp=10.0, alert=True),
              ev(2, 1, timestamp=400.0)]
    res = group_by_time_window(events, 300.0)
    assert [s.label for s in res] == [ANOMALOUS, NORMAL]
    unl = group_by_time_window(events, 300.0, labelled=False)
    assert {s.label for s in unl} == {UNKNOWN}


def test_sliding_windows_overlap():
    events = [ev(i, i, timestamp=float(t)) for i, t in enumerate([0, 100, 200, 300, 400])]
    res = group_by_time_window(events, 300.0, step_seconds=100.0)
    # windows start at 0,100,200,300,400
    assert [s.keys for s in res] == [[0, 1, 2], [1, 2, 3], [2, 3, 4], [3, 4], [4]]


def test_window_drops_missing_timestamps():
    events = [ev(0, 1, timestamp=None), ev(1, 2, timestamp=float("nan")), ev(2, 3, timestamp=5.0)]
    res = group_by_time_window(events, 60.0)
    assert res.dropped == 2 and [s.keys for s in res] == [[3]]


def test_window_rejects_bad_width():
    with pytest.raises(ValueError):
        group_by_time_window([], 0)


def test_jsonl_round_trip():
    seqs = [LogSequence([1, 2, 3], "a", NORMAL), LogSequence([4], "b", ANOMALOUS)]
    buf = io.StringIO()
    write_sequences(seqs, buf)
    buf.seek(0)
    assert read_sequences(buf) == seqs
    assert seqs[1].is_short


def test_invalid_label():
    with pytest.raises(ValueError):
        LogSequence([1], "x", "weird")


event_lists = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 9),
                                 st.floats(0, 2000, allow_nan=False), st.booleans()),
                       max_size=40)


@settings(max_examples=80, deadline=None)
@given(event_lists)
def test_property_session_partition(items):
    events = [ev(i, tid, f"op blk_{s}") for i, (s, tid, _, _) in enumerate(items)]
    res = group_by_session(events)
    assert sum(len(s) for s in res) == len(events)
    # each sequence is its session's events in line order
    for seq in res:
        expected = [tid for (s, tid, _, _) in items if f"blk_{s}" == seq.group_id]
        assert seq.keys == expected


@settings(max_examples=80, deadline=None)
@given(event_lists)
def test_property_tumbling_windows_concatenate_to_stream(items):
    events = [ev(i, tid, timestamp=t, alert=a) for i, (_, tid, t, a) in enumerate(items)]
    res = group_by_time_window(events, 250.0)
    order = sorted(range(len(items)), key=lambda i: (items[i][2], i))
    assert [k for s in res for k in s.keys] == [items[i][1] for i in order]
    n_alert_windows = sum(s.label == ANOMALOUS for s in res)
    assert (n_alert_windows > 0) == any(a for *_, a in items)
