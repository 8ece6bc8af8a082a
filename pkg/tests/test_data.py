import io
import math
from collections import Counter
from datetime import datetime

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgnn.data import (
    ItemVocabulary,
    KeyedSession,
    RawEvent,
    TrainingExample,
    augment,
    filter_sessions,
    load_dataset,
    load_events,
    preprocess,
    save_dataset,
    sessionize,
    sessions_to_csv,
    synth_generate,
    synth_transition_matrix,
    temporal_split,
)
from fgnn.exceptions import ContractError, DataError, EmptyDatasetError, EmptyInputError, UsageError


def test_canonical_row():
    events = load_events(b"session_id,timestamp_ms,item_id\ns1,1000,itemA\n")
    assert events == [RawEvent("s1", 1000, "itemA")]


def test_yoochoose_row_matches_iso_parser():
    events = load_events(b"1,2014-04-07T10:51:09.277Z,214536502,0\n", "yoochoose")
    expected = int(datetime.fromisoformat("2014-04-07T10:51:09.277+00:00").timestamp() * 1000)
    assert events[0] == RawEvent("1", expected, "214536502")


def test_diginetica_orders_by_day_then_frame():
    text = ("sessionId;userId;itemId;timeframe;eventdate\n"
            "1;;81766;526309;2016-05-09\n"
            "1;;31331;1031018;2016-05-09\n")
    events = load_events(text.encode(), "diginetica")
    day = int(datetime.fromisoformat("2016-05-09T00:00:00+00:00").timestamp() * 1000)
    assert [e.timestamp for e in events] == [day + 526309, day + 1031018]
    assert [e.item_key for e in events] == ["81766", "31331"]


def test_header_only_is_empty_input():
    with pytest.raises(EmptyInputError):
        load_events(b"session_id,timestamp_ms,item_id\n")


def test_unknown_format():
    with pytest.raises(UsageError):
        load_events(b"a,1,b\n", "parquet")


def test_unparsable_rows_are_counted():
    events = load_events(io.BytesIO(b"s1,10,a\ns1,oops,b\ns2,-5,c\ns2,20,d\n"))
    assert len(events) == 2 and events.skipped == 2


def test_sessionize_examples():
    s = sessionize([RawEvent("s1", 2, "B"), RawEvent("s1", 1, "A")])
    assert s[0].items == ["A", "B"]
    s = sessionize([RawEvent("x", 10, "a"), RawEvent("y", 5, "b")])
    assert [k.key for k in s] == ["y", "x"]
    s = sessionize([RawEvent("s", 3, "P"), RawEvent("s", 3, "Q"), RawEvent("s", 3, "R")])
    assert s[0].items == ["P", "Q", "R"]


def test_filter_removes_everything():
    with pytest.raises(EmptyDatasetError):
        filter_sessions([["A"]])


def test_filter_support_boundary():
    sessions = [["A", "B"]] * 4 + [["A", "C"]] + [["C", "B"]] * 4
    kept, vocab = filter_sessions(sessions)
    assert "A" in vocab.key_to_index  # exactly 5 occurrences survives
    assert "C" in vocab.key_to_index
    kept, vocab = filter_sessions([["A", "B"]] * 4 + [["B", "B"]])
    assert "A" not in vocab.key_to_index  # 4 occurrences is removed


def test_filter_two_pass_example():
    kept, vocab = filter_sessions([["A", "B", "A"], ["B", "C"]], min_item_support=2)
    assert kept == [["A", "B", "A"]]
    assert vocab.index_to_key == ["A", "B"]


def test_filter_is_not_always_idempotent():
    # dropping [B] in pass 2 lowers B's support to 1, so a second round removes it
    once, _ = filter_sessions([["A", "B", "A"], ["B", "C"]], min_item_support=2)
    twice, _ = filter_sessions(once, min_item_support=2)
    assert once == [["A", "B", "A"]] and twice == [["A", "A"]]


sessions_strategy = st.lists(st.lists(st.sampled_from("ABCDEFG"), min_size=1, max_size=8), min_size=1, max_size=15)


@settings(max_examples=200, deadline=None)
@given(sessions_strategy, st.integers(1, 4), st.integers(1, 3))
def test_filter_idempotent_when_no_session_dropped(sessions, support, min_len):
    try:
        once, vocab = filter_sessions(sessions, support, min_len)
    except EmptyDatasetError:
        return
    counts = Counter(v for s in sessions for v in s)
    pruned = [[v for v in s if counts[v] >= support] for s in sessions]
    if any(len(s) < min_len for s in pruned):
        return  # a dropped session can lower support; see test above
    twice, vocab2 = filter_sessions(once, support, min_len)
    assert twice == once and vocab2.index_to_key == vocab.index_to_key


@settings(max_examples=200, deadline=None)
@given(sessions_strategy)
def test_filter_vocab_sound(sessions):
    try:
        kept, vocab = filter_sessions(sessions, 2, 2)
    except EmptyDatasetError:
        return
    for s in kept:
        assert len(s) >= 2
        assert all(v in vocab.key_to_index for v in s)


def test_filter_keyed_sessions():
    kept, _ = filter_sessions([KeyedSession("k", ["A", "A", "B"], 7)], min_item_support=2)
    assert kept[0] == KeyedSession("k", ["A", "A"], 7)


def test_augment_examples():
    assert augment(["A", "B"]) == [TrainingExample(("A",), "B")]
    assert augment(["A", "B", "C"]) == [TrainingExample(("A",), "B"), TrainingExample(("A", "B"), "C")]
    assert len(augment([1, 2, 3, 4])) == 3
    with pytest.raises(ContractError):
        augment([1])


@given(st.lists(st.integers(0, 9), min_size=2, max_size=30))
def test_augment_reconstructs(session):
    out = augment(session)
    assert len(out) == len(session) - 1
    assert list(out[-1].prefix) + [out[-1].label] == session
    assert all(ex.label not in ex.prefix[len(ex.prefix):] for ex in out)


def vocab_of(n):
    return ItemVocabulary([str(i) for i in range(n)])


def test_split_arithmetic():
    sessions = [[i % 7, (i + 1) % 7] for i in range(100)]
    ds = temporal_split(sessions, vocab_of(7), 0.1, 1.0)
    assert ds.stats["n_test_sessions"] == 10 and ds.stats["n_train_sessions"] == 90
    sessions = [[i % 7, (i + 1) % 7] for i in range(6400 + 1)]
    ds = temporal_split(sessions, vocab_of(7), 1 / 6401, 1 / 64)
    assert ds.stats["n_test_sessions"] == 1 and ds.stats["n_train_sessions"] == 100
    assert ds.train_examples[-1] == TrainingExample((6399 % 7,), 6400 % 7)


def test_split_most_recent_are_test_and_disjoint():
    sessions = [[i, i + 1] for i in range(0, 20, 2)]
    ds = temporal_split(sessions, vocab_of(21), 0.2, 1.0)
    test_prefixes = {ex.prefix for ex in ds.test_examples}
    train_prefixes = {ex.prefix for ex in ds.train_examples}
    assert not test_prefixes & train_prefixes
    assert ds.stats["dropped_test_examples"] == 2  # labels 17 and 19 never occur in train


@pytest.mark.parametrize("tf,rf", [(0.0, 1.0), (1.0, 1.0), (0.1, 0.0), (0.1, 1.5)])
def test_split_fraction_range(tf, rf):
    with pytest.raises(UsageError):
        temporal_split([[0, 1]] * 5, vocab_of(2), tf, rf)


def test_preprocess_hand_counted_stats(tmp_path):
    rows = ["session_id,timestamp_ms,item_id"]
    t = 0
    for s, seq in enumerate([list("ABAB"), list("BA"), list("AB"), list("ABC"), list("BAB")]):
        for item in seq:
            t += 1
            rows.append(f"s{s},{t},{item}")
    path = tmp_path / "clicks.csv"
    path.write_text("\n".join(rows) + "\n")
    ds = preprocess(path, min_item_support=5, test_fraction=0.2)
    # C is rare and removed; the newest session (BAB) is test
    assert ds.vocab.index_to_key == ["A", "B"]
    assert ds.stats == {"n_clicks": 13, "n_train_sessions": 4, "n_test_sessions": 1,
                        "n_train_examples": 6, "n_test_examples": 2, "n_items": 2,
                        "avg_length": 2.6, "dropped_test_examples": 0, "skipped_rows": 0}


def test_synth_deterministic():
    a = sessions_to_csv(synth_generate(20, 50, seed=7))
    b = sessions_to_csv(synth_generate(20, 50, seed=7))
    assert a == b
    assert a != sessions_to_csv(synth_generate(20, 50, seed=8))


def test_synth_lengths_in_range():
    sessions = synth_generate(10, 300, (3, 6), seed=1)
    assert {len(s) for s in sessions} == {3, 4, 5, 6}


def test_synth_full_concentration_is_uniform():
    probs = synth_transition_matrix(12, 1.0, np.random.default_rng(0))
    np.testing.assert_allclose(probs, 1 / 12)


def test_synth_low_concentration_entropy():
    sessions = synth_generate(50, 2000, seed=7, transition_concentration=0.04)
    pairs = Counter((a, b) for s in sessions for a, b in zip(s, s[1:]))
    firsts = Counter(a for a, _ in pairs.elements())
    total = sum(pairs.values())
    entropy = -sum(c / total * math.log2(c / firsts[a]) for (a, _), c in pairs.items())
    assert entropy <= 1.2  # two successors per item, about 1 bit
    assert entropy < 0.25 * math.log2(50)
    assert max(len({b for (a2, b) in pairs if a2 == a}) for a in firsts) == 2


@pytest.mark.parametrize("kwargs", [dict(n_items=1, n_sessions=5), dict(n_items=5, n_sessions=0),
                                    dict(n_items=5, n_sessions=5, length_range=(3, 2)),
                                    dict(n_items=5, n_sessions=5, transition_concentration=0.0)])
def test_synth_degenerate(kwargs):
    with pytest.raises(UsageError):
        synth_generate(**kwargs)


def test_dataset_round_trip(tmp_path):
    sessions = synth_generate(15, 80, seed=3)
    csv_path = tmp_path / "c.csv"
    csv_path.write_text(sessions_to_csv(sessions))
    ds = preprocess(csv_path)
    save_dataset(ds, tmp_path / "out")
    back = load_dataset(tmp_path / "out")
    assert back.train_examples == ds.train_examples
    assert back.test_examples == ds.test_examples
    assert back.vocab.index_to_key == ds.vocab.index_to_key
    assert back.stats == ds.stats


def test_dataset_corrupt_line(tmp_path):
    ds = preprocess(sessions_to_csv(synth_generate(15, 80, seed=3)).encode())
    save_dataset(ds, tmp_path)
    with open(tmp_path / "train.txt", "a") as fh:
        fh.write("1 2 x\n")
    with pytest.raises(DataError, match="train.txt"):
        load_dataset(tmp_path)
