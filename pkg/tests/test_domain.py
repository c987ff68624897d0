import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddp.domain import (
    DataError,
    DiseaseCatalog,
    Event,
    EventSequence,
    GraphSnapshot,
    build_catalog,
    canonicalize_sequence,
    encode_records,
    history_prefix,
    labels_at,
    read_jsonl,
)


def test_catalog_dedupes_and_sorts():
    cat = build_catalog([[(1.0, "I50"), (2.0, "A41")], [(0.5, "I50")]])
    assert cat.codes == ("A41", "I50")
    assert cat.K == 2
    assert cat.index("I50") == 1 and cat.code(0) == "A41"


def test_catalog_single_code():
    assert build_catalog([[(3.0, "C50")]]).K == 1


def test_catalog_no_events():
    with pytest.raises(DataError, match="no events"):
        build_catalog([[], {"events": []}])


def test_catalog_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        DiseaseCatalog(("A", "A"))
    with pytest.raises(ValueError):
        DiseaseCatalog(())


def test_catalog_json_round_trip():
    cat = DiseaseCatalog(("A41", "I50"))
    assert json.loads(cat.to_json()) == ["A41", "I50"]
    assert DiseaseCatalog.from_json(cat.to_json()) == cat


def test_tie_broken_by_code_then_jittered():
    cat = DiseaseCatalog(("A41", "I50"))
    seq = canonicalize_sequence([(5.0, "I50"), (5.0, "A41")], cat, jitter_eps=1e-6)
    assert [(e.t, e.type_idx) for e in seq.events] == [(5.0, 0), (5.0 + 1e-6, 1)]


def test_input_tie_policy_keeps_order():
    cat = DiseaseCatalog(("A41", "I50"))
    seq = canonicalize_sequence([(5.0, "I50"), (5.0, "A41")], cat, tie_policy="input")
    assert list(seq.types) == [1, 0]


def test_ordered_input_unchanged():
    cat = DiseaseCatalog(("A", "B"))
    raw = [(1.0, "B"), (2.5, "A"), (4.0, "A")]
    seq = canonicalize_sequence(raw, cat, horizon_T=10.0)
    assert [(e.t, cat.code(e.type_idx)) for e in seq.events] == raw
    assert seq.horizon_T == 10.0


def test_negative_time_rejected():
    with pytest.raises(DataError):
        canonicalize_sequence([(-1.0, "A")], DiseaseCatalog(("A",)))


def test_event_beyond_horizon_rejected():
    with pytest.raises(DataError):
        canonicalize_sequence([(11.0, "A")], DiseaseCatalog(("A",)), horizon_T=10.0)


def test_long_tie_group_stays_strict():
    cat = DiseaseCatalog(("A", "B", "C"))
    raw = [(1.0, "C"), (1.0, "B"), (1.0, "A"), (1.0 + 1e-6, "A")]
    seq = canonicalize_sequence(raw, cat)
    assert np.all(np.diff(seq.times) > 0)


def test_time_scale_divides():
    seq = canonicalize_sequence([(30.0, "A")], DiseaseCatalog(("A",)), horizon_T=60.0, time_scale=30.0)
    assert seq.events[0].t == 1.0 and seq.horizon_T == 2.0


raw_events = st.lists(
    st.tuples(st.integers(0, 20).map(float), st.sampled_from(["A", "B", "C"])), min_size=0, max_size=12
)


@settings(max_examples=60, deadline=None)
@given(raw_events)
def test_canonicalize_idempotent(raw):
    cat = DiseaseCatalog(("A", "B", "C"))
    once = canonicalize_sequence(raw, cat, horizon_T=30.0)
    again = canonicalize_sequence([(e.t, cat.code(e.type_idx)) for e in once.events], cat, horizon_T=30.0)
    assert again == once
    assert np.all(np.diff(once.times) > 0)


def _seq():
    return EventSequence("p", (Event(1.0, 0), Event(2.0, 1), Event(3.0, 0)), (0.5,), 5.0)


def test_history_prefix_strict():
    assert list(history_prefix(_seq(), 2.0).times) == [1.0]


def test_history_prefix_at_zero_and_horizon():
    seq = _seq()
    assert len(history_prefix(seq, 0.0)) == 0
    full = history_prefix(seq, 5.0)
    assert full.events == seq.events
    assert full.context == seq.context and full.patient_id == "p"


def test_history_prefix_out_of_window():
    with pytest.raises(DataError):
        history_prefix(_seq(), 6.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 5), st.floats(0, 5))
def test_history_prefix_composes(t0, t1):
    t0, t1 = sorted((t0, t1))
    seq = _seq()
    assert history_prefix(history_prefix(seq, t1), t0) == history_prefix(seq, t0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 5))
def test_labels_match_prefix_types(t):
    seq = _seq()
    flags = labels_at(seq, 3, t, inclusive=False)
    present = set(history_prefix(seq, t).types.tolist())
    assert {k for k, f in enumerate(flags) if f} == present


def test_sequence_invariants():
    with pytest.raises(DataError):
        EventSequence("p", (Event(2.0, 0), Event(1.0, 0)), (), 5.0)
    with pytest.raises(DataError):
        EventSequence("p", (Event(6.0, 0),), (), 5.0)
    with pytest.raises(DataError):
        Event(float("nan"), 0)


def test_graph_snapshot_validates_weights():
    with pytest.raises(DataError):
        GraphSnapshot(0.0, (True, True), {(0, 1): -1.0})
    with pytest.raises(DataError):
        GraphSnapshot(0.0, (True,), {(0, 1): 1.0})
    g = GraphSnapshot(1.0, (True, False), {(0, 1): 0.5})
    assert g.dense()[0, 1] == 0.5
    cat = DiseaseCatalog(("A", "B"))
    assert g.to_dict(cat) == {"t": 1.0, "labels": [True, False], "edges": [{"src": "A", "dst": "B", "w": 0.5}]}


def test_read_jsonl_names_bad_line(tmp_path):
    path = tmp_path / "d.jsonl"
    good = {"patient_id": "a", "events": [{"t": 1, "code": "X"}], "context": [], "horizon_T": 2}
    path.write_text(json.dumps(good) + "\n" + "{not json\n")
    with pytest.raises(DataError, match="line 2"):
        read_jsonl(path)
    path.write_text(json.dumps(good) + "\n" + json.dumps({"events": []}) + "\n")
    with pytest.raises(DataError, match="line 2"):
        read_jsonl(path)


def test_encode_records_drops_unknown_codes():
    cat = DiseaseCatalog(("A",))
    recs = [{"patient_id": "a", "events": [{"t": 1, "code": "A"}, {"t": 2, "code": "Z"}], "context": [], "horizon_T": 3}]
    seqs, dropped = encode_records(recs, cat, drop_unknown=True)
    assert dropped == 1 and len(seqs[0]) == 1
    with pytest.raises(DataError, match="unknown code"):
        encode_records(recs, cat)


def test_encode_records_context_length_must_agree():
    cat = DiseaseCatalog(("A",))
    recs = [
        {"patient_id": "a", "events": [], "context": [1.0], "horizon_T": 3},
        {"patient_id": "b", "events": [], "context": [], "horizon_T": 3},
    ]
    with pytest.raises(DataError, match="context length"):
        encode_records(recs, cat)
