import json

import numpy as np
import pytest

from ddp.domain import DataError, DiseaseCatalog, Event, EventSequence, sequence_to_record
from ddp.evaluate import (
    PredictionInstance,
    auc,
    auc_report,
    build_instances,
    evaluate_targets,
    transfer_eval,
)
from ddp.intensity import ModelParams
from ddp.simulate import SimConfig, simulate_dataset
from oracles import auc_pairs, random_model, random_sequence


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5
    assert auc([0.9, 0.4, 0.6, 0.1], [1, 1, 0, 0]) == 0.75
    assert auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0


def test_auc_single_class_is_an_error():
    with pytest.raises(ValueError, match="undefined"):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="undefined"):
        auc([0.1, 0.2], [0, 0])


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(0)
    s = rng.normal(size=300)
    y = rng.uniform(size=300) < 0.3
    a = auc(s, y)
    assert auc(np.exp(s), y) == a
    assert auc(3 * s + 7, y) == a
    assert auc(-s, y) == pytest.approx(1 - a, abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_auc_matches_pair_count(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 200))
    s = np.round(rng.normal(size=n), 1)  # rounding forces ties
    y = rng.uniform(size=n) < 0.4
    y[0], y[1] = True, False
    assert auc(s, y) == pytest.approx(auc_pairs(s, y), abs=1e-12)


def _synthetic_instances(n, seed, shift=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        pos = bool(rng.uniform() < 0.5)
        s = rng.normal() + (shift if pos else 0.0)
        out.append(PredictionInstance(f"p{i}", 1, 1.0, 0 if pos else 1, np.array([s, -s])))
    return out


def test_ci_contains_point_and_shrinks_with_more_patients():
    small = auc_report(_synthetic_instances(200, 1), 0, n_boot=400, seed=0)
    large = auc_report(_synthetic_instances(800, 1), 0, n_boot=400, seed=0)
    for e in (small, large):
        assert e.ci_low <= e.auc <= e.ci_high
    assert large.ci_halfwidth < small.ci_halfwidth
    assert large.ci_halfwidth == pytest.approx(0.5 * small.ci_halfwidth, rel=0.35)


def test_bootstrap_resamples_patients():
    # two instances per patient with identical scores and labels
    inst = []
    for p in _synthetic_instances(150, 2):
        inst += [p, PredictionInstance(p.patient_id, 2, 2.0, p.true_type, p.scores)]
    doubled = auc_report(inst, 0, n_boot=300, seed=3)
    single = auc_report(_synthetic_instances(150, 2), 0, n_boot=300, seed=3)
    assert doubled.auc == pytest.approx(single.auc, abs=1e-12)
    assert doubled.ci_halfwidth == pytest.approx(single.ci_halfwidth, abs=1e-12)


def test_report_is_deterministic():
    inst = _synthetic_instances(100, 4)
    assert auc_report(inst, 0, 200, seed=5) == auc_report(inst, 0, 200, seed=5)


def test_build_instances_counts_and_normalised_scores():
    model = random_model("ddp", 3, 2, 1)
    seq = random_sequence(1, 3, 2, 3)
    inst = build_instances(model, [seq, random_sequence(2, 3, 2, 1)])
    assert len(inst) == 2
    assert [i.prefix_len for i in inst] == [1, 2]
    assert [i.true_type for i in inst] == seq.types[1:].tolist()
    for i in inst:
        assert i.scores.sum() == pytest.approx(1.0, abs=1e-12) and np.all(i.scores > 0)


def test_poisson_scores_ignore_the_prefix():
    cat = DiseaseCatalog(("a", "b", "c"))
    model = ModelParams.from_values("poisson", cat, mu=[0.1, 0.3, 0.6])
    inst = build_instances(model, [random_sequence(k, 3, 0, 6) for k in range(4)])
    for i in inst:
        np.testing.assert_allclose(i.scores, [0.1, 0.3, 0.6], rtol=1e-12)


def test_constant_scorer_has_auc_one_half():
    cat = DiseaseCatalog(("a", "b"))
    model = ModelParams.from_values("poisson", cat, mu=[0.5, 0.5])
    data = [random_sequence(k, 2, 0, 5) for k in range(20)]
    rep = evaluate_targets(model, data, ["a"], n_boot=50)
    assert rep["a"].auc == 0.5


def test_report_csv_columns():
    model = random_model("hawkes", 2, 0, 0)
    data = [random_sequence(k, 2, 0, 5, pid=str(k)) for k in range(20)]
    rep = evaluate_targets(model, data, ["C00", 1], n_boot=20)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "code,model,auc,ci_halfwidth,n_pos,n_neg"
    assert [l.split(",")[0] for l in lines[1:]] == ["C00", "C01"]
    assert all(l.split(",")[1] == "hawkes" for l in lines[1:])


def test_transfer_on_same_distribution_matches_in_domain():
    model = random_model("hawkes", 3, 0, 8)
    sim = SimConfig(20.0, max_events=15, seed=1)
    a = simulate_dataset(model, sim, 400)
    b = simulate_dataset(model, sim, 400, start=10_000)
    base = evaluate_targets(model, a, ["C00", "C01"], n_boot=200)
    recs = [sequence_to_record(s, model.catalog) for s in b]
    moved = transfer_eval(model, recs, ["C00", "C01"], n_boot=200)
    for code in ("C00", "C01"):
        gap = abs(base[code].auc - moved[code].auc)
        assert gap <= base[code].ci_halfwidth + moved[code].ci_halfwidth


def test_transfer_drops_unknown_codes():
    model = random_model("hawkes", 2, 0, 1)
    data = simulate_dataset(model, SimConfig(20.0, max_events=10, seed=2), 60)
    recs = [sequence_to_record(s, model.catalog) for s in data]
    for r in recs:
        r["events"] = r["events"] + [{"t": r["horizon_T"] * 0.5, "code": "ZZ"}]
    rep = transfer_eval(model, json.loads(json.dumps(recs)), ["C00"], n_boot=20)
    assert rep.dropped_events == 60


def test_transfer_without_shared_codes_errors():
    model = random_model("hawkes", 2, 0, 1)
    recs = [{"patient_id": "x", "events": [{"t": 1.0, "code": "ZZ"}], "context": [], "horizon_T": 2.0}]
    with pytest.raises(DataError, match="no events"):
        transfer_eval(model, recs, ["C00"])


def test_target_without_both_classes_errors():
    model = random_model("hawkes", 2, 0, 1)
    only_a = [EventSequence(str(k), (Event(1.0, 0), Event(2.0, 0)), (), 3.0) for k in range(4)]
    with pytest.raises(ValueError, match="undefined"):
        evaluate_targets(model, only_a, ["C00"], n_boot=10)
