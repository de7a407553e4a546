import numpy as np
import pytest

from scafds.attribution import AttributionRecord, EdgeContribution
from scafds.sargen import (
    COUNTERPARTY,
    TEMPORAL,
    TRANSACTION_FEATURE,
    Grounding,
    SarAssertion,
    Thresholds,
    candidate_assertions,
    factual_accuracy,
    gate_assertions,
    grounding_rate,
    regate,
    render_report,
    summary_csv,
)

META = {"subject_id": "inst7", "activity_type": "fraud-contagion-exposure", "amounts": [120.5, 9800.0],
        "date_range": ["2023-03-01", "2023-03-04"]}


def record(T=32, peaked=True, n_feat=10, edges_f=(0.1, 0.2, 0.01, 0.05), seed=0):
    rng = np.random.default_rng(seed)
    phi = rng.normal(size=n_feat)
    alpha = np.full(T, 1.0 / T)
    if peaked:
        alpha = rng.dirichlet(np.ones(T) * 0.3)
    edges = [EdgeContribution(f"u{i}", "inst7", float(rng.normal()), f) for i, f in enumerate(edges_f)]
    return AttributionRecord("inst7", [(f"x{i}", float(v)) for i, v in enumerate(phi)], edges,
                             [(t, float(a)) for t, a in enumerate(alpha)], 0.1, 0.1 + float(phi.sum()))


def by_layer(assertions, kind):
    return [a for a in assertions if a.kind == kind]


def test_uniform_attention_emits_no_temporal_assertion():
    emitted, suppressed = gate_assertions(record(peaked=False))
    assert by_layer(emitted, TEMPORAL) == []
    assert len(by_layer(suppressed, TEMPORAL)) == 1
    assert Thresholds().temporal_cutoff(32) == 0.0625


def test_peaked_attention_emits_temporal_assertion():
    emitted, _ = gate_assertions(record())
    assert len(by_layer(emitted, TEMPORAL)) >= 1


def test_percentile_gate_passes_three_of_ten():
    for seed in range(20):
        emitted, suppressed = gate_assertions(record(seed=seed))
        assert len(by_layer(emitted, TRANSACTION_FEATURE)) == 3
        assert len(by_layer(suppressed, TRANSACTION_FEATURE)) == 7


def test_edge_gate_is_strict():
    emitted, suppressed = gate_assertions(record())
    assert sorted(a.grounding.value for a in by_layer(emitted, COUNTERPARTY)) == [0.1, 0.2]
    assert sorted(a.grounding.value for a in by_layer(suppressed, COUNTERPARTY)) == [0.01, 0.05]


def test_every_candidate_lands_in_one_set():
    rec = record(seed=3)
    cands = candidate_assertions(rec)
    emitted, suppressed = gate_assertions(rec)
    assert len(cands) == len(emitted) + len(suppressed) == 10 + 4 + 1
    assert {a.grounding.ref for a in emitted}.isdisjoint(a.grounding.ref for a in suppressed)


def test_assertion_invariant():
    with pytest.raises(ValueError):
        SarAssertion(COUNTERPARTY, "x", Grounding(2, 0, 0.05, 0.05), True)


def test_render_compliance():
    emitted, suppressed = gate_assertions(record())
    rep = render_report(META, emitted, suppressed)
    assert rep.compliant and rep.missing_fields == []
    assert all(f"[{g['ref']}]" in text for g, text in zip(rep.grounding, rep.description))
    no_dates = render_report({k: v for k, v in META.items() if k != "date_range"}, emitted)
    assert not no_dates.compliant and no_dates.missing_fields == ["date_range"]
    empty = render_report(META, [])
    assert empty.description == [] and not empty.compliant
    with pytest.raises(ValueError):
        render_report({}, emitted)
    with pytest.raises(ValueError):
        render_report(META, suppressed)


def test_regate_soundness_and_completeness():
    for seed in range(10):
        emitted, suppressed = gate_assertions(record(seed=seed))
        assert regate(render_report(META, emitted, suppressed)) == (0, 0)


def test_deterministic_bytes():
    a = render_report(META, *gate_assertions(record(seed=5))).to_json()
    b = render_report(META, *gate_assertions(record(seed=5))).to_json()
    assert a == b


def test_grounding_rates():
    rec = record()
    everything = candidate_assertions(rec)
    r = grounding_rate([(everything, everything)])
    assert r.per_layer == {1: 1.0, 2: 1.0, 3: 1.0} and r.overall == 1.0
    # ten features, four edges with two above 0.05, one peaked attention vector
    r = grounding_rate([(candidate_assertions(rec), gate_assertions(rec)[0])])
    assert r.per_layer[1] == pytest.approx(0.3, abs=1e-15)
    assert r.per_layer[2] == 0.5 and r.per_layer[3] == 1.0
    assert r.overall == pytest.approx(0.6, abs=1e-15)
    no_edges = record(edges_f=())
    r = grounding_rate([(candidate_assertions(no_edges), gate_assertions(no_edges)[0])])
    assert r.per_layer[2] is None and r.overall == pytest.approx(0.65, abs=1e-15)
    uniform = [record(peaked=False, seed=s) for s in range(3)]
    assert grounding_rate([(candidate_assertions(u), gate_assertions(u)[0]) for u in uniform]).per_layer[3] == 0.0
    with pytest.raises(ValueError):
        grounding_rate([])


def test_summary_csv():
    rec = record()
    r = grounding_rate([(candidate_assertions(rec), gate_assertions(rec)[0])])
    text = summary_csv(["inst7"], [r], r)
    assert text.splitlines()[0] == "case,layer1,layer2,layer3,overall"
    assert text.splitlines()[-1] == "ALL,0.300000,0.500000,1.000000,0.600000"


def test_factual_accuracy():
    truth = dict(META)
    rep = render_report(META, gate_assertions(record())[0])
    assert factual_accuracy([rep], [truth]) == 1.0
    # ten compared fields: subject, date range and eight amounts, one amount corrupted
    amounts = [float(a) for a in range(100, 108)]
    truth10 = {"subject_id": "s", "date_range": ["2023-01-01", "2023-01-02"], "amounts": amounts}
    bad = dict(truth10, amounts=amounts[:3] + [999.0] + amounts[4:])
    assert factual_accuracy([bad], [truth10]) == pytest.approx(0.9, abs=1e-15)
    assert factual_accuracy([], []) is None


def test_threshold_validation():
    with pytest.raises(ValueError):
        Thresholds(tau1_percentile=100)
    with pytest.raises(ValueError):
        Thresholds(tau2=-0.1)
    with pytest.raises(ValueError):
        Thresholds(tau3=1.5)
    assert Thresholds(tau3=0.2).temporal_cutoff(32) == 0.2
