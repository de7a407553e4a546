import itertools
import json
import math

import numpy as np
import pytest

from scafds.attribution import (
    AttributionRecord,
    CaseInputs,
    EdgeContribution,
    ShapleyCapError,
    StateError,
    TrainedModels,
    build_record,
    network_attribution,
    shapley_exact,
    shapley_sampled,
)
from scafds.fusion import FusionParams
from scafds.seqmodel import Stage4Model, score_transaction


def brute_shapley(f, x, bg):
    """Shapley values from the permutation definition, enumerating all n! orders."""
    n = len(x)
    vals = np.zeros(n)
    perms = list(itertools.permutations(range(n)))
    for order in perms:
        cur = bg.copy()
        prev = f(cur)
        for i in order:
            cur[i] = x[i]
            now = f(cur)
            vals[i] += now - prev
            prev = now
    return vals / len(perms)


def test_constant_model():
    r = shapley_exact(lambda v: 3.0, np.arange(5.0), np.zeros(5))
    assert np.array_equal(r.values, np.zeros(5))
    s = shapley_sampled(lambda v: 3.0, np.arange(5.0), np.zeros(5), 100)
    assert np.array_equal(s.values, np.zeros(5)) and np.array_equal(s.stderr, np.zeros(5))


def test_linear_model():
    w = np.array([0.5, -2.0, 1.5, 3.0])
    x = np.array([1.0, 2.0, -1.0, 0.25])
    r = shapley_exact(lambda v: float(w @ v), x, np.zeros(4))
    assert np.allclose(r.values, w * x, atol=1e-14)


def test_two_feature_table():
    table = {(0, 0): 0.1, (1, 0): 1.0, (0, 1): 0.6, (1, 1): 0.2}
    f = lambda v: table[(int(v[0]), int(v[1]))]
    r = shapley_exact(f, np.array([1.0, 1.0]), np.zeros(2))
    # phi0 = ((1.0 - 0.1) + (0.2 - 0.6)) / 2, phi1 = ((0.6 - 0.1) + (0.2 - 1.0)) / 2
    assert np.allclose(r.values, [0.25, -0.15], atol=1e-15)
    assert r.base_value == 0.1 and r.output == 0.2
    xor = shapley_exact(lambda v: float((v[0] > 0.5) != (v[1] > 0.5)), np.ones(2), np.zeros(2))
    assert np.array_equal(xor.values, [0.0, 0.0])


def test_matches_permutation_definition():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(5, 5))
    f = lambda v: float(np.tanh(v @ A @ v) + v[0] * v[3])
    x, bg = rng.normal(size=5), rng.normal(size=5)
    r = shapley_exact(f, x, bg)
    assert np.allclose(r.values, brute_shapley(f, x, bg), atol=1e-12)
    assert r.efficiency_residual < 1e-12


def test_symmetry():
    f = lambda v: float(v[0] * v[1] + np.sin(v[2]) + (v[0] + v[1]) ** 2)
    r = shapley_exact(f, np.array([0.7, 0.7, 2.0]), np.zeros(3))
    assert r.values[0] == pytest.approx(r.values[1], abs=1e-14)


def test_vectorized_equals_scalar_calls():
    rng = np.random.default_rng(1)
    w = rng.normal(size=6)
    x, bg = rng.normal(size=6), rng.normal(size=6)
    a = shapley_exact(lambda v: float(np.tanh(v @ w) ** 2), x, bg)
    b = shapley_exact(lambda B: np.tanh(B @ w) ** 2, x, bg, vectorized=True)
    assert np.allclose(a.values, b.values, atol=1e-15)


def test_cap():
    with pytest.raises(ShapleyCapError):
        shapley_exact(lambda v: 0.0, np.zeros(13), np.zeros(13))
    with pytest.raises(ValueError):
        shapley_sampled(lambda v: 0.0, np.zeros(3), np.zeros(3), 99)


def nonlinear8():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(8, 8)) * 0.5
    return (lambda B: np.tanh(np.einsum("bi,ij,bj->b", B, A, B)) + B[:, 0] * B[:, 5]), rng.normal(size=8), np.zeros(8)


def test_sampled_within_three_se_of_exact():
    f, x, bg = nonlinear8()
    exact = shapley_exact(f, x, bg, vectorized=True).values
    s = shapley_sampled(f, x, bg, 400, seed=3, vectorized=True)
    assert np.all(np.abs(s.values - exact) <= 3 * s.stderr + 1e-12)
    again = shapley_sampled(f, x, bg, 400, seed=3, vectorized=True)
    assert np.array_equal(s.values, again.values)


def test_stderr_shrinks_like_sqrt_n():
    f, x, bg = nonlinear8()
    ratios = []
    for seed in range(5):
        a = shapley_sampled(f, x, bg, 1000, seed=seed, vectorized=True).stderr
        b = shapley_sampled(f, x, bg, 2000, seed=seed + 100, vectorized=True).stderr
        ratios.append(np.median(a / b))
    assert np.mean(ratios) == pytest.approx(math.sqrt(2), rel=0.1)


def test_network_examples():
    rng = np.random.default_rng(4)
    G = 3
    cv = rng.normal(size=G)
    nb = [(f"u{i}", rng.normal(size=G), f) for i, f in enumerate([0.1, 0.02, 0.5])]
    assert all(e.contribution == 0 for e in network_attribution(cv, nb, np.zeros((G, G)), 2.0))
    M = rng.normal(size=(G, G))
    one = network_attribution(cv, nb[:1], M, 2.0)
    assert one[0].contribution == pytest.approx(2.0 * cv @ M @ nb[0][1], abs=1e-14)
    three = network_attribution(cv, nb, M, 2.0, receiver="v")
    for e, (u, cu, f) in zip(three, nb):
        assert e.contribution == pytest.approx(2.0 * float(cv @ M @ cu), abs=1e-14)
        assert (e.src, e.dst, e.f) == (u, "v", f)
    total = 2.0 * cv @ M @ sum(cu for _, cu, _ in nb)
    assert sum(e.contribution for e in three) == pytest.approx(total, abs=1e-13)
    w = np.full(3, 1 / 3)
    mean_total = 2.0 * cv @ M @ np.mean([cu for _, cu, _ in nb], axis=0)
    assert sum(e.contribution for e in network_attribution(cv, nb, M, 2.0, w)) == pytest.approx(mean_total, abs=1e-13)


def models(T_features=5, G=4, n=6, seed=0):
    rng = np.random.default_rng(seed)
    s4 = Stage4Model(T_features, hidden=4, attention_dim=4, seed=seed)
    for t in s4.params.values():
        t.values[...] = rng.normal(0, 0.5, t.shape)
    fp = FusionParams.init(G, seed)
    fp.w.values[...] = [1.5, 0.3, 2.0]
    return TrainedModels(s4, fp, rng.normal(size=(n, G)), np.zeros(T_features), tuple(f"f{i}" for i in range(T_features)))


def test_build_record_layers():
    m = models()
    steps = np.random.default_rng(9).normal(size=(32, 5))
    case = CaseInputs("inst3", steps, [(1, 0.2), (4, 0.01)], node_index=3, neighbor_names=["inst1", "inst4"])
    rec = build_record(case, m)
    assert len(rec.layer3) == 32 and abs(sum(a for _, a in rec.layer3) - 1) < 1e-12
    assert rec.efficiency_residual() < 1e-8
    assert rec.output == pytest.approx(score_transaction(steps, m.stage4)[0], abs=1e-14)
    assert [e.src for e in rec.layer2] == ["inst1", "inst4"]
    M, w3, cv = m.fusion.M.values, m.fusion.w.values[2], m.embeddings[3]
    assert rec.layer2[0].contribution == pytest.approx(w3 * 0.5 * cv @ M @ m.embeddings[1], abs=1e-14)

    forensic = build_record(case, m, target="s_forensic")
    assert forensic.efficiency_residual() < 1e-8
    assert forensic.output != rec.output

    lonely = build_record(CaseInputs("inst0", steps, [], node_index=0), m)
    assert lonely.layer2 == [] and lonely.efficiency_residual() < 1e-8


def test_build_record_sampled_and_deterministic():
    m = models()
    steps = np.random.default_rng(10).normal(size=(8, 5))
    case = CaseInputs("x", steps, [(1, 0.3)], node_index=2)
    a = build_record(case, m, mode="sampled", n_permutations=300, seed=1)
    b = build_record(case, m, mode="sampled", n_permutations=300, seed=1)
    assert a.to_json() == b.to_json()
    exact = build_record(case, m)
    for (_, v), (_, e), se in zip(a.layer1, exact.layer1, a.layer1_stderr):
        assert abs(v - e) <= 3 * se + 1e-12


def test_untrained_models_raise():
    steps = np.zeros((4, 5))
    with pytest.raises(StateError):
        build_record(CaseInputs("x", steps, []), TrainedModels())
    m = models()
    m.fusion = None
    with pytest.raises(StateError):
        build_record(CaseInputs("x", steps, [(1, 0.2)], node_index=0), m)


def test_record_round_trip_and_validation():
    rec = AttributionRecord("c", [("a", 0.25), ("b", -0.5)], [EdgeContribution("u", "v", 0.1, 0.3)],
                            [(0, 0.4), (1, 0.6)], 0.5, 0.25)
    rec.validate()
    back = AttributionRecord.from_dict(json.loads(rec.to_json()))
    assert back == rec
    bad = AttributionRecord("c", [("a", 0.3)], [], [(0, 0.5)], 0.0, 0.3)
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        AttributionRecord("c", [("a", 0.3)], [], [(0, 1.0)], 0.0, 0.5).validate()
