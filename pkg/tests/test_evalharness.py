import numpy as np
import pytest

from scafds.evalharness import RunResult, SuiteResult, compare, results_csv, results_table, run_ablation_suite
from scafds.pipeline import profile_config


@pytest.fixture(scope="module")
def quick():
    return profile_config("quick")


def test_repeated_seed_has_zero_spread(quick):
    suite = run_ablation_suite(quick, seeds=(0, 0, 0), models=("full", "noedge"))
    for m in ("full", "noedge"):
        x = suite.by_model(m)
        assert len(x) == 3 and np.ptp(x) == 0.0
    table = results_table(suite)
    assert " ± 0.0000" in table
    c = [c for c in suite.comparisons if (c["a"], c["b"]) == ("full", "noedge")][0]
    # repeated seeds collapse to one paired observation
    assert c["n"] == 1
    assert c["mean_diff"] == pytest.approx(suite.by_model("full")[0] - suite.by_model("noedge")[0], abs=1e-15)


def test_results_csv_and_table_layout():
    rows = [RunResult("full", s, 0.5 + 0.1 * s, 0.8, 0.4, 0.3) for s in range(3)]
    rows += [RunResult("noedge", s, 0.3, 0.7, 0.2, 0.5) for s in range(3)]
    rows.append(RunResult("gcn", 0, float("nan"), float("nan"), float("nan"), float("nan"), failed=True))
    suite = SuiteResult(rows)
    suite.comparisons.append(compare(suite, "full", "noedge"))
    text = results_csv(suite)
    assert text.splitlines()[0] == "model,seed,auprc,auroc,f1,threshold,failed"
    assert len(text.splitlines()) == 8
    table = results_table(suite)
    assert "0.6000 ± 0.1000" in table
    assert "0/1" in table
    c = suite.comparisons[0]
    assert c["mean_diff"] == pytest.approx(0.3) and c["min_diff"] == pytest.approx(0.2)
    with pytest.raises(ValueError):
        RunResult("full", 0, 1.5, 0.5, 0.5, 0.5)
