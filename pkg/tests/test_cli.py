import csv
import json

import pytest

from scafds.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_STATE, EXIT_USAGE, main


def files(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data, model = root / "data", root / "model"
    assert main(["generate", "--profile", "quick", "--out", str(data)]) == EXIT_OK
    assert main(["train", "--profile", "quick", "--data", str(data), "--out", str(model)]) == EXIT_OK
    return root, data, model


def test_generate_is_byte_identical(trained, tmp_path, capsys):
    _, data, _ = trained
    assert main(["generate", "--profile", "quick", "--out", str(tmp_path / "again")]) == EXIT_OK
    assert files(data) == files(tmp_path / "again")
    assert "positive rate 0.15" in capsys.readouterr().out
    names = set(files(data))
    assert {"nodes_q0.csv", "edges_q1.csv", "events.csv", "transactions.csv", "manifest.json"} <= names


def test_generate_bad_percentile(tmp_path):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"synth": {"label_percentile": 140}}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_CONFIG


def test_train_outputs_and_resume(trained, tmp_path):
    _, data, model = trained
    for name in ("stage3.json", "stage4.json", "stage5.json", "scores.csv", "loss_curve.csv", "manifest.json"):
        assert (model / name).is_file()
    full_hash = json.loads((model / "manifest.json").read_text())["state_hash"]
    part = tmp_path / "part"
    assert main(["train", "--profile", "quick", "--data", str(data), "--out", str(part), "--stop-after", "7"]) == 0
    assert json.loads((part / "stage3.json").read_text())["epoch"] == 7
    resumed = tmp_path / "resumed"
    assert main(["train", "--profile", "quick", "--data", str(data), "--out", str(resumed),
                 "--resume", str(part / "stage3.json")]) == EXIT_OK
    assert json.loads((resumed / "manifest.json").read_text())["state_hash"] == full_hash
    assert main(["train", "--profile", "quick", "--data", str(data), "--out", str(tmp_path / "x"), "--seed", "3",
                 "--resume", str(part / "stage3.json")]) == EXIT_STATE


def test_train_missing_data(tmp_path):
    assert main(["train", "--profile", "quick", "--data", str(tmp_path / "nope"), "--out", str(tmp_path)]) == EXIT_IO


def test_evaluate_model_lists(tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--profile", "quick", "--models", ",", "--out", str(out)]) == EXIT_USAGE
    assert main(["evaluate", "--profile", "quick", "--models", "bogus", "--out", str(out)]) == EXIT_USAGE
    assert main(["evaluate", "--profile", "quick", "--models", "gcn", "--seed", "0", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert [r["model"] for r in rows] == ["gcn"]
    table = (out / "results_table.txt").read_text().splitlines()
    assert len(table) == 2


def test_sar_reports_and_rerun(trained, tmp_path):
    _, data, model = trained
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["sar", "--profile", "quick", "--data", str(data), "--models-dir", str(model),
                     "--cases", "3", "--out", str(out)]) == EXIT_OK
    assert files(a) == files(b)
    assert len(list((a / "reports").glob("*.json"))) == 3
    summary = list(csv.reader(open(a / "sar_summary.csv")))
    assert summary[0] == ["case", "layer1", "layer2", "layer3", "overall"] and summary[-1][0] == "ALL"
    metrics = json.loads((a / "sar_metrics.json").read_text())
    assert metrics["factual_accuracy"] == 1.0 and metrics["compliance_rate"] == 1.0


def test_sar_uniform_attention_case(trained, tmp_path):
    _, data, model = trained
    flat = tmp_path / "flat"
    flat.mkdir()
    for p in model.iterdir():
        (flat / p.name).write_bytes(p.read_bytes())
    ck = json.loads((flat / "stage4.json").read_text())
    # zero scoring vector: every step gets the same attention score
    ck["params"]["att.v"]["data"] = [0.0] * len(ck["params"]["att.v"]["data"])
    (flat / "stage4.json").write_text(json.dumps(ck))
    out = tmp_path / "sar"
    assert main(["sar", "--profile", "quick", "--data", str(data), "--models-dir", str(flat),
                 "--cases", "2", "--out", str(out)]) == EXIT_OK
    rows = list(csv.DictReader(open(out / "sar_summary.csv")))
    assert all(float(r["layer3"]) == 0.0 for r in rows)


def test_attribute_and_missing_models(trained, tmp_path, capsys):
    _, data, model = trained
    out = tmp_path / "attr"
    assert main(["attribute", "--profile", "quick", "--data", str(data), "--models-dir", str(model),
                 "--cases", "2", "--out", str(out)]) == EXIT_OK
    assert "top feature" in capsys.readouterr().out
    assert main(["sar", "--data", str(data), "--models-dir", str(tmp_path / "none"), "--out", str(out)]) == EXIT_STATE


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--ablation", "nothing"])
    assert exc.value.code == EXIT_USAGE
