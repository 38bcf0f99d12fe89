"""End-to-end pipeline through the command-line surface."""

import json

import pytest

from qac.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    log = root / "log.tsv"
    data = root / "data"
    model = root / "model.qac"
    config = root / "config.json"
    config.write_text(json.dumps({
        "model": {"variant": "factor", "e": 8, "h": 24, "m": 4, "r": 2, "vocab_size": 40},
        "train": {"epochs": 2, "batch_size": 16, "seed": 3},
    }))
    assert main(["synth", "--out", str(log), "--seed", "4"]) == 0
    assert main(["prepare", "--log", str(log), "--out", str(data),
                 "--test-users", "6", "--valid-fraction", "0.05", "--seed", "1"]) == 0
    assert main(["train", "--config", str(config), "--data", str(data),
                 "--out", str(model)]) == 0
    return root, log, data, model


def test_prepare_writes_disjoint_splits(pipeline):
    _, _, data, _ = pipeline
    train_users = {line.split("\t")[0] for line in (data / "train.tsv").read_text().splitlines()}
    test_users = {line.split("\t")[0] for line in (data / "test.tsv").read_text().splitlines()}
    assert train_users and test_users
    assert not (train_users & test_users)


def test_complete_prints_ranked_rows(pipeline, capsys):
    *_, model = pipeline
    assert main(["complete", "--model", str(model), "--user", "new",
                 "--prefix", "ab", "--top", "5", "--beam-width", "20"]) == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.strip().splitlines()]
    assert 1 <= len(rows) <= 5
    assert [r[0] for r in rows] == [str(i) for i in range(1, len(rows) + 1)]
    assert all(r[1].startswith("ab") for r in rows)
    assert all(float(r[2]) <= 0 for r in rows)


def test_mpc_roundtrip_via_cli(pipeline, capsys):
    root, _, data, _ = pipeline
    index_path = root / "mpc.idx"
    assert main(["mpc-build", "--data", str(data), "--out", str(index_path)]) == 0
    capsys.readouterr()
    first_query = (data / "train.tsv").read_text().splitlines()[0].split("\t")[2]
    assert main(["mpc-complete", "--index", str(index_path),
                 "--prefix", first_query[:2]]) == 0
    out = capsys.readouterr().out
    for line in out.strip().splitlines():
        rank, query, count = line.split("\t")
        assert query.startswith(first_query[:2])
        assert int(count) >= 3


def test_eval_writes_report_and_csvs(pipeline, capsys):
    root, _, data, model = pipeline
    report_path = root / "report.json"
    assert main(["eval", "--model", str(model), "--data", str(data),
                 "--out", str(report_path), "--beam-width", "20",
                 "--online-lr", "5.0", "--seed", "2"]) == 0
    report = json.loads(report_path.read_text())
    assert report["variant"] == "factor"
    for key in ("result", "baseline_online_lr0", "improvement_curve",
                "mrr_by_prefix_len", "mrr_by_query_len", "trace_summary"):
        assert key in report, key
    assert 0.0 <= report["result"]["mrr_all"] <= 1.0
    assert (root / "improvement_curve.csv").exists()
    assert (root / "mrr_by_prefix_len.csv").exists()
    assert (root / "mrr_by_query_len.csv").exists()


def test_eval_variant_mismatch_rejected(pipeline):
    root, _, data, model = pipeline
    with pytest.raises(SystemExit):
        main(["eval", "--model", str(model), "--data", str(data),
              "--variant", "concat", "--out", str(root / "r.json")])


def test_eval_mpc_variant(pipeline, capsys):
    root, _, data, _ = pipeline
    report_path = root / "mpc_report.json"
    assert main(["eval", "--variant", "mpc", "--data", str(data),
                 "--out", str(report_path), "--seed", "2"]) == 0
    report = json.loads(report_path.read_text())
    assert report["variant"] == "mpc"
    assert report["result"]["mrr_unseen"] == 0.0
