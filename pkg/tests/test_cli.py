import json
import subprocess
import sys

import pytest

from cardlearn.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--fixture", "toy", "--out", d / "data") == 0
    schema = d / "data" / "schema.json"
    assert run("gen-workload", "--schema", schema, "--data", d / "data", "--out", d / "train.jsonl",
               "--queries-per-template", 30, "--include-single", "--seed", 1) == 0
    assert run("gen-workload", "--schema", schema, "--data", d / "data", "--out", d / "test.jsonl",
               "--queries-per-template", 5, "--seed", 2) == 0
    assert run("train", "--schema", schema, "--workload", d / "train.jsonl", "--out", d / "model.json",
               "--report", d / "report.json", "--n-lcs", 4, "--n-h", 16, "--epochs", 3, "--batch-size", 16, "--quiet") == 0
    return d, schema


def test_full_pipeline(pipeline, capsys):
    d, schema = pipeline
    assert run("estimate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl",
               "--out", d / "est.jsonl") == 0
    recs = [json.loads(l) for l in (d / "est.jsonl").read_text().splitlines()]
    assert len(recs) == 4 * 5
    assert all(r["estimate"] > 0 for r in recs)
    report = json.loads((d / "report.json").read_text())
    assert len(report["train"]["epochs"]) == 3
    assert run("evaluate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl",
               "--train-workload", d / "train.jsonl", "--out", d / "eval.json", "--dump", d / "dump.jsonl") == 0
    out = capsys.readouterr().out
    assert "median" in out
    ev = json.loads((d / "eval.json").read_text())
    assert ev["splits"]["all"]["count"] == 20
    assert len((d / "dump.jsonl").read_text().splitlines()) == 20
    assert run("inspect", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl") == 0
    info = json.loads(capsys.readouterr().out)
    assert set(info["checkpoint"]["tables"]) == {"A", "B", "D"}
    assert info["workload"]["queries"] == 20


def test_subqueries_of_three_table_query(pipeline):
    d, schema = pipeline
    lines = (d / "test.jsonl").read_text().splitlines()
    three = [l for l in lines[1:] if len(json.loads(l)["tables"]) == 3][:1]
    (d / "one.jsonl").write_text("\n".join([lines[0], *three]) + "\n")
    assert run("estimate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "one.jsonl",
               "--subqueries", "--out", d / "sub.jsonl") == 0
    recs = [json.loads(l) for l in (d / "sub.jsonl").read_text().splitlines()]
    assert len(recs) == 7
    assert sorted(len(r["aliases"]) for r in recs) == [1, 1, 1, 2, 2, 2, 3]


def test_estimate_twice_identical(pipeline):
    d, schema = pipeline
    outs = []
    for name in ("e1.jsonl", "e2.jsonl"):
        assert run("estimate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl",
                   "--out", d / name) == 0
        outs.append((d / name).read_bytes())
    assert outs[0] == outs[1]


def test_generation_is_deterministic(pipeline, tmp_path):
    d, schema = pipeline
    for name in ("a.jsonl", "b.jsonl"):
        assert run("gen-workload", "--schema", schema, "--data", d / "data", "--out", tmp_path / name,
                   "--queries-per-template", 30, "--include-single", "--seed", 1) == 0
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes() == (d / "train.jsonl").read_bytes()


def test_serving_commands_never_load_data_access_code(pipeline):
    d, schema = pipeline
    script = (
        "import sys\n"
        "from cardlearn.cli import main\n"
        f"rc = main({sys.argv[:0]!r} + sys.argv[1:])\n"
        "assert rc == 0, rc\n"
        "bad = [m for m in ('cardlearn.oracle', 'cardlearn.workload') if m in sys.modules]\n"
        "print('LOADED', bad)\n"
    )
    cmds = [
        ["train", "--schema", schema, "--workload", d / "train.jsonl", "--out", d / "m2.json", "--epochs", 1,
         "--n-lcs", 2, "--n-h", 8, "--quiet"],
        ["estimate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl", "--out", d / "x.jsonl"],
        ["evaluate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", d / "test.jsonl"],
        ["inspect", "--schema", schema, "--checkpoint", d / "model.json"],
    ]
    for cmd in cmds:
        res = subprocess.run([sys.executable, "-c", script, *map(str, cmd)], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert "LOADED []" in res.stdout, (cmd[0], res.stdout)


def test_exit_codes(pipeline, tmp_path, capsys):
    d, schema = pipeline
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"format":"cardlearn-workload","version":1}\n{"query": 3}\n')
    assert run("estimate", "--schema", schema, "--checkpoint", d / "model.json", "--workload", bad) == 2
    assert "bad.jsonl:2" in capsys.readouterr().err
    assert run("estimate", "--schema", schema, "--checkpoint", tmp_path / "missing.json", "--workload", d / "test.jsonl") == 2
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"epochz": 3}')
    assert run("train", "--schema", schema, "--workload", d / "train.jsonl", "--out", tmp_path / "m.json", "--config", cfg) == 2
    # NaN learning rate trips the non-finite guard during training
    assert run("train", "--schema", schema, "--workload", d / "train.jsonl", "--out", tmp_path / "m.json",
               "--lr", "nan", "--epochs", 2, "--quiet") == 3


def test_config_file_supplies_defaults(pipeline, tmp_path):
    d, schema = pipeline
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_lcs": 3, "n_h": 8, "epochs": 1, "seed": 4}))
    assert run("train", "--schema", schema, "--workload", d / "train.jsonl", "--out", tmp_path / "m.json",
               "--config", cfg, "--quiet") == 0
    ck = json.loads((tmp_path / "m.json").read_text())
    assert ck["model_config"]["n_lcs"] == 3 and ck["model_config"]["seed"] == 4
    assert ck["train_config"]["max_epochs"] == 1
