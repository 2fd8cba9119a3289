import csv
import json

import pytest

from icmdrift.cli import main
from icmdrift.ensemble import RunRecord
from icmdrift.evaluation import accuracy
from icmdrift.streams import STAGGER_RULES, STAGGER_SCHEMA, ConceptSchedule, load_csv

SMALL = ["--n", "1500", "--chunk-size", "500", "--theta", "100,200", "--noise", "0.1"]


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--dataset", "stagger", *SMALL, "--out", str(out), *extra])
    assert code == 0
    return out, json.loads((out / "summary.json").read_text())


def test_generate_writes_stream(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["generate", "--dataset", "stagger", "--n", "2000", "--chunk-size", "500", "--seed", "3", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    stream = list(load_csv(a, STAGGER_SCHEMA, "label"))
    assert len(stream) == 2000
    sched = ConceptSchedule(("a", "b", "c", "d"), 500)
    assert sched.drift_points(2000) == [501, 1001, 1501]
    assert all(z.label == int(STAGGER_RULES[sched.concept_at(z.timestamp)](z.features)) for z in stream)


def test_generate_rejects_csv_dataset(tmp_path):
    src = tmp_path / "s.csv"
    src.write_text("a,label\n1,0\n")
    assert main(["generate", "--dataset", str(src), "--out", str(tmp_path / "x.csv")]) == 2


def test_run_single_seed_summary(tmp_path):
    out, summary = _run(tmp_path, "r", "--seeds", "1")
    rec = RunRecord.from_csv(out / "run_seed1.csv", summary["classes"])
    est = accuracy(rec)
    assert summary["aggregate"]["p_hat"] == est.p_hat
    assert summary["aggregate"]["k"] == 1
    cfg = summary["config"]
    # every default is echoed explicitly
    for key in ("r", "delta", "betting", "pvalue_window", "epsilon", "window", "trees", "noise_mode", "chunk_size"):
        assert cfg[key] is not None
    assert cfg["theta"] == [100, 200]


def test_run_is_reproducible(tmp_path):
    a, _ = _run(tmp_path, "a", "--seeds", "1,2")
    b, _ = _run(tmp_path, "b", "--seeds", "1,2")
    for name in ("run_seed1.csv", "run_seed2.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    sa = json.loads((a / "summary.json").read_text())
    sb = json.loads((b / "summary.json").read_text())
    sa["config"].pop("out"), sb["config"].pop("out")
    assert sa == sb


def test_single_mode_uses_one_pipeline(tmp_path):
    out = tmp_path / "single"
    assert main(["run", "--dataset", "stagger", "--n", "800", "--mode", "single", "--seeds", "1", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["theta"] == [200]
    with open(out / "run_seed1.csv") as fh:
        header = next(csv.reader(fh))
    assert [h for h in header if h.startswith("pred_")] == ["pred_1"]


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"betting": "IH", "r": 2}))
    _, summary = _run(tmp_path, "c", "--seeds", "1", "--betting", "MIH", "--config", str(cfg))
    assert summary["config"]["betting"] == "IH" and summary["config"]["r"] == 2


def test_subsets_full_set_matches_run(tmp_path):
    out, summary = _run(tmp_path, "s", "--seeds", "1")
    assert main(["subsets", str(out)]) == 0
    with open(out / "subsets.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    full = [r for r in rows if r["size"] == "2"][0]
    assert float(full["accuracy"]) == summary["aggregate"]["p_hat"]
    assert float(full["unavailable"]) == summary["aggregate"]["unavailable"]


def test_subsets_pipeline_mismatch(tmp_path):
    out, summary = _run(tmp_path, "m", "--seeds", "1")
    summary["config"]["theta"] = [100, 200, 300]
    (out / "summary.json").write_text(json.dumps(summary))
    assert main(["subsets", str(out)]) == 3


def _summary(path, p, n, k=1):
    path.write_text(json.dumps({"aggregate": {"p_hat": p, "n": n, "k": k}}))
    return str(path)


def test_ttest_through_files(tmp_path, capsys):
    a = _summary(tmp_path / "a.json", 0.9, 1000)
    b = _summary(tmp_path / "b.json", 0.8, 1000)
    out = tmp_path / "t.json"
    assert main(["ttest", a, b, "--rho", "-1", "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert abs(res["z"] - 4.5175) <= 0.001 and res["rejected"] is True

    assert main(["ttest", a, a]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["z"] == 0.0 and res["rejected"] is False

    main(["ttest", a, b, "--rho", "0"])
    z0 = json.loads(capsys.readouterr().out)["z"]
    assert z0 >= 4.5175


def test_ttest_degenerate_is_runtime_error(tmp_path):
    a = _summary(tmp_path / "a.json", 1.0, 100)
    assert main(["ttest", a, a]) == 4


@pytest.mark.parametrize(
    "argv, code",
    [
        (["run", "--dataset", "nowhere.csv"], 2),
        (["run", "--dataset", "stagger", "--betting", "XYZ"], 2),
        (["run", "--dataset", "stagger", "--noise", "2"], 2),
        (["ttest", "missing_a.json", "missing_b.json"], 3),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    assert main([*argv, *(["--out", str(tmp_path / "o")] if argv[0] == "run" else [])]) == code


def test_bad_csv_cell_is_data_error(tmp_path):
    src = tmp_path / "bad.csv"
    src.write_text("f1,f2,label\n1.0,2.0,0\n1.0,oops,1\n")
    assert main(["run", "--dataset", str(src), "--theta", "1", "--out", str(tmp_path / "o")]) == 3


def test_csv_dataset_end_to_end(tmp_path):
    src = tmp_path / "elec.csv"
    rows = ["nswprice,nswdemand,transfer,vicprice,vicdemand,class"]
    for i in range(600):
        up = (i // 50) % 2
        rows.append(f"{0.3 + 0.4 * up + (i % 7) * 0.01},{(i % 11) * 0.05},0.4,0.0035,0.42,{'UP' if up else 'DOWN'}")
    src.write_text("\n".join(rows) + "\n")
    out = tmp_path / "o"
    argv = ["run", "--dataset", str(src), "--label-column", "class", "--theta", "100,200", "--out", str(out)]
    assert main(argv) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["classes"] == ["DOWN", "UP"]
    assert summary["runs"][0]["available"] > 0
