import csv
import json
import subprocess
import sys

import pytest

from percabs.cli import main
from percabs.config import config_hash, read_scenario_bytes
from percabs.contracts import load_pipeline
from percabs.partition import build_partition
from percabs.perception import export_csv, import_csv, sample_dataset
from percabs.synthesis import load_abstraction, to_json


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "train.csv"
    assert main(["gen-data", "--scenario", "gem", "--out", str(path), "--per-cell", "20",
                 "--seed", "4", "--envs", "0,1"]) == 0
    return path


def test_gen_data_default_count_and_manifest(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert main(["gen-data", "--scenario", "gem", "--out", str(out)]) == 0
    assert len(import_csv(out)) == 72_000
    printed = capsys.readouterr().out.splitlines()
    assert printed[0].startswith("72000 rows") and printed[1] == "iy,itheta,count"
    assert printed[2] == "0,0,1800" and len(printed) == 42
    man = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert man["config"]["sha256"] == config_hash(read_scenario_bytes("gem")[0])
    assert man["seeds"] == {"data": 0} and "sample" in man["timings_s"]


def test_gen_data_is_reproducible(tmp_path):
    for name in ("a.csv", "b.csv"):
        assert main(["gen-data", "--scenario", "agbot", "--out", str(tmp_path / name),
                     "--per-cell", "3", "--seed", "9"]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.mark.parametrize("extra", [["--per-cell", "0"], ["--envs", "0,42"], ["--envs", "x"],
                                   ["--partition", "8by5"]])
def test_gen_data_usage_errors(tmp_path, extra):
    assert main(["gen-data", "--scenario", "gem", "--out", str(tmp_path / "d.csv")] + extra) == 2


def test_unknown_scenario_is_usage_error(tmp_path):
    assert main(["gen-data", "--scenario", str(tmp_path / "none.toml"),
                 "--out", str(tmp_path / "d.csv")]) == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as info:
        main(["gen-data", "--scenario", "gem"])
    assert info.value.code == 2


def test_synthesize_missing_data(tmp_path):
    assert main(["synthesize", "--scenario", "gem", "--data", str(tmp_path / "none.csv"),
                 "--out", str(tmp_path / "a.json")]) == 2


@pytest.fixture(scope="module")
def small_artifact(small_csv):
    out = small_csv.parent / "a.json"
    assert main(["synthesize", "--scenario", "gem", "--data", str(small_csv),
                 "--out", str(out)]) == 0
    return out


def test_synthesize_writes_artifact_and_summary(small_artifact, small_csv):
    abst = load_abstraction(small_artifact)
    assert len(abst.cells) == 40 and abst.counts()["fallback"] == 0
    man = json.loads(small_artifact.with_name("a.json.manifest.json").read_text())
    assert man["command"] == "synthesize"
    assert man["inputs"]["data"]["path"] == str(small_csv)


def test_synthesize_partial_exit(tmp_path, capsys):
    from percabs.config import load_scenario
    cfg = load_scenario("gem")
    cells = build_partition(cfg.partition)
    data = sample_dataset(cells[:-1], [0], cfg.perception, 10, 0)
    export_csv(data, tmp_path / "d.csv")
    code = main(["synthesize", "--scenario", "gem", "--data", str(tmp_path / "d.csv"),
                 "--out", str(tmp_path / "a.json")])
    assert code == 3
    assert "cell (7, 4): degenerate_fit" in capsys.readouterr().err
    assert load_abstraction(tmp_path / "a.json").at(7, 4).status.value == "fallback"


def test_synthesize_error_fn_switch(tmp_path, small_csv):
    out = tmp_path / "v2.json"
    assert main(["synthesize", "--scenario", "gem", "--data", str(small_csv), "--out", str(out),
                 "--error-fn", "V2", "--partition", "4x1"]) == 0
    doc = json.loads(out.read_text())
    assert doc["error_fn"] == "V2" and doc["partition"] == {"n_y": 4, "n_theta": 1}


def test_verify_induction_pass(gem_artifact_path, tmp_path):
    report = tmp_path / "r.json"
    assert main(["verify", "--abstraction", str(gem_artifact_path), "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["induction"]["verdict"] == "pass"
    assert (tmp_path / "r.json.manifest.json").exists()


def test_verify_tampered_exit_4(gem_artifact_path, tmp_path, capsys):
    doc = json.loads(gem_artifact_path.read_text())
    cells = [c for c in doc["cells"] if c["r"] != "inf"]
    big = max(cells, key=lambda c: c["r"])
    big["r"] *= 10
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--abstraction", str(bad)]) == 4
    rep = json.loads((tmp_path / "bad.json.report.json").read_text())
    w = rep["induction"]["witness"]
    assert w["cell"] == [big["iy"], big["itheta"]]
    assert "witness" in capsys.readouterr().out


def test_verify_reach_horizon_zero(small_artifact, tmp_path):
    assert main(["verify", "--abstraction", str(small_artifact), "--reach", "--horizon", "0",
                 "--report", str(tmp_path / "r.json")]) == 0


def test_verify_bad_adversary(small_artifact, tmp_path):
    assert main(["verify", "--abstraction", str(small_artifact), "--reach", "--adversary",
                 "lucky", "--report", str(tmp_path / "r.json")]) == 2


def test_verify_rejects_unknown_version(small_artifact, tmp_path):
    doc = to_json(load_abstraction(small_artifact))
    doc["format_version"] = 99
    bad = tmp_path / "v.json"
    bad.write_text(json.dumps(doc))
    assert main(["verify", "--abstraction", str(bad)]) == 2


def test_threads_must_be_positive(small_artifact):
    assert main(["verify", "--abstraction", str(small_artifact), "--threads", "0"]) == 2


def test_evaluate_outputs(small_artifact, small_csv, tmp_path, capsys):
    svg, table = tmp_path / "h.svg", tmp_path / "h.csv"
    assert main(["evaluate", "--abstraction", str(small_artifact), "--test", str(small_csv),
                 "--heatmap", str(svg), "--csv", str(table)]) == 0
    assert svg.read_text().count('id="cell_') == 40
    rows = list(csv.DictReader(open(table, newline="")))
    assert len(rows) == 40 and sum(int(r["total"]) for r in rows) == 1600
    assert capsys.readouterr().out.startswith("mean cell score")
    assert (tmp_path / "h.svg.manifest.json").exists()


def test_contracts_example(tmp_path):
    assert main(["contracts", "--pipeline", "example"]) == 0
    report = tmp_path / "c.json"
    assert main(["contracts", "--pipeline", "example", "--check",
                 "init,seq,seq-strict,sat,presume", "--falsify-cert", "200", "--seed", "1",
                 "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["apply"] == "assumed" and len(doc["cert"]) == 3


def test_contracts_usage_and_violation(tmp_path):
    assert main(["contracts", "--pipeline", "example", "--check", "bogus"]) == 2
    assert main(["contracts", "--pipeline", str(tmp_path / "none.toml")]) == 2
    from importlib import resources
    text = (resources.files("percabs") / "presets" / "pipeline.toml").read_text()
    mutated = tmp_path / "p.toml"
    # the first stage now covers only part of the lane
    mutated.write_text(text.replace("assume = [{ lo = [0.0, -0.27], hi = [1.2, 0.27] }]",
                                    "assume = [{ lo = [0.5, -0.27], hi = [1.2, 0.27] }]", 1))
    load_pipeline(mutated)
    assert main(["contracts", "--pipeline", str(mutated)]) == 4


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "percabs", "--version"], capture_output=True,
                         text=True, check=True)
    assert out.stdout.startswith("percabs ")
