import json

import pytest

from partopt.cli import EXIT_OK, EXIT_PARSE, EXIT_PIPELINE, EXIT_USAGE, run

SWITCH = """\
pmdp sw
param p q e
group p q
action go halt
state i label zone=a
state a label zone=a
state b label zone=b
state c label zone=b
init i
trans i go : p -> a + q -> b
trans a go : e -> i + 1 - e -> a
trans b go : 1 -> c
trans c go : 1 -> c
trans c halt : 1 -> c
"""

CYCLE = "policy cyc\np=1, q=0\n"
SPLIT = "policy split\np=0, q=1\n"


@pytest.fixture
def files(tmp_path):
    paths = {}
    for name, text in {
        "m.pmdp": SWITCH,
        "cyc.pol": CYCLE,
        "split.pol": SPLIT,
        "both.pol": CYCLE + SPLIT,
        "env.val": "e=0.5\n",
        "b.mask": "mask only-a\nallow zone=b : go\n",
        "block.mask": "mask block\nallow zone=a : halt\n",
    }.items():
        (tmp_path / name).write_text(text)
        paths[name] = str(tmp_path / name)
    paths["dir"] = tmp_path
    return paths


def call(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(files, capsys):
    code, out, _ = call(capsys, "validate", files["m.pmdp"])
    assert code == EXIT_OK and out.startswith("0 violations")


def test_validate_reports_violations(files, capsys, tmp_path):
    bad = tmp_path / "bad.pmdp"
    bad.write_text(SWITCH.replace("trans c go : 1 -> c", "trans c go : 0.5 -> c"))
    code, out, _ = call(capsys, "validate", bad)
    assert code == EXIT_PARSE and out.startswith("1 violations")


def test_parse_error_exit_code(files, capsys, tmp_path):
    bad = tmp_path / "bad.pmdp"
    bad.write_text("pmdp x\ninit nowhere\n")
    code, out, err = call(capsys, "scc", bad)
    assert code == EXIT_PARSE and out == "" and "error" in err


def test_usage_errors(files, capsys):
    assert call(capsys, "frobnicate")[0] == EXIT_USAGE
    assert call(capsys, "score", files["m.pmdp"])[0] == EXIT_USAGE
    assert call(capsys, "scc", "/nonexistent/file")[0] == EXIT_USAGE


def test_score_all_singletons_is_inf(files, capsys):
    code, out, _ = call(capsys, "score", files["m.pmdp"], "--policy", files["split.pol"], "--json")
    assert code == EXIT_OK
    assert json.loads(out)["rows"][0]["score"] == "inf"


def test_json_and_tsv_agree(files, capsys):
    _, js, _ = call(capsys, "score", files["m.pmdp"], "--policy", files["cyc.pol"], "--env", files["env.val"], "--json")
    _, tsv, _ = call(capsys, "score", files["m.pmdp"], "--policy", files["cyc.pol"], "--env", files["env.val"], "--tsv")
    row = json.loads(js)["rows"][0]
    header, cells = (line.split("\t") for line in tsv.splitlines())
    as_tsv = dict(zip(header, cells))
    for key in ("#C", "#SS", "S:#C"):
        assert str(row[key]) == as_tsv[key]
    for key in ("Bal", "Var", "score"):
        assert float(row[key]) == pytest.approx(float(as_tsv[key]), abs=1e-6)


def test_search_two_candidates(files, capsys):
    out_path = files["dir"] / "report.json"
    code, out, _ = call(capsys, "search", files["m.pmdp"], "--candidates", files["both.pol"], "--out", out_path)
    assert code == EXIT_OK and out.strip() == "cyc"
    report = json.loads(out_path.read_text())
    assert report["best"] == "cyc" and [r["policy"] for r in report["rows"]] == ["cyc", "split"]


def test_search_grid_is_deterministic(files, capsys, monkeypatch):
    outs = []
    for threads in ("1", "2", "1"):
        monkeypatch.setenv("PARTOPT_THREADS", threads)
        path = files["dir"] / f"grid{len(outs)}.tsv"
        assert call(capsys, "search", files["m.pmdp"], "--grid", "0.25", "--out", path)[0] == EXIT_OK
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]
    assert len(outs[0].decode().splitlines()) == 6


def test_search_all_candidates_failing(files, capsys):
    code, _, err = call(capsys, "search", files["m.pmdp"], "--mask", files["block.mask"],
                        "--candidates", files["both.pol"], "--out", files["dir"] / "r.tsv")
    assert code == EXIT_PIPELINE and "pipeline failure" in err


def test_prune_with_trace(files, capsys):
    code, out, err = call(capsys, "prune", files["m.pmdp"], "--mask", files["b.mask"], "--policy", files["cyc.pol"],
                          "--trace")
    assert code == EXIT_OK
    assert "state b" not in out and "trans a go" in out
    trace = json.loads(err)
    assert trace["removed_states_round2"] == ["b", "c"]


def test_scc_and_dot(files, capsys):
    dot = files["dir"] / "g.dot"
    code, out, _ = call(capsys, "scc", files["m.pmdp"], "--emit-dot", dot)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[0] == "id\tsize\tparams\tstates"
    assert len(lines) == 1 + 3
    assert dot.read_text().startswith("digraph")


def test_affected(files, capsys):
    code, out, _ = call(capsys, "affected", files["m.pmdp"], "--policy", files["cyc.pol"], "--changed", "e")
    assert code == EXIT_OK
    rows = out.splitlines()[1:]
    assert len(rows) == 1 and rows[0].split("\t")[2] == "e"
    assert call(capsys, "affected", files["m.pmdp"], "--policy", files["cyc.pol"], "--changed", "zz")[0] == EXIT_USAGE


def test_inputs_not_mutated(files, capsys):
    before = {k: open(v).read() for k, v in files.items() if k != "dir"}
    call(capsys, "prune", files["m.pmdp"], "--mask", files["b.mask"], "--policy", files["cyc.pol"])
    call(capsys, "search", files["m.pmdp"], "--candidates", files["both.pol"], "--out", files["dir"] / "x.tsv")
    assert before == {k: open(v).read() for k, v in files.items() if k != "dir"}


def test_gen_case_writes_model_masks_and_manifest(tmp_path, capsys):
    code, out, _ = call(capsys, "gen-case", "--out-dir", tmp_path / "case")
    assert code == EXIT_OK
    manifest = json.loads((tmp_path / "case" / "manifest.json").read_text())
    assert manifest["states"] == 1152 and len(manifest["categories"]) == 9
    for cat in manifest["categories"]:
        assert (tmp_path / "case" / cat["mask"]).exists()
    assert call(capsys, "validate", tmp_path / "case" / "case.pmdp")[1].startswith("0 violations")


def test_gen_case_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"n_sensors": 0}')
    assert call(capsys, "gen-case", "--config", cfg, "--out-dir", tmp_path / "o")[0] == EXIT_PARSE
